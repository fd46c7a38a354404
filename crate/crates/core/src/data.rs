//! Domain types, JSONL dataset ingestion and few-shot subsampling.
//!
//! A dataset file holds one process per line:
//!
//! ```text
//! {"process": "cook eggs", "references": [["Place eggs in a pot of water.", "..."]]}
//! ```
//!
//! Splits live in a directory as `train.jsonl`, `valid.jsonl` and `test.jsonl`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Reserved output that ends a sequence. Never valid step content.
pub const STOP_LITERAL: &str = "none";

/// True when `text` is the stop literal, ignoring case and surrounding whitespace.
pub fn is_stop_literal(text: &str) -> bool {
    text.trim().eq_ignore_ascii_case(STOP_LITERAL)
}

/// A process title, e.g. "make a chocolate cake".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Process(String);

impl Process {
    pub fn new(title: impl Into<String>) -> Result<Self> {
        let title = title.into();
        if title.trim().is_empty() {
            return Err(Error::invalid("process", "title is empty"));
        }
        Ok(Process(title))
    }

    pub fn title(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Process {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Process::new(value)
    }
}

impl From<Process> for String {
    fn from(value: Process) -> Self {
        value.0
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One step of a process. Text is kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SubEvent(String);

impl SubEvent {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("sub-event", "text is empty"));
        }
        if is_stop_literal(&text) {
            return Err(Error::invalid(
                "sub-event",
                format!("{text:?} is the reserved stop literal"),
            ));
        }
        Ok(SubEvent(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SubEvent {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        SubEvent::new(value)
    }
}

impl From<SubEvent> for String {
    fn from(value: SubEvent) -> Self {
        value.0
    }
}

impl fmt::Display for SubEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Temporally ordered steps. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubEventSequence(Vec<SubEvent>);

impl SubEventSequence {
    pub fn new(events: Vec<SubEvent>) -> Self {
        SubEventSequence(events)
    }

    /// Builds a sequence from raw step strings, validating each.
    pub fn from_texts<I, S>(texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        texts
            .into_iter()
            .map(SubEvent::new)
            .collect::<Result<Vec<_>>>()
            .map(SubEventSequence)
    }

    pub fn events(&self) -> &[SubEvent] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, event: SubEvent) {
        self.0.push(event);
    }

    pub fn insert(&mut self, index: usize, event: SubEvent) {
        self.0.insert(index, event);
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(SubEvent::text)
    }

    /// A copy of the first `n` steps.
    pub fn prefix(&self, n: usize) -> SubEventSequence {
        SubEventSequence(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn into_events(self) -> Vec<SubEvent> {
        self.0
    }
}

impl FromIterator<SubEvent> for SubEventSequence {
    fn from_iter<T: IntoIterator<Item = SubEvent>>(iter: T) -> Self {
        SubEventSequence(iter.into_iter().collect())
    }
}

/// A process with one or more reference step sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExample")]
pub struct ProcessExample {
    pub process: Process,
    pub references: Vec<SubEventSequence>,
}

#[derive(Deserialize)]
struct RawExample {
    process: Process,
    references: Vec<SubEventSequence>,
}

impl TryFrom<RawExample> for ProcessExample {
    type Error = Error;
    fn try_from(raw: RawExample) -> Result<Self> {
        ProcessExample::new(raw.process, raw.references)
    }
}

impl ProcessExample {
    pub fn new(process: Process, references: Vec<SubEventSequence>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::invalid("example", "reference list is empty"));
        }
        if let Some(i) = references.iter().position(SubEventSequence::is_empty) {
            return Err(Error::invalid("example", format!("reference {i} is empty")));
        }
        Ok(ProcessExample {
            process,
            references,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Unknown {
                kind: "split",
                name: other.to_string(),
                available: "train, valid, test".into(),
            }),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub examples: Vec<ProcessExample>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, examples: Vec<ProcessExample>) -> Self {
        DatasetSplit { name, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Total number of reference sequences across examples.
    pub fn reference_count(&self) -> usize {
        self.examples.iter().map(|e| e.references.len()).sum()
    }

    /// One JSON object per line, in example order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for example in &self.examples {
            out.push_str(&serde_json::to_string(example)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let body = self.to_jsonl()?;
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(body.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Supported on-disk dataset formats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DatasetFormat {
    #[default]
    Jsonl,
}

/// Loads a split file. The split name comes from the file stem
/// (`train`, `valid` or `test`).
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<DatasetSplit> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid("dataset path", path.display().to_string()))?
        .parse::<SplitName>()?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let examples = match format {
        DatasetFormat::Jsonl => read_jsonl(BufReader::new(file), path)?,
    };
    Ok(DatasetSplit::new(name, examples))
}

/// Loads `<dir>/<split>.jsonl`.
pub fn load_split(dir: &Path, split: SplitName) -> Result<DatasetSplit> {
    load_dataset(&dir.join(split.file_name()), DatasetFormat::Jsonl)
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<ProcessExample>> {
    let mut examples = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(parse_record(&line, index + 1)?);
    }
    Ok(examples)
}

/// Parses one JSONL record, reporting the offending field on failure.
pub fn parse_record(line: &str, line_no: usize) -> Result<ProcessExample> {
    let fail = |field: String, message: String| Error::Record {
        line: line_no,
        field,
        message,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| fail("<record>".into(), e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| fail("<record>".into(), "expected a JSON object".into()))?;

    let title = object
        .get("process")
        .ok_or_else(|| fail("process".into(), "missing".into()))?
        .as_str()
        .ok_or_else(|| fail("process".into(), "expected a string".into()))?;
    let process = Process::new(title).map_err(|e| fail("process".into(), e.to_string()))?;

    let references = object
        .get("references")
        .ok_or_else(|| fail("references".into(), "missing".into()))?
        .as_array()
        .ok_or_else(|| fail("references".into(), "expected an array".into()))?;
    if references.is_empty() {
        return Err(fail("references".into(), "reference list is empty".into()));
    }

    let mut parsed = Vec::with_capacity(references.len());
    for (r, reference) in references.iter().enumerate() {
        let steps = reference
            .as_array()
            .ok_or_else(|| fail(format!("references[{r}]"), "expected an array".into()))?;
        if steps.is_empty() {
            return Err(fail(
                format!("references[{r}]"),
                "reference is empty".into(),
            ));
        }
        let mut events = Vec::with_capacity(steps.len());
        for (s, step) in steps.iter().enumerate() {
            let field = || format!("references[{r}][{s}]");
            let text = step
                .as_str()
                .ok_or_else(|| fail(field(), "expected a string".into()))?;
            events.push(SubEvent::new(text).map_err(|e| fail(field(), e.to_string()))?);
        }
        parsed.push(SubEventSequence::new(events));
    }
    ProcessExample::new(process, parsed).map_err(|e| fail("references".into(), e.to_string()))
}

/// Draws `n` examples uniformly without replacement, keeping their
/// original relative order. Deterministic for a fixed seed.
pub fn subsample_fewshot(split: &DatasetSplit, n: usize, seed: u64) -> Result<DatasetSplit> {
    if n > split.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: split.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, split.len(), n).into_vec();
    picked.sort_unstable();
    let examples = picked
        .into_iter()
        .map(|i| split.examples[i].clone())
        .collect();
    Ok(DatasetSplit::new(split.name, examples))
}

#[cfg(test)]
mod tests {
    use super::*;

    const COOK_EGGS: &str = r#"{"process": "cook eggs", "references": [["Place eggs in a pot of water.", "Bring the water to a boil.", "Turn off the heat and place the eggs in cold water."]]}"#;

    fn write_split(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        fs::write(&path, body).unwrap();
        path
    }

    fn synthetic_split(n: usize) -> DatasetSplit {
        let examples = (0..n)
            .map(|i| {
                ProcessExample::new(
                    Process::new(format!("task {i}")).unwrap(),
                    vec![SubEventSequence::from_texts([format!("Do thing {i}.")]).unwrap()],
                )
                .unwrap()
            })
            .collect();
        DatasetSplit::new(SplitName::Train, examples)
    }

    #[test]
    fn loads_cook_eggs_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_split(dir.path(), "train.jsonl", &format!("{COOK_EGGS}\n"));
        let split = load_dataset(&path, DatasetFormat::Jsonl).unwrap();
        assert_eq!(split.name, SplitName::Train);
        assert_eq!(split.len(), 1);
        let example = &split.examples[0];
        assert_eq!(example.process.title(), "cook eggs");
        assert_eq!(example.references.len(), 1);
        assert_eq!(example.references[0].len(), 3);
        assert_eq!(
            example.references[0].events()[2].text(),
            "Turn off the heat and place the eggs in cold water."
        );
    }

    #[test]
    fn empty_reference_list_is_a_record_error() {
        let err = parse_record(r#"{"process": "x", "references": []}"#, 7).unwrap_err();
        match err {
            Error::Record { line, field, .. } => {
                assert_eq!(line, 7);
                assert_eq!(field, "references");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_split(dir.path(), "test.jsonl", "");
        let split = load_dataset(&path, DatasetFormat::Jsonl).unwrap();
        assert_eq!(split.name, SplitName::Test);
        assert!(split.is_empty());
    }

    #[test]
    fn malformed_line_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{COOK_EGGS}\n{}\n",
            r#"{"process": "x", "references": [["ok", 3]]}"#
        );
        let path = write_split(dir.path(), "valid.jsonl", &body);
        let err = load_dataset(&path, DatasetFormat::Jsonl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("references[0][1]"), "{msg}");
    }

    #[test]
    fn stop_literal_step_is_rejected() {
        let err =
            parse_record(r#"{"process": "x", "references": [["a", " None "]]}"#, 1).unwrap_err();
        assert!(err.to_string().contains("references[0][1]"));
    }

    #[test]
    fn missing_process_and_blank_title() {
        let err = parse_record(r#"{"references": [["a"]]}"#, 3).unwrap_err();
        assert!(err.to_string().contains("`process`"));
        let err = parse_record(r#"{"process": "  ", "references": [["a"]]}"#, 3).unwrap_err();
        assert!(err.to_string().contains("`process`"));
    }

    #[test]
    fn unknown_split_stem_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_split(dir.path(), "dev.jsonl", "");
        assert!(load_dataset(&path, DatasetFormat::Jsonl).is_err());
    }

    #[test]
    fn serde_rejects_invalid_values() {
        assert!(serde_json::from_str::<SubEvent>("\"NONE\"").is_err());
        assert!(serde_json::from_str::<Process>("\"\"").is_err());
        assert!(
            serde_json::from_str::<ProcessExample>(r#"{"process":"a","references":[[]]}"#).is_err()
        );
    }

    #[test]
    fn fewshot_identity_and_empty() {
        let split = synthetic_split(20);
        assert_eq!(subsample_fewshot(&split, 20, 3).unwrap(), split);
        assert!(subsample_fewshot(&split, 0, 3).unwrap().is_empty());
        assert!(matches!(
            subsample_fewshot(&split, 21, 3),
            Err(Error::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn fewshot_5000_of_full_train_size() {
        let split = synthetic_split(73_847);
        let shot = subsample_fewshot(&split, 5_000, 11).unwrap();
        assert_eq!(shot.len(), 5_000);
    }
}
