//! Experiment orchestration: configure, train, decode, evaluate, persist.
//!
//! A run writes a fresh directory under `out`:
//!
//! ```text
//! run-<unix-seconds>[-<n>]/
//!   config.txt         resolved configuration, flat `key = value`
//!   seed               the seed, alone on one line
//!   run_state.json     last stage reached and its status
//!   predictions.jsonl  {"process", "prediction", "stop_reason"?}
//!   metrics.json       MetricReport
//!   trace.jsonl        per-process decode traces (with `trace = true`)
//! ```

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::backend::{
    fine_tune, BackendOptions, Generator, GeneratorRegistry, Hyperparameters, DEFAULT_K,
};
use crate::baselines::{
    all_at_once_decode, all_at_once_pairs, top1_similar, zero_shot_decode, HashEmbedder,
};
use crate::coherence::{build_coherence_dataset, CoherenceScorer, LogisticScorer, ScorerRegistry};
use crate::data::{
    load_split, subsample_fewshot, DatasetSplit, Process, SplitName, SubEventSequence,
};
use crate::decoder::{
    decode, DecodeTrace, DecodingConfig, StopPolicy, StopReason, DEFAULT_MAX_STEPS,
};
use crate::error::{Error, Result};
use crate::metrics::{corpus_report, MetricReport};
use crate::prompting::expand_training_pairs;
use crate::util::fnv1a;

/// Environment variable naming the model artifact cache directory.
pub const CACHE_ENV: &str = "PROCWRITER_CACHE";

/// Dimension of the hashed embedder used for retrieval and embedding F-score.
pub const EMBED_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(rename = "subeventwriter")]
    SubeventWriter,
    AllAtOnce,
    #[serde(rename = "top1-similar")]
    Top1Similar,
    ZeroShot,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SubeventWriter => "subeventwriter",
            Method::AllAtOnce => "all-at-once",
            Method::Top1Similar => "top1-similar",
            Method::ZeroShot => "zero-shot",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subeventwriter" => Ok(Method::SubeventWriter),
            "all-at-once" => Ok(Method::AllAtOnce),
            "top1-similar" => Ok(Method::Top1Similar),
            "zero-shot" => Ok(Method::ZeroShot),
            other => Err(Error::Unknown {
                kind: "method",
                name: other.into(),
                available: "subeventwriter, all-at-once, top1-similar, zero-shot".into(),
            }),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub dataset: PathBuf,
    pub split: SplitName,
    pub backend: String,
    pub scorer: String,
    pub mock_script: Option<PathBuf>,
    pub k: usize,
    /// `None` means the default of 1.0 and suppresses the inapplicable-flag warning.
    pub lambda: Option<f64>,
    pub max_steps: usize,
    pub use_coherence: bool,
    pub stop_policy: StopPolicy,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub n_negatives: usize,
    pub fewshot: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::SubeventWriter,
            dataset: PathBuf::from("data"),
            split: SplitName::Test,
            backend: "knn".into(),
            scorer: "logistic".into(),
            mock_script: None,
            k: DEFAULT_K,
            lambda: None,
            max_steps: DEFAULT_MAX_STEPS,
            use_coherence: true,
            stop_policy: StopPolicy::Rerank,
            learning_rate: 5e-5,
            batch_size: 32,
            epochs: 4,
            n_negatives: 2,
            fewshot: None,
            seed: 42,
            out: PathBuf::from("runs"),
            trace: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid("config value", format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(
            "config value",
            format!("{key} = {value:?}: expected true/false"),
        )),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 19] = [
        "method",
        "dataset",
        "split",
        "backend",
        "scorer",
        "mock_script",
        "k",
        "lambda",
        "max_steps",
        "use_coherence",
        "stop_policy",
        "learning_rate",
        "batch_size",
        "epochs",
        "n_negatives",
        "fewshot",
        "seed",
        "out",
        "trace",
    ];

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(1.0)
    }

    pub fn decoding(&self) -> DecodingConfig {
        DecodingConfig {
            k: self.k,
            lambda: self.lambda(),
            max_steps: self.max_steps,
            use_coherence: self.use_coherence,
            stop_policy: self.stop_policy,
            ..DecodingConfig::default()
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters::new(self.learning_rate, self.batch_size, self.epochs)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "method" => self.method = value.parse()?,
            "dataset" => self.dataset = PathBuf::from(value),
            "split" => self.split = value.parse()?,
            "backend" => self.backend = value.to_string(),
            "scorer" => self.scorer = value.to_string(),
            "mock_script" => self.mock_script = (!value.is_empty()).then(|| PathBuf::from(value)),
            "k" => self.k = parse_value(key, value)?,
            "lambda" => {
                self.lambda = match value {
                    "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "use_coherence" => self.use_coherence = parse_bool(key, value)?,
            "stop_policy" => {
                self.stop_policy = match value {
                    "rerank" => StopPolicy::Rerank,
                    "bypass" => StopPolicy::Bypass,
                    _ => {
                        return Err(Error::invalid(
                            "config value",
                            format!("stop_policy = {value:?}: expected rerank or bypass"),
                        ))
                    }
                }
            }
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "n_negatives" => self.n_negatives = parse_value(key, value)?,
            "fewshot" => {
                self.fewshot = match value {
                    "" | "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "trace" => self.trace = parse_bool(key, value)?,
            other => {
                return Err(Error::Unknown {
                    kind: "config key",
                    name: other.to_string(),
                    available: Self::KEYS.join(", "),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding().validate()?;
        self.hyperparameters().validate()?;
        if self.n_negatives == 0 {
            return Err(Error::invalid("config", "n_negatives must be at least 1"));
        }
        Ok(())
    }

    /// Options that do not apply to the chosen method.
    pub fn inapplicable_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.method != Method::SubeventWriter {
            if let Some(lambda) = self.lambda {
                warnings.push(format!(
                    "lambda = {lambda} is ignored by method {}",
                    self.method
                ));
            }
            if !self.use_coherence {
                warnings.push(format!(
                    "use_coherence = false is ignored by method {}",
                    self.method
                ));
            }
        }
        warnings
    }

    /// Flat `key = value` text, one key per line in [`RunConfig::KEYS`] order.
    pub fn to_kv_string(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let values: [String; 19] = [
            self.method.to_string(),
            self.dataset.display().to_string(),
            self.split.to_string(),
            self.backend.clone(),
            self.scorer.clone(),
            opt_path(&self.mock_script),
            self.k.to_string(),
            self.lambda
                .map(|l| l.to_string())
                .unwrap_or_else(|| "none".into()),
            self.max_steps.to_string(),
            self.use_coherence.to_string(),
            match self.stop_policy {
                StopPolicy::Rerank => "rerank".into(),
                StopPolicy::Bypass => "bypass".into(),
            },
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.n_negatives.to_string(),
            self.fewshot
                .map(|n| n.to_string())
                .unwrap_or_else(|| "none".into()),
            self.seed.to_string(),
            self.out.display().to_string(),
            self.trace.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (key, value) in parse_kv(text)? {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    pub fn from_kv_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }
}

/// Parses flat `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Record {
            line: i + 1,
            field: "<line>".into(),
            message: format!("expected `key = value`, found {line:?}"),
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Grid file: `key = v1, v2, ...`. Field order is preserved and defines
/// the enumeration order (last field varies fastest).
pub fn parse_grid(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    Ok(parse_kv(text)?
        .into_iter()
        .map(|(k, v)| {
            let values = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            (k, values)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub process: String,
    pub prediction: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stop_reason: Option<StopReason>,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    process: &'a str,
    trace: &'a DecodeTrace,
}

#[derive(Serialize)]
struct RunState<'a> {
    stage: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricReport,
    pub run_dir: PathBuf,
    pub predictions: Vec<PredictionRecord>,
    pub warnings: Vec<String>,
}

/// Runs experiments against a set of registered backends and scorers.
#[derive(Default)]
pub struct Runner {
    pub generators: GeneratorRegistry,
    pub scorers: ScorerRegistry,
}

/// [`Runner::run`] with the built-in registries.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    Runner::default().run(config)
}

struct StageLog {
    path: PathBuf,
}

impl StageLog {
    fn write(&self, stage: &str, status: &str, error: Option<String>) -> Result<()> {
        let body = serde_json::to_string(&RunState {
            stage,
            status,
            error,
        })?;
        fs::write(&self.path, body + "\n").map_err(|e| Error::io(&self.path, e))
    }

    fn run<T>(&self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        self.write(stage, "running", None)?;
        f().map_err(|e| {
            // Best effort: the original error matters more than the state file.
            let _ = self.write(stage, "failed", Some(e.to_string()));
            Error::Stage {
                stage,
                source: Box::new(e),
            }
        })
    }
}

fn create_run_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default();
    for n in 0.. {
        let name = if n == 0 {
            format!("run-{secs}")
        } else {
            format!("run-{secs}-{n}")
        };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(dir, e)),
        }
    }
    unreachable!("unbounded range")
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut body = String::new();
    for record in records {
        body.push_str(&serde_json::to_string(record)?);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

impl Runner {
    fn check_names(&self, config: &RunConfig) -> Result<()> {
        match config.method {
            Method::Top1Similar => {}
            _ => self.generators.ensure(&config.backend)?,
        }
        if config.method == Method::SubeventWriter && config.use_coherence {
            self.scorers.ensure(&config.scorer)?;
        }
        Ok(())
    }

    /// Trains and evaluates one configuration and writes its artifacts.
    pub fn run(&self, config: &RunConfig) -> Result<RunOutcome> {
        config.validate()?;
        self.check_names(config)?;
        let warnings = config.inapplicable_warnings();
        for w in &warnings {
            log::warn!("{w}");
        }

        let run_dir = create_run_dir(&config.out)?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = run_dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        write("config.txt", config.to_kv_string())?;
        write("seed", format!("{}\n", config.seed))?;
        let stages = StageLog {
            path: run_dir.join("run_state.json"),
        };

        let (train, eval) = stages.run("load", || {
            let eval = load_split(&config.dataset, config.split)?;
            let train = match config.method {
                Method::ZeroShot => None,
                _ => {
                    let full = load_split(&config.dataset, SplitName::Train)?;
                    Some(match config.fewshot {
                        Some(n) => {
                            let shot = subsample_fewshot(&full, n, config.seed)?;
                            log::info!(
                                "few-shot: training on {} of {} examples",
                                shot.len(),
                                full.len()
                            );
                            shot
                        }
                        None => full,
                    })
                }
            };
            Ok((train, eval))
        })?;

        let generator = match config.method {
            Method::Top1Similar => None,
            _ => Some(stages.run("train-generator", || {
                self.train_generator(config, train.as_ref())
            })?),
        };
        let scorer = if config.method == Method::SubeventWriter && config.use_coherence {
            let train = train
                .as_ref()
                .expect("training split is loaded for this method");
            Some(stages.run("train-scorer", || self.train_scorer(config, train))?)
        } else {
            None
        };

        let embedder = HashEmbedder::new(EMBED_DIM);
        let decoded = stages.run("decode", || {
            let mut decoded: Vec<(SubEventSequence, Option<DecodeTrace>)> =
                Vec::with_capacity(eval.len());
            for (i, example) in eval.examples.iter().enumerate() {
                let process = &example.process;
                decoded.push(match config.method {
                    Method::SubeventWriter => {
                        let generator = generator.as_deref().expect("generator is trained");
                        let (seq, trace) =
                            decode(process, generator, scorer.as_deref(), &config.decoding())?;
                        (seq, Some(trace))
                    }
                    Method::AllAtOnce => (
                        all_at_once_decode(process, generator.as_deref().expect("generator"))?,
                        None,
                    ),
                    Method::ZeroShot => (
                        zero_shot_decode(process, generator.as_deref().expect("generator"))?,
                        None,
                    ),
                    Method::Top1Similar => {
                        let train = train.as_ref().expect("training split");
                        let seed = config.seed.wrapping_add(i as u64);
                        (top1_similar(process, train, &embedder, seed)?, None)
                    }
                });
            }
            Ok(decoded)
        })?;
        let predictions: Vec<SubEventSequence> = decoded.iter().map(|(s, _)| s.clone()).collect();

        let report = stages.run("evaluate", || {
            corpus_report(&predictions, &eval.examples, Some(&embedder))
        })?;

        let records: Vec<PredictionRecord> = eval
            .examples
            .iter()
            .zip(&decoded)
            .map(|(example, (seq, trace))| PredictionRecord {
                process: example.process.title().to_string(),
                prediction: seq.texts().map(str::to_string).collect(),
                stop_reason: trace.as_ref().map(|t| t.stop_reason),
            })
            .collect();

        stages.run("write", || {
            write_jsonl(&run_dir.join("predictions.jsonl"), &records)?;
            if config.trace {
                let rows: Vec<TraceRecord> = eval
                    .examples
                    .iter()
                    .zip(&decoded)
                    .filter_map(|(example, (_, trace))| {
                        trace.as_ref().map(|trace| TraceRecord {
                            process: example.process.title(),
                            trace,
                        })
                    })
                    .collect();
                write_jsonl(&run_dir.join("trace.jsonl"), &rows)?;
            }
            write(
                "metrics.json",
                serde_json::to_string_pretty(&report)? + "\n",
            )
        })?;
        stages.write("done", "ok", None)?;

        Ok(RunOutcome {
            report,
            run_dir,
            predictions: records,
            warnings,
        })
    }

    fn train_generator(
        &self,
        config: &RunConfig,
        train: Option<&DatasetSplit>,
    ) -> Result<Box<dyn Generator>> {
        let options = BackendOptions {
            mock_script: config.mock_script.clone(),
        };
        let mut generator = self.generators.create(&config.backend, &options)?;
        let Some(train) = train else {
            return Ok(generator);
        };
        let template = generator.template();
        let pairs: Vec<_> = match config.method {
            Method::SubeventWriter => train
                .examples
                .iter()
                .flat_map(|e| expand_training_pairs(e, &template))
                .collect(),
            Method::AllAtOnce => train.examples.iter().flat_map(all_at_once_pairs).collect(),
            Method::ZeroShot | Method::Top1Similar => return Ok(generator),
        };
        log::info!("fine-tuning `{}` on {} pairs", config.backend, pairs.len());
        fine_tune(generator.as_mut(), &pairs, &config.hyperparameters())?;
        Ok(generator)
    }

    fn train_scorer(
        &self,
        config: &RunConfig,
        train: &DatasetSplit,
    ) -> Result<Box<dyn CoherenceScorer>> {
        let mut scorer = self.scorers.create(&config.scorer)?;
        let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from).map(|root| {
            let key = fnv1a(
                format!(
                    "{}\n{}\n{}\n{}",
                    config.scorer,
                    config.n_negatives,
                    config.seed,
                    train.to_jsonl().unwrap_or_default()
                )
                .as_bytes(),
            );
            root.join("scorers")
                .join(format!("{}-{key:016x}.json", config.scorer))
        });
        if let Some(path) = &cache {
            if let Ok(state) = fs::read_to_string(path) {
                if scorer.load_state_json(&state).is_ok() {
                    log::info!("loaded cached scorer state from {}", path.display());
                    return Ok(scorer);
                }
            }
        }

        let examples =
            build_coherence_dataset(train, config.n_negatives, config.seed, &Default::default())?;
        let mut hp = LogisticScorer::default_hyperparameters();
        hp.set(LogisticScorer::NEGATIVES, config.n_negatives as f64);
        hp.set(LogisticScorer::SEED, config.seed as f64);
        log::info!(
            "training scorer `{}` on {} coherence examples",
            config.scorer,
            examples.len()
        );
        scorer.train(&examples, &hp)?;

        if let (Some(path), Some(state)) = (&cache, scorer.state_json()) {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(path, state).map_err(|e| Error::io(path, e))?;
        }
        Ok(scorer)
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub overrides: Vec<(String, String)>,
    pub config: RunConfig,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: RunConfig,
    pub leaderboard: Vec<GridEntry>,
}

/// Evaluates the cross-product of `grid` on the validation split and picks
/// the cell with the highest sum of text metrics (first wins ties).
pub fn grid_search(base: &RunConfig, grid: &[(String, Vec<String>)]) -> Result<GridOutcome> {
    let runner = Runner::default();
    grid_search_with(base, grid, |config| runner.run(config).map(|o| o.report))
}

/// [`grid_search`] with a caller-supplied evaluation function.
pub fn grid_search_with<F>(
    base: &RunConfig,
    grid: &[(String, Vec<String>)],
    mut evaluate: F,
) -> Result<GridOutcome>
where
    F: FnMut(&RunConfig) -> Result<MetricReport>,
{
    if grid.is_empty() || grid.iter().any(|(_, values)| values.is_empty()) {
        return Ok(GridOutcome {
            best: base.clone(),
            leaderboard: Vec::new(),
        });
    }
    let mut base = base.clone();
    base.split = SplitName::Valid;

    // Resolve every cell before running any.
    let mut cells = Vec::new();
    let mut odometer = vec![0usize; grid.len()];
    'outer: loop {
        let overrides: Vec<(String, String)> = grid
            .iter()
            .zip(&odometer)
            .map(|((key, values), &i)| (key.clone(), values[i].clone()))
            .collect();
        let mut config = base.clone();
        for (key, value) in &overrides {
            if key == "split" {
                return Err(Error::invalid("grid", "the split is fixed to valid"));
            }
            config.set(key, value)?;
        }
        config.validate()?;
        cells.push((overrides, config));

        for pos in (0..grid.len()).rev() {
            odometer[pos] += 1;
            if odometer[pos] < grid[pos].1.len() {
                continue 'outer;
            }
            odometer[pos] = 0;
        }
        break;
    }

    let mut leaderboard = Vec::with_capacity(cells.len());
    for (overrides, config) in cells {
        log::info!("grid cell {overrides:?}");
        let report = evaluate(&config)?;
        leaderboard.push(GridEntry {
            overrides,
            config,
            report,
        });
    }
    let mut best = 0;
    for (i, entry) in leaderboard.iter().enumerate() {
        if entry.report.text_metric_sum() > leaderboard[best].report.text_metric_sum() {
            best = i;
        }
    }
    Ok(GridOutcome {
        best: leaderboard[best].config.clone(),
        leaderboard,
    })
}

/// Scores a predictions file against a dataset split. Records are matched
/// by position and must name the same process.
pub fn evaluate_predictions(
    predictions: &Path,
    dataset: &Path,
    split: SplitName,
) -> Result<MetricReport> {
    let records = read_predictions(predictions)?;
    let eval = load_split(dataset, split)?;
    if records.len() != eval.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs examples",
            left: records.len(),
            right: eval.len(),
        });
    }
    let mut sequences = Vec::with_capacity(records.len());
    for (i, (record, example)) in records.iter().zip(&eval.examples).enumerate() {
        if record.process != example.process.title() {
            return Err(Error::Record {
                line: i + 1,
                field: "process".into(),
                message: format!(
                    "{:?} does not match dataset process {:?}",
                    record.process,
                    example.process.title()
                ),
            });
        }
        sequences.push(
            SubEventSequence::from_texts(record.prediction.iter().cloned()).map_err(|e| {
                Error::Record {
                    line: i + 1,
                    field: "prediction".into(),
                    message: e.to_string(),
                }
            })?,
        );
    }
    corpus_report(
        &sequences,
        &eval.examples,
        Some(&HashEmbedder::new(EMBED_DIM)),
    )
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            field: "<record>".into(),
            message: e.to_string(),
        })?;
        Process::new(record.process.clone()).map_err(|e| Error::Record {
            line: i + 1,
            field: "process".into(),
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
