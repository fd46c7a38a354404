//! Comparison systems: whole-sequence generation, nearest-title retrieval
//! and zero-shot prompting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::Generator;
use crate::data::{
    is_stop_literal, DatasetSplit, Process, ProcessExample, SubEvent, SubEventSequence,
};
use crate::error::{Error, Result};
use crate::prompting::TrainingPair;
use crate::util::{fnv1a, tokenize};

/// Joins steps in whole-sequence training targets.
pub const STEP_SEPARATOR: &str = " || ";

pub fn join_steps(steps: &SubEventSequence) -> String {
    steps.texts().collect::<Vec<_>>().join(STEP_SEPARATOR)
}

/// Splits a whole-sequence generation. Blank pieces and stop literals are dropped.
pub fn split_steps(text: &str) -> SubEventSequence {
    text.split(STEP_SEPARATOR.trim())
        .map(str::trim)
        .filter(|s| !s.is_empty() && !is_stop_literal(s))
        .filter_map(|s| SubEvent::new(s).ok())
        .collect()
}

/// Input of the whole-sequence model: `How to {title}?`.
pub fn all_at_once_prompt(process: &Process) -> String {
    format!("How to {}?", process.title())
}

/// One (question → joined steps) pair per reference.
pub fn all_at_once_pairs(example: &ProcessExample) -> Vec<TrainingPair> {
    example
        .references
        .iter()
        .map(|r| TrainingPair {
            input: all_at_once_prompt(&example.process),
            output: join_steps(r),
        })
        .collect()
}

/// A single generator call whose output is split on [`STEP_SEPARATOR`].
pub fn all_at_once_decode(
    process: &Process,
    generator: &dyn Generator,
) -> Result<SubEventSequence> {
    let top = generator.topk(&all_at_once_prompt(process), 1)?;
    Ok(top
        .first()
        .map(|c| split_steps(&c.text))
        .unwrap_or_default())
}

pub fn zero_shot_prompt(process: &Process) -> String {
    format!(
        "How to {}? Generate the events to solve it.",
        process.title()
    )
}

/// Prompts an untuned model and segments its free-form answer into steps.
pub fn zero_shot_decode(process: &Process, generator: &dyn Generator) -> Result<SubEventSequence> {
    let top = generator.topk(&zero_shot_prompt(process), 1)?;
    Ok(top
        .first()
        .map(|c| segment_steps(&c.text))
        .unwrap_or_default())
}

/// Line then sentence segmentation. Leading list markers such as `1.`,
/// `2)`, `-` or `Step 3:` are removed.
pub fn segment_steps(text: &str) -> SubEventSequence {
    let mut out = SubEventSequence::default();
    for line in text.lines() {
        let line = strip_list_marker(line.trim());
        for sentence in split_sentences(line) {
            if is_stop_literal(&sentence) {
                continue;
            }
            if let Ok(event) = SubEvent::new(sentence) {
                out.push(event);
            }
        }
    }
    out
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let lower = line.to_ascii_lowercase();
    let rest = if lower.starts_with("step ") {
        &line[5..]
    } else {
        line
    };
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let after = &rest[digits..];
        if let Some(stripped) = after
            .strip_prefix('.')
            .or_else(|| after.strip_prefix(')'))
            .or_else(|| after.strip_prefix(':'))
        {
            return stripped.trim_start();
        }
    }
    line
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        current.push(ch);
        if matches!(ch, '.' | '!' | '?') && chars.peek().is_none_or(|c| c.is_whitespace()) {
            let sentence = current.trim();
            if !sentence.is_empty() {
                out.push(sentence.to_string());
            }
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        out.push(current.trim().to_string());
    }
    out
}

/// Text embedder used for retrieval and embedding-based scoring.
pub trait Embedder {
    fn dim(&self) -> usize;

    fn embed_token(&self, token: &str) -> Vec<f64>;

    /// Sum of token vectors.
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for token in tokenize(text) {
            for (a, v) in acc.iter_mut().zip(self.embed_token(&token)) {
                *a += v;
            }
        }
        acc
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Deterministic pseudo-random token vectors seeded by a hash of the token.
/// Distinct tokens get nearly orthogonal vectors for large `dim`.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        HashEmbedder { dim: dim.max(1) }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_token(&self, token: &str) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

/// Returns a reference of the training process whose title embedding is
/// most similar to `process`. Ties go to the lowest index. References of
/// every training example sharing the winning title are pooled and one is
/// picked with a seeded RNG.
pub fn top1_similar(
    process: &Process,
    train: &DatasetSplit,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<SubEventSequence> {
    if train.is_empty() {
        return Err(Error::invalid("training split", "is empty"));
    }
    let query = embedder.embed(process.title());
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, example) in train.examples.iter().enumerate() {
        let sim = cosine(&query, &embedder.embed(example.process.title()));
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    let title = train.examples[best].process.title();
    let pool: Vec<&SubEventSequence> = train
        .examples
        .iter()
        .filter(|e| e.process.title() == title)
        .flat_map(|e| &e.references)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((*pool.choose(&mut rng).expect("non-empty pool")).clone())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::backend::{Candidate, FnGenerator};
    use crate::data::SplitName;

    fn seq(steps: &[&str]) -> SubEventSequence {
        SubEventSequence::from_texts(steps.iter().copied()).unwrap()
    }

    struct TableEmbedder(HashMap<&'static str, Vec<f64>>);

    impl Embedder for TableEmbedder {
        fn dim(&self) -> usize {
            2
        }
        fn embed_token(&self, _: &str) -> Vec<f64> {
            vec![0.0; 2]
        }
        fn embed(&self, text: &str) -> Vec<f64> {
            self.0.get(text).cloned().unwrap_or(vec![0.0, 0.0])
        }
    }

    fn split(titles: &[&str]) -> DatasetSplit {
        DatasetSplit::new(
            SplitName::Train,
            titles
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    ProcessExample::new(
                        Process::new(*t).unwrap(),
                        vec![seq(&[&format!("Step of {i}.")])],
                    )
                    .unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn all_at_once_splits_joined_generation() {
        let steps = seq(&[
            "Place eggs in a pot of water.",
            "Bring the water to a boil.",
            "Turn off the heat and place the eggs in cold water.",
        ]);
        let joined = join_steps(&steps);
        let g = FnGenerator::new(move |prompt, _| {
            assert_eq!(prompt, "How to cook eggs?");
            vec![Candidate::new(joined.clone(), -1.0)]
        });
        let out = all_at_once_decode(&Process::new("cook eggs").unwrap(), &g).unwrap();
        assert_eq!(out, steps);

        let empty = FnGenerator::new(|_, _| vec![Candidate::new("", -1.0)]);
        assert!(all_at_once_decode(&Process::new("x").unwrap(), &empty)
            .unwrap()
            .is_empty());
        let nothing = FnGenerator::new(|_, _| Vec::new());
        assert!(all_at_once_decode(&Process::new("x").unwrap(), &nothing)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn zero_shot_prompt_wording() {
        assert_eq!(
            zero_shot_prompt(&Process::new("make a chocolate cake").unwrap()),
            "How to make a chocolate cake? Generate the events to solve it."
        );
    }

    #[test]
    fn sentence_segmentation() {
        assert_eq!(
            segment_steps("A. B. C.").texts().collect::<Vec<_>>(),
            ["A.", "B.", "C."]
        );
        assert!(segment_steps("").is_empty());
        assert_eq!(
            segment_steps("1. Preheat the oven to 3.5 units.\n2) Mix.\n- Bake!\nStep 4: Serve")
                .texts()
                .collect::<Vec<_>>(),
            ["Preheat the oven to 3.5 units.", "Mix.", "Bake!", "Serve"]
        );
    }

    #[test]
    fn zero_shot_uses_segmenter() {
        let g = FnGenerator::new(|_, _| vec![Candidate::new("Mix. Bake. Eat.", -4.0)]);
        let out = zero_shot_decode(&Process::new("make a cake").unwrap(), &g).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn top1_identical_title() {
        let train = split(&["cook eggs", "paint a wall", "buy a house"]);
        let out = top1_similar(
            &Process::new("paint a wall").unwrap(),
            &train,
            &HashEmbedder::default(),
            0,
        )
        .unwrap();
        assert_eq!(out, train.examples[1].references[0]);
    }

    #[test]
    fn top1_orthogonal_vectors() {
        let train = split(&["a", "b"]);
        let table = TableEmbedder(HashMap::from([
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("q", vec![0.1, 0.9]),
        ]));
        let out = top1_similar(&Process::new("q").unwrap(), &train, &table, 0).unwrap();
        assert_eq!(out, train.examples[1].references[0]);
    }

    #[test]
    fn top1_zero_vector_picks_first() {
        let train = split(&["a", "b"]);
        let table = TableEmbedder(HashMap::from([
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
        ]));
        let out = top1_similar(&Process::new("zero").unwrap(), &train, &table, 0).unwrap();
        assert_eq!(out, train.examples[0].references[0]);
        assert!(top1_similar(
            &Process::new("zero").unwrap(),
            &DatasetSplit::new(SplitName::Train, vec![]),
            &table,
            0
        )
        .is_err());
    }

    #[test]
    fn top1_pools_references_of_same_title() {
        let mut train = split(&["cook eggs", "cook eggs"]);
        train.examples[1].references.push(seq(&["Another way."]));
        let g = HashEmbedder::default();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..40 {
            let out = top1_similar(&Process::new("cook eggs").unwrap(), &train, &g, seed).unwrap();
            seen.insert(out);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn cosine_properties() {
        let v = [0.3, -2.0, 5.0];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = v.iter().map(|x| x * 7.5).collect();
        let w = [1.0, 1.0, 0.0];
        assert!((cosine(&v, &w) - cosine(&scaled, &w)).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0, 0.0], &w), 0.0);
    }
}
