//! Coherence controller: synthetic negatives, the class-balanced loss,
//! the scorer contract and controller accuracy evaluation.
//!
//! Positives are human-written sequences. Local coherence is broken by
//! copying one step to a random gap; global coherence by inserting a step
//! taken from a process with a different title.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Hyperparameters;
use crate::data::{DatasetSplit, Process, ProcessExample, SubEventSequence};
use crate::error::{Error, Result};
use crate::prompting::{parse_prompt, render_coherence_text, PromptTemplate};
use crate::util::content_tokens;

/// Scores are clamped to `[SCORE_EPSILON, 1 - SCORE_EPSILON]` before the loss.
pub const SCORE_EPSILON: f64 = 1e-7;

/// Default decision threshold on coherence scores.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    None,
    Duplicate,
    Irrelevant,
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Corruption::None => "none",
            Corruption::Duplicate => "duplicate",
            Corruption::Irrelevant => "irrelevant",
        })
    }
}

/// A rendered process + steps text with its coherence label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCoherenceExample")]
pub struct CoherenceExample {
    pub text: String,
    pub label: u8,
    pub corruption: Corruption,
}

#[derive(Deserialize)]
struct RawCoherenceExample {
    text: String,
    label: u8,
    corruption: Corruption,
}

impl TryFrom<RawCoherenceExample> for CoherenceExample {
    type Error = Error;
    fn try_from(raw: RawCoherenceExample) -> Result<Self> {
        let example = CoherenceExample {
            text: raw.text,
            label: raw.label,
            corruption: raw.corruption,
        };
        example.check()?;
        Ok(example)
    }
}

impl CoherenceExample {
    pub fn positive(text: String) -> Self {
        CoherenceExample {
            text,
            label: 1,
            corruption: Corruption::None,
        }
    }

    pub fn negative(text: String, corruption: Corruption) -> Result<Self> {
        let example = CoherenceExample {
            text,
            label: 0,
            corruption,
        };
        example.check()?;
        Ok(example)
    }

    fn check(&self) -> Result<()> {
        let consistent = match self.label {
            1 => self.corruption == Corruption::None,
            0 => self.corruption != Corruption::None,
            _ => false,
        };
        if consistent {
            Ok(())
        } else {
            Err(Error::invalid(
                "coherence example",
                format!("label {} with corruption {}", self.label, self.corruption),
            ))
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Copies a random step into a random gap (any of the `m + 1` positions).
pub fn corrupt_local<R: Rng + ?Sized>(
    seq: &SubEventSequence,
    rng: &mut R,
) -> Result<SubEventSequence> {
    if seq.is_empty() {
        return Err(Error::invalid(
            "sequence",
            "cannot corrupt an empty sequence",
        ));
    }
    let source = rng.gen_range(0..seq.len());
    let position = rng.gen_range(0..=seq.len());
    let mut out = seq.clone();
    out.insert(position, seq.events()[source].clone());
    Ok(out)
}

/// Inserts, at a random gap, a step drawn from a donor whose title differs
/// from `self_process`.
pub fn corrupt_global<R: Rng + ?Sized>(
    seq: &SubEventSequence,
    donor_pool: &[ProcessExample],
    self_process: &Process,
    rng: &mut R,
) -> Result<SubEventSequence> {
    let donors: Vec<&ProcessExample> = donor_pool
        .iter()
        .filter(|d| d.process.title() != self_process.title())
        .collect();
    let donor = donors
        .choose(rng)
        .ok_or_else(|| Error::NoEligibleDonor(self_process.title().to_string()))?;
    let reference = donor
        .references
        .choose(rng)
        .expect("examples have at least one reference");
    let step = reference
        .events()
        .choose(rng)
        .expect("references have at least one step");
    let position = rng.gen_range(0..=seq.len());
    let mut out = seq.clone();
    out.insert(position, step.clone());
    Ok(out)
}

/// For every reference: one positive, `n` duplicate negatives and `n`
/// irrelevant negatives, all rendered as coherence texts. The donor pool
/// is the split itself.
pub fn build_coherence_dataset(
    split: &DatasetSplit,
    n: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<Vec<CoherenceExample>> {
    if n == 0 {
        return Err(Error::invalid("negatives per type", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(split.reference_count() * (1 + 2 * n));
    for example in &split.examples {
        for reference in &example.references {
            out.push(CoherenceExample::positive(render_coherence_text(
                &example.process,
                reference,
                template,
            )?));
            for _ in 0..n {
                let corrupted = corrupt_local(reference, &mut rng)?;
                out.push(CoherenceExample::negative(
                    render_coherence_text(&example.process, &corrupted, template)?,
                    Corruption::Duplicate,
                )?);
            }
            for _ in 0..n {
                let corrupted =
                    corrupt_global(reference, &split.examples, &example.process, &mut rng)?;
                out.push(CoherenceExample::negative(
                    render_coherence_text(&example.process, &corrupted, template)?,
                    Corruption::Irrelevant,
                )?);
            }
        }
    }
    Ok(out)
}

/// Balanced held-out sets: `local` pairs each positive with one duplicate
/// negative, `global` with one irrelevant negative.
pub fn build_controller_test_sets(
    split: &DatasetSplit,
    seed: u64,
    template: &PromptTemplate,
) -> Result<(Vec<CoherenceExample>, Vec<CoherenceExample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut local, mut global) = (Vec::new(), Vec::new());
    for example in &split.examples {
        for reference in &example.references {
            let positive = render_coherence_text(&example.process, reference, template)?;
            local.push(CoherenceExample::positive(positive.clone()));
            global.push(CoherenceExample::positive(positive));
            let dup = corrupt_local(reference, &mut rng)?;
            local.push(CoherenceExample::negative(
                render_coherence_text(&example.process, &dup, template)?,
                Corruption::Duplicate,
            )?);
            let irr = corrupt_global(reference, &split.examples, &example.process, &mut rng)?;
            global.push(CoherenceExample::negative(
                render_coherence_text(&example.process, &irr, template)?,
                Corruption::Irrelevant,
            )?);
        }
    }
    Ok((local, global))
}

pub fn write_coherence_jsonl(path: &Path, examples: &[CoherenceExample]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for example in examples {
        let line = serde_json::to_string(example)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_coherence_jsonl(path: &Path) -> Result<Vec<CoherenceExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            field: "<record>".into(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Cross-entropy with the negative term divided by `2n`:
/// `-(y ln s + (1 - y) ln(1 - s) / (2n))`.
pub fn coherence_loss(label: u8, score: f64, n: usize) -> Result<f64> {
    check_loss_args(label, score, n)?;
    let y = f64::from(label);
    let neg_weight = 1.0 / (2.0 * n as f64);
    Ok(-(y * score.ln() + neg_weight * (1.0 - y) * (1.0 - score).ln()))
}

/// Derivative of [`coherence_loss`] with respect to the score.
pub fn coherence_loss_grad(label: u8, score: f64, n: usize) -> Result<f64> {
    check_loss_args(label, score, n)?;
    let y = f64::from(label);
    let neg_weight = 1.0 / (2.0 * n as f64);
    Ok(-(y / score) + neg_weight * (1.0 - y) / (1.0 - score))
}

fn check_loss_args(label: u8, score: f64, n: usize) -> Result<()> {
    if label > 1 {
        return Err(Error::invalid("label", format!("{label} is not 0 or 1")));
    }
    if n == 0 {
        return Err(Error::invalid("negatives per type", "must be at least 1"));
    }
    if !(score > 0.0 && score < 1.0) {
        return Err(Error::ScoreOutOfRange(score));
    }
    Ok(())
}

pub fn clamp_score(score: f64) -> f64 {
    score.clamp(SCORE_EPSILON, 1.0 - SCORE_EPSILON)
}

/// A coherence scorer: higher means more coherent, range `[0, 1]`.
pub trait CoherenceScorer {
    fn score(&self, text: &str) -> Result<f64>;

    fn train(
        &mut self,
        examples: &[CoherenceExample],
        hyperparameters: &Hyperparameters,
    ) -> Result<()>;

    /// Serialised trained state, when the scorer supports caching.
    fn state_json(&self) -> Option<String> {
        None
    }

    /// Restores state written by [`CoherenceScorer::state_json`].
    fn load_state_json(&mut self, _state: &str) -> Result<()> {
        Err(Error::invalid("scorer", "state loading is not supported"))
    }
}

/// Rule-based scorer: 0 when any step text repeats, 1 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct DuplicateOracleScorer;

impl DuplicateOracleScorer {
    pub fn new() -> Self {
        DuplicateOracleScorer
    }
}

impl CoherenceScorer for DuplicateOracleScorer {
    fn score(&self, text: &str) -> Result<f64> {
        let steps = split_coherence_text(text).1;
        let mut seen = HashSet::new();
        let repeated = steps.iter().any(|s| !seen.insert(s.trim().to_lowercase()));
        Ok(if repeated { 0.0 } else { 1.0 })
    }

    fn train(&mut self, _examples: &[CoherenceExample], _hp: &Hyperparameters) -> Result<()> {
        Ok(())
    }
}

fn split_coherence_text(text: &str) -> (String, Vec<String>) {
    match parse_prompt(text, &PromptTemplate::default()) {
        Ok(parsed) => (parsed.title, parsed.steps),
        Err(_) => (String::new(), vec![text.to_string()]),
    }
}

const FEATURE_NAMES: [&str; 7] = [
    "bias",
    "max_pair_overlap",
    "exact_repeat",
    "min_cohesion",
    "mean_cohesion",
    "isolated_fraction",
    "min_title_overlap",
];

/// Relational features of a coherence text. Every feature lies in `[0, 1]`.
fn coherence_features(text: &str) -> [f64; 7] {
    let (title, steps) = split_coherence_text(text);
    let title: HashSet<String> = content_tokens(&title).into_iter().collect();
    let bags: Vec<HashSet<String>> = steps
        .iter()
        .map(|s| content_tokens(s).into_iter().collect())
        .collect();

    let overlap = |a: &HashSet<String>, b: &HashSet<String>| -> f64 {
        let smaller = a.len().min(b.len());
        if smaller == 0 {
            0.0
        } else {
            a.intersection(b).count() as f64 / smaller as f64
        }
    };
    let jaccard = |a: &HashSet<String>, b: &HashSet<String>| -> f64 {
        let union = a.union(b).count();
        if union == 0 {
            0.0
        } else {
            a.intersection(b).count() as f64 / union as f64
        }
    };

    let mut max_pair = 0.0f64;
    let mut exact_repeat = 0.0;
    let mut seen = HashSet::new();
    for (i, step) in steps.iter().enumerate() {
        if !seen.insert(step.trim().to_lowercase()) {
            exact_repeat = 1.0;
        }
        for j in 0..i {
            max_pair = max_pair.max(jaccard(&bags[i], &bags[j]));
        }
    }

    let cohesion: Vec<f64> = (0..bags.len())
        .map(|i| {
            let with_steps = (0..bags.len())
                .filter(|&j| j != i)
                .map(|j| overlap(&bags[i], &bags[j]))
                .fold(0.0, f64::max);
            with_steps.max(overlap(&bags[i], &title))
        })
        .collect();
    let n = cohesion.len().max(1) as f64;
    let min_cohesion = cohesion.iter().copied().fold(1.0, f64::min);
    let mean_cohesion = cohesion.iter().sum::<f64>() / n;
    let isolated = cohesion.iter().filter(|&&c| c == 0.0).count() as f64 / n;
    let min_title = bags.iter().map(|b| overlap(b, &title)).fold(1.0, f64::min);

    [
        1.0,
        max_pair,
        exact_repeat,
        if cohesion.is_empty() {
            0.0
        } else {
            min_cohesion
        },
        mean_cohesion,
        isolated,
        if bags.is_empty() { 0.0 } else { min_title },
    ]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic regression over relational text features (step repetition,
/// lexical cohesion between steps and with the title), trained with
/// mini-batch gradient descent on the balanced coherence loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticScorer {
    weights: Vec<f64>,
}

impl LogisticScorer {
    pub const NEGATIVES: &'static str = "n_negatives";
    pub const SEED: &'static str = "seed";

    pub fn new() -> Self {
        LogisticScorer {
            weights: vec![0.0; FEATURE_NAMES.len()],
        }
    }

    /// Learning rate 0.5, batch size 16, 60 epochs.
    pub fn default_hyperparameters() -> Hyperparameters {
        Hyperparameters::new(0.5, 16, 60)
    }

    pub fn weights(&self) -> BTreeMap<&'static str, f64> {
        FEATURE_NAMES
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .collect()
    }
}

impl Default for LogisticScorer {
    fn default() -> Self {
        Self::new()
    }
}

impl CoherenceScorer for LogisticScorer {
    fn score(&self, text: &str) -> Result<f64> {
        let x = coherence_features(text);
        let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        Ok(sigmoid(z))
    }

    fn train(&mut self, examples: &[CoherenceExample], hp: &Hyperparameters) -> Result<()> {
        hp.validate()?;
        if examples.is_empty() {
            return Err(Error::invalid("training data", "no coherence examples"));
        }
        let positives = examples.iter().filter(|e| e.is_positive()).count();
        let negatives = examples.len() - positives;
        let n = match hp.get(Self::NEGATIVES) {
            Some(v) => v as usize,
            None => ((negatives as f64) / (2.0 * positives.max(1) as f64)).round() as usize,
        }
        .max(1);

        let features: Vec<[f64; 7]> = examples
            .iter()
            .map(|e| coherence_features(&e.text))
            .collect();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(hp.get(Self::SEED).unwrap_or(0.0) as u64);
        let lr = hp.learning_rate();
        let batch = hp.batch_size().max(1);

        for _ in 0..hp.epochs() {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let mut grad = [0.0; 7];
                for &i in chunk {
                    let x = &features[i];
                    let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
                    let s = clamp_score(sigmoid(z));
                    // dL/dz = dL/ds * ds/dz
                    let dz = coherence_loss_grad(examples[i].label, s, n)? * s * (1.0 - s);
                    for (g, v) in grad.iter_mut().zip(x) {
                        *g += dz * v;
                    }
                }
                let scale = lr / chunk.len() as f64;
                for (w, g) in self.weights.iter_mut().zip(grad) {
                    *w -= scale * g;
                }
            }
        }
        log::debug!("logistic scorer weights: {:?}", self.weights());
        Ok(())
    }

    fn state_json(&self) -> Option<String> {
        serde_json::to_string(self).ok()
    }

    fn load_state_json(&mut self, state: &str) -> Result<()> {
        let loaded: LogisticScorer = serde_json::from_str(state)?;
        if loaded.weights.len() != FEATURE_NAMES.len() {
            return Err(Error::invalid("scorer state", "wrong number of weights"));
        }
        *self = loaded;
        Ok(())
    }
}

type ScorerFactory = Box<dyn Fn() -> Box<dyn CoherenceScorer> + Send + Sync>;

/// Coherence scorers by name.
pub struct ScorerRegistry {
    factories: BTreeMap<String, ScorerFactory>,
}

impl ScorerRegistry {
    /// `oracle` ([`DuplicateOracleScorer`]) and `logistic` ([`LogisticScorer`]).
    pub fn builtin() -> Self {
        let mut registry = ScorerRegistry {
            factories: BTreeMap::new(),
        };
        registry.register("oracle", || Box::new(DuplicateOracleScorer::new()));
        registry.register("logistic", || Box::new(LogisticScorer::new()));
        registry
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn() -> Box<dyn CoherenceScorer> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn ensure(&self, name: &str) -> Result<()> {
        if self.factories.contains_key(name) {
            Ok(())
        } else {
            Err(Error::Unknown {
                kind: "scorer",
                name: name.to_string(),
                available: self
                    .factories
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", "),
            })
        }
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn CoherenceScorer>> {
        self.ensure(name)?;
        Ok((self.factories[name])())
    }
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerAccuracy {
    pub local: f64,
    pub global: f64,
    pub all: f64,
}

/// Accuracy of `score >= threshold` against labels on the local-only and
/// global-only sets, and on both pooled. Each set must be 1:1 balanced.
pub fn evaluate_controller(
    scorer: &dyn CoherenceScorer,
    local: &[CoherenceExample],
    global: &[CoherenceExample],
    threshold: f64,
) -> Result<ControllerAccuracy> {
    check_balance("local test set", local)?;
    check_balance("global test set", global)?;
    let correct = |set: &[CoherenceExample]| -> Result<usize> {
        let mut hits = 0;
        for example in set {
            let predicted = scorer.score(&example.text)? >= threshold;
            if predicted == example.is_positive() {
                hits += 1;
            }
        }
        Ok(hits)
    };
    let (local_hits, global_hits) = (correct(local)?, correct(global)?);
    let ratio = |hits: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    };
    Ok(ControllerAccuracy {
        local: ratio(local_hits, local.len()),
        global: ratio(global_hits, global.len()),
        all: ratio(local_hits + global_hits, local.len() + global.len()),
    })
}

fn check_balance(name: &'static str, set: &[CoherenceExample]) -> Result<()> {
    let positives = set.iter().filter(|e| e.is_positive()).count();
    let negatives = set.len() - positives;
    if positives != negatives {
        return Err(Error::Unbalanced {
            name,
            positives,
            negatives,
        });
    }
    Ok(())
}
