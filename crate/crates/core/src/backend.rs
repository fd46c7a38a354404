//! Conditional generator contract and the bundled backends.
//!
//! A [`Generator`] proposes up to `k` continuations of a prompt together
//! with their log conditional probabilities. How candidates are produced
//! (beam search, sampling, retrieval) is the backend's business.
//!
//! Bundled backends:
//! - `mock`: [`ScriptedGenerator`], a prompt → candidates lookup table.
//! - `knn`: [`NearestNeighborGenerator`], a trainable retrieval model that
//!   scores every output seen during fine-tuning by how closely its training
//!   context matches the prompt.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::{parse_prompt, PromptTemplate, TrainingPair};
use crate::util::{content_tokens, log_sum_exp, SparseVec};

/// Beam width used when a run does not set one.
pub const DEFAULT_K: usize = 5;

/// A proposed continuation with `logprob = log P(text | prompt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub logprob: f64,
}

impl Candidate {
    pub fn new(text: impl Into<String>, logprob: f64) -> Self {
        Candidate {
            text: text.into(),
            logprob,
        }
    }
}

/// Checks the top-k contract: finite log-probabilities ≤ 0, non-increasing
/// order and distinct texts.
pub fn validate_candidates(candidates: &[Candidate]) -> Result<()> {
    for (i, c) in candidates.iter().enumerate() {
        if !c.logprob.is_finite() || c.logprob > 0.0 {
            return Err(Error::invalid(
                "candidate",
                format!(
                    "candidate {i} ({:?}) has log-probability {}",
                    c.text, c.logprob
                ),
            ));
        }
        if i > 0 && c.logprob > candidates[i - 1].logprob {
            return Err(Error::invalid(
                "candidate",
                format!(
                    "candidate {i} ({:?}) is out of log-probability order",
                    c.text
                ),
            ));
        }
        if candidates[..i].iter().any(|p| p.text == c.text) {
            return Err(Error::invalid(
                "candidate",
                format!("duplicate candidate text {:?}", c.text),
            ));
        }
    }
    Ok(())
}

/// Training hyperparameters as a flat key → scalar map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperparameters(BTreeMap<String, f64>);

impl Hyperparameters {
    pub const LEARNING_RATE: &'static str = "learning_rate";
    pub const BATCH_SIZE: &'static str = "batch_size";
    pub const EPOCHS: &'static str = "epochs";

    pub fn new(learning_rate: f64, batch_size: usize, epochs: usize) -> Self {
        let mut hp = Hyperparameters::default();
        hp.set(Self::LEARNING_RATE, learning_rate);
        hp.set(Self::BATCH_SIZE, batch_size as f64);
        hp.set(Self::EPOCHS, epochs as f64);
        hp
    }

    pub fn set(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.0.insert(key.into(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn learning_rate(&self) -> f64 {
        self.get(Self::LEARNING_RATE).unwrap_or(5e-5)
    }

    pub fn batch_size(&self) -> usize {
        self.get(Self::BATCH_SIZE).unwrap_or(32.0) as usize
    }

    pub fn epochs(&self) -> usize {
        self.get(Self::EPOCHS).unwrap_or(4.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((key, value)) = self.0.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid("hyperparameter", format!("{key} = {value}")));
        }
        let lr = self.learning_rate();
        if lr <= 0.0 {
            return Err(Error::invalid(
                "hyperparameter",
                format!("learning_rate = {lr}"),
            ));
        }
        for key in [Self::BATCH_SIZE, Self::EPOCHS] {
            if let Some(v) = self.get(key) {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::invalid(
                        "hyperparameter",
                        format!("{key} = {v} is not a positive integer"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A conditional step generator.
///
/// `topk` must be deterministic for a fixed state and must return at most
/// `k` candidates that satisfy [`validate_candidates`]. Calls on one
/// instance are serialised by `&mut self` on training; concurrent decoding
/// needs one instance per worker.
pub trait Generator {
    /// The mask sentinel this backend expects in prompts.
    fn mask(&self) -> &str;

    fn topk(&self, prompt: &str, k: usize) -> Result<Vec<Candidate>>;

    /// Updates the generator from training pairs. Called through [`fine_tune`].
    fn train(&mut self, pairs: &[TrainingPair], hyperparameters: &Hyperparameters) -> Result<()>;

    fn template(&self) -> PromptTemplate {
        PromptTemplate::new(self.mask())
    }
}

/// Validates inputs and fine-tunes `generator` in place.
pub fn fine_tune<G: Generator + ?Sized>(
    generator: &mut G,
    pairs: &[TrainingPair],
    hyperparameters: &Hyperparameters,
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("training data", "no training pairs"));
    }
    hyperparameters.validate()?;
    generator.train(pairs, hyperparameters)
}

/// Lookup-table generator for hand-traced tests.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    script: BTreeMap<String, Vec<Candidate>>,
    mask: String,
}

impl ScriptedGenerator {
    pub fn new(script: BTreeMap<String, Vec<Candidate>>) -> Result<Self> {
        for (prompt, candidates) in &script {
            validate_candidates(candidates)
                .map_err(|e| Error::invalid("script", format!("prompt {prompt:?}: {e}")))?;
        }
        Ok(ScriptedGenerator {
            script,
            mask: "[M]".into(),
        })
    }

    pub fn with_mask(mut self, mask: impl Into<String>) -> Self {
        self.mask = mask.into();
        self
    }

    /// Reads a JSON object mapping prompts to candidate lists.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let script: BTreeMap<String, Vec<Candidate>> = serde_json::from_str(&body)?;
        ScriptedGenerator::new(script)
    }

    fn nearest_prompt(&self, prompt: &str) -> Option<String> {
        let shared = |other: &str| {
            prompt
                .chars()
                .zip(other.chars())
                .take_while(|(a, b)| a == b)
                .count()
        };
        // max_by_key keeps the last maximum; iterate in reverse for the first.
        self.script.keys().rev().max_by_key(|k| shared(k)).cloned()
    }
}

impl Generator for ScriptedGenerator {
    fn mask(&self) -> &str {
        &self.mask
    }

    fn topk(&self, prompt: &str, k: usize) -> Result<Vec<Candidate>> {
        let candidates = self
            .script
            .get(prompt)
            .ok_or_else(|| Error::UnknownPrompt {
                prompt: prompt.to_string(),
                nearest: self.nearest_prompt(prompt),
            })?;
        Ok(candidates.iter().take(k).cloned().collect())
    }

    fn train(&mut self, _pairs: &[TrainingPair], _hp: &Hyperparameters) -> Result<()> {
        Ok(())
    }
}

/// Adapts a closure into a generator. Its output is checked against the
/// top-k contract on every call.
pub struct FnGenerator<F> {
    f: F,
    mask: String,
}

impl<F> FnGenerator<F>
where
    F: Fn(&str, usize) -> Vec<Candidate>,
{
    pub fn new(f: F) -> Self {
        FnGenerator {
            f,
            mask: "[M]".into(),
        }
    }
}

impl<F> Generator for FnGenerator<F>
where
    F: Fn(&str, usize) -> Vec<Candidate>,
{
    fn mask(&self) -> &str {
        &self.mask
    }

    fn topk(&self, prompt: &str, k: usize) -> Result<Vec<Candidate>> {
        let mut out = (self.f)(prompt, k);
        out.truncate(k);
        validate_candidates(&out)?;
        Ok(out)
    }

    fn train(&mut self, _pairs: &[TrainingPair], _hp: &Hyperparameters) -> Result<()> {
        Ok(())
    }
}

impl<F> fmt::Debug for FnGenerator<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnGenerator")
            .field("mask", &self.mask)
            .finish()
    }
}

#[derive(Debug, Clone)]
struct Context {
    title: SparseVec,
    last_step: SparseVec,
    position: usize,
}

impl Context {
    fn from_prompt(prompt: &str, template: &PromptTemplate) -> Self {
        let (title, steps) = match parse_prompt(prompt, template) {
            Ok(parsed) => (parsed.title, parsed.steps),
            Err(_) => {
                // Prompts outside the step template (whole-sequence and
                // zero-shot inputs) keep only their question.
                let question = prompt
                    .strip_prefix(&template.question_prefix)
                    .unwrap_or(prompt);
                let title = question.split('?').next().unwrap_or(question);
                (title.to_string(), Vec::new())
            }
        };
        Context {
            title: SparseVec::from_tokens(&content_tokens(&title)),
            last_step: steps
                .last()
                .map(|s| SparseVec::from_tokens(&content_tokens(s)))
                .unwrap_or_default(),
            position: steps.len(),
        }
    }

    fn similarity(&self, other: &Context) -> f64 {
        let last = match (self.last_step.is_empty(), other.last_step.is_empty()) {
            (true, true) => 1.0,
            (false, false) => self.last_step.dot(&other.last_step),
            _ => 0.0,
        };
        let position = if self.position == other.position {
            1.0
        } else {
            0.0
        };
        0.6 * self.title.dot(&other.title) + 0.3 * last + 0.1 * position
    }
}

/// Retrieval-based stand-in for a fine-tuned seq2seq model.
///
/// Every output text seen in training is a possible continuation. Its score
/// is `sim / temperature` for the closest training context that produced
/// it, where `sim` mixes title overlap, overlap with the previous step and a
/// same-position bonus; scores are normalised into log-probabilities over
/// the whole output inventory.
#[derive(Debug, Clone)]
pub struct NearestNeighborGenerator {
    template: PromptTemplate,
    temperature: f64,
    memory: Vec<(Context, usize)>,
    outputs: Vec<String>,
}

impl NearestNeighborGenerator {
    pub const TEMPERATURE: &'static str = "temperature";
    const DEFAULT_TEMPERATURE: f64 = 0.1;

    pub fn new() -> Self {
        NearestNeighborGenerator {
            template: PromptTemplate::default(),
            temperature: Self::DEFAULT_TEMPERATURE,
            memory: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }
}

impl Default for NearestNeighborGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl Generator for NearestNeighborGenerator {
    fn mask(&self) -> &str {
        &self.template.mask
    }

    fn topk(&self, prompt: &str, k: usize) -> Result<Vec<Candidate>> {
        if self.outputs.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let query = Context::from_prompt(prompt, &self.template);
        // Frequent outputs such as the stop literal must not win on volume.
        let mut scores = vec![f64::NEG_INFINITY; self.outputs.len()];
        for (context, output) in &self.memory {
            scores[*output] = scores[*output].max(query.similarity(context) / self.temperature);
        }
        let normaliser = log_sum_exp(scores.iter().copied());

        let mut ranked: Vec<usize> = (0..scores.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|i| Candidate::new(self.outputs[i].clone(), (scores[i] - normaliser).min(0.0)))
            .collect())
    }

    fn train(&mut self, pairs: &[TrainingPair], hp: &Hyperparameters) -> Result<()> {
        if let Some(t) = hp.get(Self::TEMPERATURE) {
            if t <= 0.0 {
                return Err(Error::invalid(
                    "hyperparameter",
                    format!("temperature = {t}"),
                ));
            }
            self.temperature = t;
        }
        let mut ids: HashMap<String, usize> = self
            .outputs
            .iter()
            .enumerate()
            .map(|(i, o)| (o.clone(), i))
            .collect();
        for pair in pairs {
            let next = ids.len();
            let id = *ids.entry(pair.output.clone()).or_insert_with(|| {
                self.outputs.push(pair.output.clone());
                next
            });
            self.memory
                .push((Context::from_prompt(&pair.input, &self.template), id));
        }
        log::debug!(
            "knn generator: {} contexts, {} distinct outputs",
            self.memory.len(),
            self.outputs.len()
        );
        Ok(())
    }
}

/// Options a backend factory may read.
#[derive(Debug, Clone, Default)]
pub struct BackendOptions {
    /// Script file for the `mock` backend.
    pub mock_script: Option<PathBuf>,
}

type GeneratorFactory = Box<dyn Fn(&BackendOptions) -> Result<Box<dyn Generator>> + Send + Sync>;

/// Backends by name.
pub struct GeneratorRegistry {
    factories: BTreeMap<String, GeneratorFactory>,
}

impl GeneratorRegistry {
    pub fn empty() -> Self {
        GeneratorRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `mock` and `knn`.
    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register("mock", |options: &BackendOptions| {
            let path = options.mock_script.as_ref().ok_or_else(|| {
                Error::invalid("backend options", "the mock backend needs a script file")
            })?;
            Ok(Box::new(ScriptedGenerator::from_json_file(path)?) as Box<dyn Generator>)
        });
        registry.register("knn", |_: &BackendOptions| {
            Ok(Box::new(NearestNeighborGenerator::new()) as Box<dyn Generator>)
        });
        registry
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&BackendOptions) -> Result<Box<dyn Generator>> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn ensure(&self, name: &str) -> Result<()> {
        if self.contains(name) {
            Ok(())
        } else {
            Err(Error::Unknown {
                kind: "backend",
                name: name.to_string(),
                available: self.names().join(", "),
            })
        }
    }

    pub fn create(&self, name: &str, options: &BackendOptions) -> Result<Box<dyn Generator>> {
        self.ensure(name)?;
        (self.factories[name])(options)
    }
}

impl Default for GeneratorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
