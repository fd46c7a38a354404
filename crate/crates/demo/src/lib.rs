//! Browser bindings for three small operations: re-ranking candidates with
//! a coherence weight, scoring a predicted step list against references,
//! and sampling corrupted negatives. Every binding takes and returns JSON or
//! plain text so the page needs no generated types.

use std::cell::OnceCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use procwriter::backend::Candidate;
use procwriter::baselines::HashEmbedder;
use procwriter::coherence::{
    build_coherence_dataset, corrupt_global, corrupt_local, CoherenceScorer, DuplicateOracleScorer,
    LogisticScorer,
};
use procwriter::data::{parse_record, DatasetSplit, Process, SplitName, SubEventSequence};
use procwriter::decoder::rerank;
use procwriter::metrics::{best_of_references, MetricId};
use procwriter::prompting::{render_coherence_text, render_coherence_text_with, PromptTemplate};
use procwriter::runner::EMBED_DIM;

const BUNDLED_TRAIN: &str = include_str!("../../core/fixtures/tiny/train.jsonl");

thread_local! {
    static LOGISTIC: OnceCell<Result<LogisticScorer, String>> = const { OnceCell::new() };
}

fn bundled_train() -> Result<DatasetSplit, String> {
    let examples = BUNDLED_TRAIN
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(DatasetSplit::new(SplitName::Train, examples))
}

fn train_logistic() -> Result<LogisticScorer, String> {
    let train = bundled_train()?;
    let examples = build_coherence_dataset(&train, 2, 42, &PromptTemplate::default())
        .map_err(|e| e.to_string())?;
    let mut scorer = LogisticScorer::new();
    scorer
        .train(&examples, &LogisticScorer::default_hyperparameters())
        .map_err(|e| e.to_string())?;
    Ok(scorer)
}

fn with_scorer<T>(
    name: &str,
    f: impl FnOnce(&dyn CoherenceScorer) -> Result<T, String>,
) -> Result<T, String> {
    match name {
        "oracle" => f(&DuplicateOracleScorer),
        "logistic" => LOGISTIC.with(|cell| match cell.get_or_init(train_logistic) {
            Ok(scorer) => f(scorer),
            Err(e) => Err(e.clone()),
        }),
        other => Err(format!(
            "unknown scorer {other:?} (expected oracle or logistic)"
        )),
    }
}

/// One step per non-empty line.
fn lines_to_steps(text: &str) -> Result<SubEventSequence, String> {
    SubEventSequence::from_texts(text.lines().map(str::trim).filter(|l| !l.is_empty()))
        .map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
struct RerankInput {
    process: String,
    #[serde(default)]
    prior: Vec<String>,
    candidates: Vec<Candidate>,
    lambda: f64,
    #[serde(default = "default_scorer")]
    scorer: String,
}

fn default_scorer() -> String {
    "oracle".into()
}

#[derive(Debug, Serialize)]
struct RankedRow {
    text: String,
    logprob: f64,
    coherence: f64,
    combined: f64,
}

#[derive(Debug, Serialize)]
struct RerankOutput {
    rows: Vec<RankedRow>,
    winner: usize,
    /// Smallest lambda at which each candidate would beat the generator's
    /// top choice, when it can.
    flip_lambda: Vec<Option<f64>>,
}

pub fn rerank_json(input: &str) -> Result<String, String> {
    let mut input: RerankInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if input.lambda.is_nan() || input.lambda < 0.0 {
        return Err(format!("lambda must be non-negative, got {}", input.lambda));
    }
    let process = Process::new(input.process).map_err(|e| e.to_string())?;
    let prior = SubEventSequence::from_texts(input.prior).map_err(|e| e.to_string())?;
    if input.candidates.is_empty() {
        return Err("no candidates".into());
    }
    // Generator order: most probable first.
    input
        .candidates
        .sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    let template = PromptTemplate::default();
    let scores = with_scorer(&input.scorer, |scorer| {
        input
            .candidates
            .iter()
            .map(|c| {
                let text = render_coherence_text_with(&process, &prior, &c.text, &template);
                scorer.score(&text).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<f64>, String>>()
    })?;
    let winner = rerank(&input.candidates, &scores, input.lambda).map_err(|e| e.to_string())?;
    let flip_lambda = input
        .candidates
        .iter()
        .zip(&scores)
        .map(|(c, &s)| {
            let (top, top_s) = (&input.candidates[0], scores[0]);
            if c.text == top.text {
                None
            } else if s > top_s {
                Some((top.logprob - c.logprob) / (s - top_s))
            } else {
                None
            }
        })
        .collect();
    let rows = input
        .candidates
        .into_iter()
        .zip(scores)
        .map(|(c, s)| RankedRow {
            combined: c.logprob + input.lambda * s,
            text: c.text,
            logprob: c.logprob,
            coherence: s,
        })
        .collect();
    serde_json::to_string(&RerankOutput {
        rows,
        winner,
        flip_lambda,
    })
    .map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct MetricRow {
    metric: &'static str,
    best: f64,
    per_reference: Vec<f64>,
}

/// `prediction` has one step per line; `references` separates references
/// with blank lines.
pub fn score_text(prediction: &str, references: &str) -> Result<String, String> {
    let prediction = lines_to_steps(prediction)?;
    let references = references
        .split("\n\n")
        .filter(|block| !block.trim().is_empty())
        .map(lines_to_steps)
        .collect::<Result<Vec<_>, _>>()?;
    if references.is_empty() {
        return Err("at least one reference is required".into());
    }
    let embedder = HashEmbedder::new(EMBED_DIM);
    let names = ["BLEU-1", "BLEU-2", "ROUGE-L", "Embed-F"];
    let rows = MetricId::TEXT_METRICS
        .iter()
        .zip(names)
        .map(|(&metric, name)| {
            let per_reference = references
                .iter()
                .map(|r| {
                    best_of_references(
                        &prediction,
                        std::slice::from_ref(r),
                        metric,
                        Some(&embedder),
                    )
                })
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| e.to_string())?;
            let best = per_reference.iter().copied().fold(0.0, f64::max);
            Ok(MetricRow {
                metric: name,
                best,
                per_reference,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct Sample {
    kind: &'static str,
    steps: Vec<String>,
    coherence: f64,
}

/// Draws `n` duplicate and `n` irrelevant negatives for the given steps
/// (donors come from the bundled training fixture) and scores each one.
pub fn corrupt_json(
    process: &str,
    steps: &str,
    seed: u64,
    n: usize,
    scorer: &str,
) -> Result<String, String> {
    let process = Process::new(process).map_err(|e| e.to_string())?;
    let seq = lines_to_steps(steps)?;
    if seq.is_empty() {
        return Err("enter at least one step".into());
    }
    let donors = bundled_train()?.examples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = vec![("original", seq.clone())];
    for _ in 0..n {
        drawn.push((
            "duplicate",
            corrupt_local(&seq, &mut rng).map_err(|e| e.to_string())?,
        ));
    }
    for _ in 0..n {
        drawn.push((
            "irrelevant",
            corrupt_global(&seq, &donors, &process, &mut rng).map_err(|e| e.to_string())?,
        ));
    }
    let template = PromptTemplate::default();
    let samples = with_scorer(scorer, |s| {
        drawn
            .into_iter()
            .map(|(kind, steps)| {
                let text = render_coherence_text(&process, &steps, &template)
                    .map_err(|e| e.to_string())?;
                Ok(Sample {
                    kind,
                    coherence: s.score(&text).map_err(|e| e.to_string())?,
                    steps: steps.texts().map(String::from).collect(),
                })
            })
            .collect::<Result<Vec<_>, String>>()
    })?;
    serde_json::to_string(&samples).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn rerank_candidates(input: &str) -> Result<String, JsValue> {
    rerank_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn score_prediction(prediction: &str, references: &str) -> Result<String, JsValue> {
    score_text(prediction, references).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sample_negatives(
    process: &str,
    steps: &str,
    seed: u32,
    n: u32,
    scorer: &str,
) -> Result<String, JsValue> {
    corrupt_json(process, steps, u64::from(seed), n as usize, scorer)
        .map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn fresh_candidate_wins_with_weight() {
        let input = r#"{"process": "bake bread", "prior": ["Mix flour."],
            "candidates": [{"text": "Mix flour.", "logprob": -0.1}, {"text": "Knead dough.", "logprob": -2.0}],
            "lambda": 5}"#;
        let out: Value = serde_json::from_str(&rerank_json(input).unwrap()).unwrap();
        assert_eq!(out["winner"], 1);
        assert!((out["flip_lambda"][1].as_f64().unwrap() - 1.9).abs() < 1e-12);
        let zero = input.replace("\"lambda\": 5", "\"lambda\": 0");
        let out: Value = serde_json::from_str(&rerank_json(&zero).unwrap()).unwrap();
        assert_eq!(out["winner"], 0);
    }

    #[test]
    fn logistic_scorer_is_available() {
        let input = r#"{"process": "cook eggs", "candidates": [{"text": "Boil water.", "logprob": -1}],
            "lambda": 1, "scorer": "logistic"}"#;
        let out: Value = serde_json::from_str(&rerank_json(input).unwrap()).unwrap();
        let c = out["rows"][0]["coherence"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&c));
        assert!(rerank_json(&input.replace("logistic", "nope")).is_err());
    }

    #[test]
    fn identical_texts_score_full_marks() {
        let out: Value = serde_json::from_str(
            &score_text("Boil water.\nAdd rice.", "Boil water.\nAdd rice.\n\nOther.").unwrap(),
        )
        .unwrap();
        for row in out.as_array().unwrap() {
            assert!((row["best"].as_f64().unwrap() - 1.0).abs() < 1e-9, "{row}");
            assert_eq!(row["per_reference"].as_array().unwrap().len(), 2);
        }
        assert!(score_text("x", "").is_err());
    }

    #[test]
    fn negatives_are_labelled_and_seeded() {
        let steps = "Heat the pan.\nCrack the eggs.\nStir.";
        let a = corrupt_json("scramble eggs", steps, 7, 2, "oracle").unwrap();
        assert_eq!(
            a,
            corrupt_json("scramble eggs", steps, 7, 2, "oracle").unwrap()
        );
        let out: Value = serde_json::from_str(&a).unwrap();
        let kinds: Vec<&str> = out
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["kind"].as_str().unwrap())
            .collect();
        assert_eq!(
            kinds,
            [
                "original",
                "duplicate",
                "duplicate",
                "irrelevant",
                "irrelevant"
            ]
        );
        assert_eq!(out[1]["coherence"], 0.0);
        assert_eq!(out[0]["coherence"], 1.0);
        assert_eq!(out[3]["steps"].as_array().unwrap().len(), 4);
    }
}
