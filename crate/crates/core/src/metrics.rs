//! BLEU-1/2, ROUGE-L, embedding F-score, best-of-references aggregation
//! and sequence-length errors.
//!
//! All text metrics are sentence-level and averaged over examples. A
//! prediction and its references are flattened by joining steps with a
//! space and tokenising (lowercase, punctuation split off).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{cosine, Embedder};
use crate::data::{ProcessExample, SubEventSequence};
use crate::error::{Error, Result};

pub use crate::util::tokenize;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precision of order `n`. Add-one smoothing applies only
/// when nothing matches. `None` when the prediction has no n-grams.
fn modified_precision(prediction: &[String], reference: &[String], n: usize) -> Option<f64> {
    let total = prediction.len().checked_sub(n - 1).filter(|&t| t > 0)?;
    let pred = ngram_counts(prediction, n);
    let refs = ngram_counts(reference, n);
    let matched: usize = pred
        .iter()
        .map(|(gram, &count)| count.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    Some(if matched == 0 {
        1.0 / (total as f64 + 1.0)
    } else {
        matched as f64 / total as f64
    })
}

fn brevity_penalty(pred_len: usize, ref_len: usize) -> f64 {
    if pred_len == 0 {
        return 0.0;
    }
    (1.0 - ref_len as f64 / pred_len as f64).exp().min(1.0)
}

/// Cumulative BLEU of order `n` (1 or 2): brevity penalty times the
/// geometric mean of the clipped precisions of orders `1..=n`. Orders for
/// which the prediction is too short are left out of the mean.
pub fn bleu_n(prediction: &[String], reference: &[String], n: usize) -> Result<f64> {
    if !(1..=2).contains(&n) {
        return Err(Error::invalid(
            "BLEU order",
            format!("{n} (expected 1 or 2)"),
        ));
    }
    if prediction.is_empty() {
        return Ok(0.0);
    }
    let precisions: Vec<f64> = (1..=n)
        .filter_map(|order| modified_precision(prediction, reference, order))
        .collect();
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64;
    Ok(brevity_penalty(prediction.len(), reference.len()) * log_mean.exp())
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS-based F1. Zero when either side is empty.
pub fn rouge_l(prediction: &[String], reference: &[String]) -> f64 {
    if prediction.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(prediction, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / prediction.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Greedy token matching F-score: precision is the mean over prediction
/// tokens of the best cosine to any reference token, recall the converse.
/// Negative similarities count as 0.
pub fn embed_f(prediction: &str, reference: &str, embedder: &dyn Embedder) -> f64 {
    let embed_all = |text: &str| -> Vec<Vec<f64>> {
        tokenize(text)
            .iter()
            .map(|t| embedder.embed_token(t))
            .collect()
    };
    let pred = embed_all(prediction);
    let refs = embed_all(reference);
    if pred.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let greedy = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        from.iter()
            .map(|u| {
                to.iter()
                    .map(|v| cosine(u, v))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let p = greedy(&pred, &refs).max(0.0);
    let r = greedy(&refs, &pred).max(0.0);
    if p + r == 0.0 {
        0.0
    } else {
        (2.0 * p * r / (p + r)).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    Bleu1,
    Bleu2,
    RougeL,
    EmbedF,
}

impl MetricId {
    pub const TEXT_METRICS: [MetricId; 4] = [
        MetricId::Bleu1,
        MetricId::Bleu2,
        MetricId::RougeL,
        MetricId::EmbedF,
    ];
}

fn flatten(seq: &SubEventSequence) -> String {
    seq.texts().collect::<Vec<_>>().join(" ")
}

/// The metric against each reference; the best value wins.
pub fn best_of_references(
    prediction: &SubEventSequence,
    references: &[SubEventSequence],
    metric: MetricId,
    embedder: Option<&dyn Embedder>,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::invalid("references", "empty reference list"));
    }
    let pred_text = flatten(prediction);
    let pred_tokens = tokenize(&pred_text);
    let mut best = f64::NEG_INFINITY;
    for reference in references {
        let ref_text = flatten(reference);
        let value = match metric {
            MetricId::Bleu1 => bleu_n(&pred_tokens, &tokenize(&ref_text), 1)?,
            MetricId::Bleu2 => bleu_n(&pred_tokens, &tokenize(&ref_text), 2)?,
            MetricId::RougeL => rouge_l(&pred_tokens, &tokenize(&ref_text)),
            MetricId::EmbedF => {
                let embedder = embedder.ok_or_else(|| {
                    Error::invalid("metric", "embedding F-score needs an embedder")
                })?;
                embed_f(&pred_text, &ref_text, embedder)
            }
        };
        best = best.max(value);
    }
    Ok(best)
}

/// Absolute and squared length errors against the reference whose length
/// is closest to the prediction's.
pub fn length_error(prediction_len: usize, reference_lens: &[usize]) -> Option<f64> {
    reference_lens
        .iter()
        .map(|&r| (prediction_len as f64 - r as f64).abs())
        .min_by(f64::total_cmp)
}

pub fn mae(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        0.0
    } else {
        errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
    }
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        0.0
    } else {
        (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub embed_f: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n_examples: usize,
}

impl MetricReport {
    /// Sum of the four text metrics (0–100 scale). Used for model selection.
    pub fn text_metric_sum(&self) -> f64 {
        self.bleu1 + self.bleu2 + self.rouge_l + self.embed_f
    }
}

/// Averages best-of-references scores over aligned predictions and
/// examples, scaled to 0–100, plus length MAE/RMSE. Without an embedder
/// `embed_f` is reported as 0.
pub fn corpus_report(
    predictions: &[SubEventSequence],
    examples: &[ProcessExample],
    embedder: Option<&dyn Embedder>,
) -> Result<MetricReport> {
    if predictions.len() != examples.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs examples",
            left: predictions.len(),
            right: examples.len(),
        });
    }
    let n = examples.len();
    let mut sums = [0.0; 4];
    let mut errors = Vec::with_capacity(n);
    for (prediction, example) in predictions.iter().zip(examples) {
        for (sum, metric) in sums.iter_mut().zip(MetricId::TEXT_METRICS) {
            if metric == MetricId::EmbedF && embedder.is_none() {
                continue;
            }
            *sum += best_of_references(prediction, &example.references, metric, embedder)?;
        }
        let lens: Vec<usize> = example
            .references
            .iter()
            .map(SubEventSequence::len)
            .collect();
        errors.push(length_error(prediction.len(), &lens).expect("non-empty references"));
    }
    let mean = |s: f64| if n == 0 { 0.0 } else { 100.0 * s / n as f64 };
    Ok(MetricReport {
        bleu1: mean(sums[0]),
        bleu2: mean(sums[1]),
        rouge_l: mean(sums[2]),
        embed_f: mean(sums[3]),
        mae: mae(&errors),
        rmse: rmse(&errors),
        n_examples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::HashEmbedder;
    use crate::data::Process;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn seq(steps: &[&str]) -> SubEventSequence {
        SubEventSequence::from_texts(steps.iter().copied()).unwrap()
    }

    struct Fixed(Vec<(&'static str, Vec<f64>)>);

    impl Embedder for Fixed {
        fn dim(&self) -> usize {
            2
        }
        fn embed_token(&self, token: &str) -> Vec<f64> {
            self.0.iter().find(|(t, _)| *t == token).unwrap().1.clone()
        }
    }

    #[test]
    fn bleu_examples() {
        let abc = toks("a b c");
        assert_eq!(bleu_n(&abc, &abc, 1).unwrap(), 1.0);
        assert!((bleu_n(&abc, &abc, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((bleu_n(&abc, &toks("a b d"), 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let short = bleu_n(&toks("a b"), &toks("a b c d"), 1).unwrap();
        assert!((short - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(bleu_n(&[], &abc, 1).unwrap(), 0.0);
        assert!(bleu_n(&abc, &abc, 3).is_err());
    }

    #[test]
    fn bleu_smoothing_and_short_predictions() {
        // No unigram matches: add-one gives 1/(3+1).
        assert!((bleu_n(&toks("x y z"), &toks("a b c"), 1).unwrap() - 0.25).abs() < 1e-12);
        // A single token has no bigram, so BLEU-2 falls back to unigrams.
        assert_eq!(bleu_n(&toks("a"), &toks("a"), 2).unwrap(), 1.0);
    }

    #[test]
    fn rouge_examples() {
        let abc = toks("a b c");
        assert_eq!(rouge_l(&abc, &abc), 1.0);
        assert!((rouge_l(&abc, &toks("a c b")) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&abc, &toks("x y")), 0.0);
        assert_eq!(rouge_l(&[], &abc), 0.0);
    }

    #[test]
    fn embed_f_examples() {
        let e = HashEmbedder::default();
        assert!((embed_f("Boil the eggs.", "Boil the eggs.", &e) - 1.0).abs() < 1e-12);
        assert_eq!(embed_f("", "Boil.", &e), 0.0);
        let sixty = Fixed(vec![
            ("p", vec![1.0, 0.0]),
            ("r", vec![0.5, 3f64.sqrt() / 2.0]),
        ]);
        assert!((embed_f("p", "r", &sixty) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn best_of_references_examples() {
        let pred = seq(&["a b c"]);
        let only = [seq(&["a b d"])];
        let v = best_of_references(&pred, &only, MetricId::Bleu1, None).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        let v = best_of_references(
            &pred,
            &[seq(&["x y z"]), pred.clone()],
            MetricId::RougeL,
            None,
        )
        .unwrap();
        assert_eq!(v, 1.0);
        let two = [seq(&["a x y"]), seq(&["a b y"])];
        let v = best_of_references(&pred, &two, MetricId::Bleu1, None).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert!(best_of_references(&pred, &[], MetricId::Bleu1, None).is_err());
        assert!(best_of_references(&pred, &only, MetricId::EmbedF, None).is_err());
    }

    #[test]
    fn perfect_run_report() {
        let refs = [seq(&["Boil water.", "Add pasta."]), seq(&["Buy paint."])];
        let examples: Vec<ProcessExample> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                ProcessExample::new(Process::new(format!("p{i}")).unwrap(), vec![r.clone()])
                    .unwrap()
            })
            .collect();
        let e = HashEmbedder::default();
        let report = corpus_report(&refs, &examples, Some(&e)).unwrap();
        assert!((report.bleu1 - 100.0).abs() < 1e-9);
        assert!((report.bleu2 - 100.0).abs() < 1e-9);
        assert!((report.rouge_l - 100.0).abs() < 1e-9);
        assert!((report.embed_f - 100.0).abs() < 1e-9);
        assert_eq!((report.mae, report.rmse, report.n_examples), (0.0, 0.0, 2));
    }

    #[test]
    fn empty_report_and_misalignment() {
        let report = corpus_report(&[], &[], None).unwrap();
        assert_eq!(report.n_examples, 0);
        assert_eq!(report.text_metric_sum(), 0.0);
        let ex = ProcessExample::new(Process::new("p").unwrap(), vec![seq(&["a"])]).unwrap();
        assert!(corpus_report(&[], &[ex], None).is_err());
    }

    #[test]
    fn length_errors() {
        let errors: Vec<f64> = [(3, 4), (5, 4)]
            .iter()
            .map(|&(p, r)| length_error(p, &[r]).unwrap())
            .collect();
        assert_eq!(mae(&errors), 1.0);
        assert_eq!(rmse(&errors), 1.0);
        assert_eq!(length_error(5, &[2, 6, 9]), Some(1.0));
        assert_eq!(length_error(5, &[]), None);
    }

    #[test]
    fn report_json_keys() {
        let report = corpus_report(&[], &[], None).unwrap();
        let json = serde_json::to_value(report).unwrap();
        for key in [
            "bleu1",
            "bleu2",
            "rougeL",
            "embed_f",
            "mae",
            "rmse",
            "n_examples",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
