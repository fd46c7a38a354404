//! The step-by-step decoding loop.
//!
//! Each iteration renders the prompt from the steps chosen so far, asks the
//! generator for its top-k continuations, optionally re-ranks them by
//! `logprob + lambda * coherence`, and appends the winner. Decoding ends
//! when the winner is the stop literal or after `max_steps` steps.

use serde::{Deserialize, Serialize};

use crate::backend::{Candidate, Generator, DEFAULT_K};
use crate::coherence::CoherenceScorer;
use crate::data::{is_stop_literal, Process, SubEvent, SubEventSequence, STOP_LITERAL};
use crate::error::{Error, Result};
use crate::prompting::{render_coherence_text, render_coherence_text_with, render_prompt};

/// Default cap on generated steps.
pub const DEFAULT_MAX_STEPS: usize = 20;

/// How a stop candidate takes part in re-ranking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopPolicy {
    /// The stop candidate competes with the coherence score of the
    /// sequence so far (0 for an empty sequence).
    #[default]
    Rerank,
    /// Stop whenever the generator ranks the stop literal first; otherwise
    /// stop candidates are dropped before re-ranking.
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub k: usize,
    pub lambda: f64,
    pub max_steps: usize,
    pub use_coherence: bool,
    pub stop_literal: String,
    pub stop_policy: StopPolicy,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            k: DEFAULT_K,
            lambda: 1.0,
            max_steps: DEFAULT_MAX_STEPS,
            use_coherence: true,
            stop_literal: STOP_LITERAL.into(),
            stop_policy: StopPolicy::default(),
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("decoding config", "k must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid(
                "decoding config",
                "max_steps must be at least 1",
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(
                "decoding config",
                format!("lambda = {} must be a non-negative number", self.lambda),
            ));
        }
        Ok(())
    }

    fn is_stop(&self, text: &str) -> bool {
        text.trim().eq_ignore_ascii_case(self.stop_literal.trim()) || is_stop_literal(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    /// Absent when the loop runs without a scorer, or for a stop candidate
    /// under [`StopPolicy::Bypass`].
    pub coherence: Option<f64>,
    pub combined: f64,
}

impl ScoredCandidate {
    pub fn new(candidate: Candidate, coherence: Option<f64>, lambda: f64) -> Self {
        let combined = combined_score(candidate.logprob, coherence.unwrap_or(0.0), lambda);
        ScoredCandidate {
            candidate,
            coherence,
            combined,
        }
    }
}

fn combined_score(logprob: f64, coherence: f64, lambda: f64) -> f64 {
    logprob + lambda * coherence
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    StopLiteral,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub prompt: String,
    pub candidates: Vec<ScoredCandidate>,
    /// Index into `candidates`.
    pub chosen: usize,
}

impl TraceStep {
    pub fn chosen_candidate(&self) -> &ScoredCandidate {
        &self.candidates[self.chosen]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub lambda: f64,
    pub steps: Vec<TraceStep>,
    pub stop_reason: StopReason,
}

/// Index maximising `logprob + lambda * coherence`; ties go to the lower
/// index, which is the higher generator rank.
pub fn rerank(candidates: &[Candidate], coherence: &[f64], lambda: f64) -> Result<usize> {
    if candidates.len() != coherence.len() {
        return Err(Error::LengthMismatch {
            what: "candidates vs coherence scores",
            left: candidates.len(),
            right: coherence.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::invalid("rerank", "no candidates"));
    }
    let mut best = 0;
    let mut best_score = combined_score(candidates[0].logprob, coherence[0], lambda);
    for (i, (c, &s)) in candidates.iter().zip(coherence).enumerate().skip(1) {
        let score = combined_score(c.logprob, s, lambda);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

/// Runs the loop for one process. `scorer` is required when
/// `config.use_coherence` is set.
pub fn decode(
    process: &Process,
    generator: &dyn Generator,
    scorer: Option<&dyn CoherenceScorer>,
    config: &DecodingConfig,
) -> Result<(SubEventSequence, DecodeTrace)> {
    config.validate()?;
    let scorer = match (config.use_coherence, scorer) {
        (true, Some(s)) => Some(s),
        (true, None) => {
            return Err(Error::invalid(
                "decoding config",
                "coherence re-ranking is enabled but no scorer was given",
            ))
        }
        (false, _) => None,
    };
    let template = generator.template();
    let mut steps = SubEventSequence::default();
    let mut trace = Vec::new();

    let stop_reason = loop {
        if steps.len() >= config.max_steps {
            break StopReason::MaxSteps;
        }
        let iteration = trace.len() + 1;
        let at = |source: Error| Error::Decode {
            iteration,
            source: Box::new(source),
        };

        let prompt = render_prompt(process, &steps, &template);
        let candidates = generator.topk(&prompt, config.k).map_err(at)?;
        if candidates.is_empty() {
            return Err(at(Error::Backend(
                "generator returned no candidates".into(),
            )));
        }

        let (scored, chosen) = match scorer {
            None => {
                let scored = candidates
                    .into_iter()
                    .map(|c| ScoredCandidate::new(c, None, config.lambda))
                    .collect();
                (scored, 0)
            }
            Some(scorer) => {
                score_and_rerank(process, &steps, candidates, scorer, config).map_err(at)?
            }
        };

        let winner = scored[chosen].candidate.text.clone();
        trace.push(TraceStep {
            iteration,
            prompt,
            candidates: scored,
            chosen,
        });
        if config.is_stop(&winner) {
            break StopReason::StopLiteral;
        }
        steps.push(SubEvent::new(winner).map_err(at)?);
    };

    Ok((
        steps,
        DecodeTrace {
            lambda: config.lambda,
            steps: trace,
            stop_reason,
        },
    ))
}

fn score_and_rerank(
    process: &Process,
    prior: &SubEventSequence,
    candidates: Vec<Candidate>,
    scorer: &dyn CoherenceScorer,
    config: &DecodingConfig,
) -> Result<(Vec<ScoredCandidate>, usize)> {
    let template = crate::prompting::PromptTemplate::default();
    if config.stop_policy == StopPolicy::Bypass && config.is_stop(&candidates[0].text) {
        let scored = candidates
            .into_iter()
            .map(|c| ScoredCandidate::new(c, None, config.lambda))
            .collect();
        return Ok((scored, 0));
    }

    let mut stop_score: Option<f64> = None;
    let mut scored = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let coherence = if config.is_stop(&candidate.text) {
            match config.stop_policy {
                StopPolicy::Bypass => None,
                StopPolicy::Rerank => Some(match stop_score {
                    Some(s) => s,
                    None => {
                        let s = if prior.is_empty() {
                            0.0
                        } else {
                            scorer.score(&render_coherence_text(process, prior, &template)?)?
                        };
                        stop_score = Some(s);
                        s
                    }
                }),
            }
        } else {
            Some(scorer.score(&render_coherence_text_with(
                process,
                prior,
                &candidate.text,
                &template,
            ))?)
        };
        scored.push(ScoredCandidate::new(candidate, coherence, config.lambda));
    }

    // Under Bypass, stop candidates below the top are out of the running.
    let eligible: Vec<usize> = (0..scored.len())
        .filter(|&i| scored[i].coherence.is_some())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Backend("no rankable candidates".into()));
    }
    let pool: Vec<Candidate> = eligible
        .iter()
        .map(|&i| scored[i].candidate.clone())
        .collect();
    let coherence: Vec<f64> = eligible
        .iter()
        .map(|&i| scored[i].coherence.unwrap_or_default())
        .collect();
    let winner = eligible[rerank(&pool, &coherence, config.lambda)?];
    Ok((scored, winner))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::backend::{FnGenerator, ScriptedGenerator};
    use crate::coherence::DuplicateOracleScorer;

    fn cook_eggs_script() -> ScriptedGenerator {
        let steps = [
            "Place eggs in a pot of water.",
            "Bring the water to a boil.",
            "Turn off the heat and place the eggs in cold water.",
        ];
        let process = Process::new("cook eggs").unwrap();
        let template = crate::prompting::PromptTemplate::default();
        let mut script = BTreeMap::new();
        for i in 0..=steps.len() {
            let prior = SubEventSequence::from_texts(steps[..i].iter().copied()).unwrap();
            let next = steps.get(i).copied().unwrap_or("none");
            script.insert(
                render_prompt(&process, &prior, &template),
                vec![
                    Candidate::new(next, -0.1),
                    Candidate::new("Eat breakfast.", -2.0),
                ],
            );
        }
        ScriptedGenerator::new(script).unwrap()
    }

    #[test]
    fn rerank_examples() {
        let c = [Candidate::new("a", -1.0), Candidate::new("b", -0.5)];
        assert_eq!(rerank(&c, &[0.9, 0.1], 1.0).unwrap(), 0);
        assert_eq!(rerank(&c[..1], &[0.0], 3.0).unwrap(), 0);
        assert!(rerank(&c, &[0.1], 1.0).is_err());
        let sorted = [Candidate::new("a", -0.5), Candidate::new("b", -1.0)];
        assert_eq!(rerank(&sorted, &[0.0, 1.0], 0.0).unwrap(), 0);
    }

    #[test]
    fn rerank_prefers_coherent_card_step() {
        let c = [
            Candidate::new("Add a sentiment.", -1.0),
            Candidate::new("Add embellishments.", -1.0),
        ];
        for lambda in [0.5, 1.0, 2.0, 5.0] {
            assert_eq!(rerank(&c, &[0.23, 0.82], lambda).unwrap(), 1);
        }
    }

    #[test]
    fn rerank_tie_goes_to_generator_rank() {
        let c = [Candidate::new("a", -1.0), Candidate::new("b", -2.0)];
        assert_eq!(rerank(&c, &[0.0, 1.0], 1.0).unwrap(), 0);
    }

    #[test]
    fn traced_cook_eggs_without_coherence() {
        let g = cook_eggs_script();
        let config = DecodingConfig {
            use_coherence: false,
            ..Default::default()
        };
        let (seq, trace) = decode(&Process::new("cook eggs").unwrap(), &g, None, &config).unwrap();
        assert_eq!(
            seq.texts().collect::<Vec<_>>(),
            [
                "Place eggs in a pot of water.",
                "Bring the water to a boil.",
                "Turn off the heat and place the eggs in cold water."
            ]
        );
        assert_eq!(trace.stop_reason, StopReason::StopLiteral);
        assert_eq!(trace.steps.len(), 4);
        assert!(trace.steps.iter().all(|s| s.chosen == 0));
    }

    #[test]
    fn immediate_stop_gives_empty_sequence() {
        let g = FnGenerator::new(|_, _| vec![Candidate::new("None", -0.1)]);
        let config = DecodingConfig {
            use_coherence: false,
            ..Default::default()
        };
        let (seq, trace) = decode(&Process::new("x").unwrap(), &g, None, &config).unwrap();
        assert!(seq.is_empty());
        assert_eq!(trace.stop_reason, StopReason::StopLiteral);
    }

    #[test]
    fn cap_stops_never_ending_generator() {
        let g = FnGenerator::new(|prompt, _| {
            let n = prompt.matches("Step ").count();
            vec![Candidate::new(format!("Keep going {n}."), -0.3)]
        });
        let config = DecodingConfig {
            max_steps: 10,
            use_coherence: false,
            ..Default::default()
        };
        let (seq, trace) = decode(&Process::new("x").unwrap(), &g, None, &config).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(trace.stop_reason, StopReason::MaxSteps);
    }

    #[test]
    fn coherence_rescues_fresh_step() {
        // Generator prefers repeating step 1; the oracle scorer penalises it.
        let g = FnGenerator::new(|prompt, _| {
            if prompt.ends_with("Step 1: [M]") {
                vec![Candidate::new("Mix flour.", -0.1)]
            } else if prompt.ends_with("Step 2: [M]") {
                vec![
                    Candidate::new("Mix flour.", -0.1),
                    Candidate::new("Bake it.", -3.0),
                ]
            } else {
                vec![Candidate::new("none", -0.1)]
            }
        });
        let process = Process::new("bake bread").unwrap();
        let scorer = DuplicateOracleScorer::new();
        let with = DecodingConfig {
            lambda: 5.0,
            ..Default::default()
        };
        let (seq, trace) = decode(&process, &g, Some(&scorer), &with).unwrap();
        assert_eq!(seq.texts().collect::<Vec<_>>(), ["Mix flour.", "Bake it."]);
        assert_eq!(trace.steps[1].chosen, 1);

        let without = DecodingConfig {
            lambda: 5.0,
            max_steps: 3,
            use_coherence: false,
            ..Default::default()
        };
        let (seq, _) = decode(&process, &g, None, &without).unwrap();
        assert_eq!(
            seq.texts().collect::<Vec<_>>(),
            ["Mix flour.", "Mix flour."]
        );
    }

    #[test]
    fn missing_scorer_is_an_error() {
        let g = FnGenerator::new(|_, _| vec![Candidate::new("none", -0.1)]);
        let err = decode(
            &Process::new("x").unwrap(),
            &g,
            None,
            &DecodingConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn backend_errors_carry_iteration() {
        let g = cook_eggs_script();
        let err = decode(
            &Process::new("cook rice").unwrap(),
            &g,
            None,
            &DecodingConfig {
                use_coherence: false,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Decode { iteration: 1, .. }), "{err}");
    }

    #[test]
    fn bypass_policy_stops_on_top_stop() {
        let g = FnGenerator::new(|prompt, _| {
            if prompt.ends_with("Step 1: [M]") {
                vec![Candidate::new("Mix flour.", -0.1)]
            } else {
                vec![
                    Candidate::new("none", -0.1),
                    Candidate::new("Bake it.", -0.2),
                ]
            }
        });
        let scorer = DuplicateOracleScorer::new();
        let process = Process::new("bake bread").unwrap();
        let bypass = DecodingConfig {
            stop_policy: StopPolicy::Bypass,
            max_steps: 4,
            ..Default::default()
        };
        let (seq, trace) = decode(&process, &g, Some(&scorer), &bypass).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::StopLiteral);
        assert_eq!(trace.steps[1].candidates[0].coherence, None);

        // Under Rerank the stop candidate carries the score of the current
        // sequence (1.0 here), so it still wins on log-probability.
        let rerank_cfg = DecodingConfig {
            max_steps: 4,
            ..Default::default()
        };
        let (seq, trace) = decode(&process, &g, Some(&scorer), &rerank_cfg).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(trace.steps[1].candidates[0].coherence, Some(1.0));
    }

    #[test]
    fn invalid_configs() {
        for config in [
            DecodingConfig {
                k: 0,
                ..Default::default()
            },
            DecodingConfig {
                max_steps: 0,
                ..Default::default()
            },
            DecodingConfig {
                lambda: -1.0,
                ..Default::default()
            },
            DecodingConfig {
                lambda: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(config.validate().is_err());
        }
    }
}
