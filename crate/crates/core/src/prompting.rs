//! The step-numbered prompt template and training-pair expansion.
//!
//! `How to {title}? Step 1: {e1} ... Step i: {ei} Step i+1: {mask}`

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::{
    is_stop_literal, Process, ProcessExample, SubEvent, SubEventSequence, STOP_LITERAL,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub question_prefix: String,
    pub question_suffix: String,
    pub step_prefix: String,
    pub step_suffix: String,
    /// Sentinel of the generation backend, e.g. `[M]` or `<extra_id_0>`.
    pub mask: String,
    pub stop: String,
}

impl PromptTemplate {
    pub fn new(mask: impl Into<String>) -> Self {
        PromptTemplate {
            question_prefix: "How to ".into(),
            question_suffix: "?".into(),
            step_prefix: "Step ".into(),
            step_suffix: ": ".into(),
            mask: mask.into(),
            stop: STOP_LITERAL.into(),
        }
    }

    fn step_label(&self, index: usize) -> String {
        format!("{}{}{}", self.step_prefix, index, self.step_suffix)
    }

    fn question(&self, process: &Process) -> String {
        format!(
            "{}{}{}",
            self.question_prefix,
            process.title(),
            self.question_suffix
        )
    }

    fn render_steps<'a>(&self, out: &mut String, steps: impl Iterator<Item = &'a str>) {
        for (i, text) in steps.enumerate() {
            out.push(' ');
            out.push_str(&self.step_label(i + 1));
            out.push_str(text);
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new("[M]")
    }
}

/// Generator input for predicting step `prior.len() + 1`.
pub fn render_prompt(
    process: &Process,
    prior: &SubEventSequence,
    template: &PromptTemplate,
) -> String {
    let mut out = template.question(process);
    template.render_steps(&mut out, prior.texts());
    out.push(' ');
    out.push_str(&template.step_label(prior.len() + 1));
    out.push_str(&template.mask);
    out
}

/// Coherence scorer input: the prompt without the trailing mask slot.
pub fn render_coherence_text(
    process: &Process,
    steps: &SubEventSequence,
    template: &PromptTemplate,
) -> Result<String> {
    if steps.is_empty() {
        return Err(Error::invalid("coherence text", "needs at least one step"));
    }
    let mut out = template.question(process);
    template.render_steps(&mut out, steps.texts());
    Ok(out)
}

/// Like [`render_coherence_text`] with one extra candidate step appended,
/// without cloning the prior steps.
pub fn render_coherence_text_with(
    process: &Process,
    prior: &SubEventSequence,
    candidate: &str,
    template: &PromptTemplate,
) -> String {
    let mut out = template.question(process);
    template.render_steps(&mut out, prior.texts().chain(std::iter::once(candidate)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: String,
    pub output: String,
}

impl TrainingPair {
    pub fn is_stop(&self) -> bool {
        is_stop_literal(&self.output)
    }
}

/// One pair per step plus a final pair targeting the stop literal, for
/// each reference in turn.
pub fn expand_training_pairs(
    example: &ProcessExample,
    template: &PromptTemplate,
) -> Vec<TrainingPair> {
    let mut pairs = Vec::with_capacity(example.references.iter().map(|r| r.len() + 1).sum());
    for reference in &example.references {
        for i in 0..=reference.len() {
            let input = render_prompt(&example.process, &reference.prefix(i), template);
            let output = match reference.events().get(i) {
                Some(event) => event.text().to_string(),
                None => template.stop.clone(),
            };
            pairs.push(TrainingPair { input, output });
        }
    }
    pairs
}

/// A prompt or coherence text split back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub title: String,
    pub steps: Vec<String>,
    /// True when the text ended with an open `Step n: {mask}` slot.
    pub masked: bool,
}

fn step_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r" Step (\d+): ").expect("static regex"))
}

/// Inverse of [`render_prompt`] and [`render_coherence_text`] for the
/// default template wording. Fails when step numbers are not consecutive,
/// which is also how a step text containing ` Step n: ` shows up.
pub fn parse_prompt(text: &str, template: &PromptTemplate) -> Result<ParsedPrompt> {
    let rest = text
        .strip_prefix(&template.question_prefix)
        .ok_or_else(|| Error::Prompt(format!("missing {:?} prefix", template.question_prefix)))?;
    let head = format!("{} {}", template.question_suffix, template.step_label(1));
    let split_at = rest
        .find(&head)
        .ok_or_else(|| Error::Prompt(format!("missing {head:?}")))?;
    let title = rest[..split_at].to_string();
    if title.trim().is_empty() {
        return Err(Error::Prompt("empty title".into()));
    }
    let body = &rest[split_at + head.len()..];

    let mut segments = Vec::new();
    let mut start = 0;
    for (expected, caps) in (2..).zip(step_marker().captures_iter(body)) {
        let whole = caps.get(0).expect("group 0");
        let index: usize = caps[1]
            .parse()
            .map_err(|_| Error::Prompt(format!("bad step number {:?}", &caps[1])))?;
        if index != expected {
            return Err(Error::Prompt(format!(
                "expected step {expected}, found step {index}"
            )));
        }
        segments.push(&body[start..whole.start()]);
        start = whole.end();
    }
    segments.push(&body[start..]);

    let masked = segments.last().is_some_and(|last| *last == template.mask);
    if masked {
        segments.pop();
    }
    if segments.iter().any(|s| s.trim().is_empty()) {
        return Err(Error::Prompt("empty step text".into()));
    }
    Ok(ParsedPrompt {
        title,
        steps: segments.into_iter().map(str::to_string).collect(),
        masked,
    })
}

/// Parses a prompt into typed values.
pub fn parse_typed(
    text: &str,
    template: &PromptTemplate,
) -> Result<(Process, SubEventSequence, bool)> {
    let parsed = parse_prompt(text, template)?;
    let steps = parsed
        .steps
        .into_iter()
        .map(SubEvent::new)
        .collect::<Result<SubEventSequence>>()?;
    Ok((Process::new(parsed.title)?, steps, parsed.masked))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(steps: &[&str]) -> SubEventSequence {
        SubEventSequence::from_texts(steps.iter().copied()).unwrap()
    }

    fn cook_eggs() -> ProcessExample {
        ProcessExample::new(
            Process::new("cook eggs").unwrap(),
            vec![seq(&[
                "Place eggs in a pot of water.",
                "Bring the water to a boil.",
                "Turn off the heat and place the eggs in cold water.",
            ])],
        )
        .unwrap()
    }

    #[test]
    fn renders_table_prompts() {
        let t = PromptTemplate::default();
        let p = Process::new("cook eggs").unwrap();
        assert_eq!(
            render_prompt(&p, &SubEventSequence::default(), &t),
            "How to cook eggs? Step 1: [M]"
        );
        assert_eq!(
            render_prompt(&p, &seq(&["Place eggs in a pot of water."]), &t),
            "How to cook eggs? Step 1: Place eggs in a pot of water. Step 2: [M]"
        );
        let house = Process::new("buy a house").unwrap();
        let prior = seq(&[
            "Getting your financials in order.",
            "Shopping for a home.",
            "Making an offer and finalizing the deal.",
        ]);
        assert_eq!(
            render_prompt(&house, &prior, &t),
            "How to buy a house? Step 1: Getting your financials in order. Step 2: Shopping for a home. Step 3: Making an offer and finalizing the deal. Step 4: [M]"
        );
    }

    #[test]
    fn backend_mask_is_used() {
        let t = PromptTemplate::new("<extra_id_0>");
        let p = Process::new("cook eggs").unwrap();
        assert_eq!(
            render_prompt(&p, &SubEventSequence::default(), &t),
            "How to cook eggs? Step 1: <extra_id_0>"
        );
    }

    #[test]
    fn expands_cook_eggs_into_four_pairs() {
        let t = PromptTemplate::default();
        let pairs = expand_training_pairs(&cook_eggs(), &t);
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].input, "How to cook eggs? Step 1: [M]");
        assert_eq!(pairs[0].output, "Place eggs in a pot of water.");
        assert_eq!(
            pairs[3].input,
            "How to cook eggs? Step 1: Place eggs in a pot of water. Step 2: Bring the water to a boil. Step 3: Turn off the heat and place the eggs in cold water. Step 4: [M]"
        );
        assert_eq!(pairs[3].output, "none");
        assert!(pairs[3].is_stop());
    }

    #[test]
    fn pair_counts_follow_length_plus_one() {
        let t = PromptTemplate::default();
        let one = ProcessExample::new(Process::new("x").unwrap(), vec![seq(&["a"])]).unwrap();
        assert_eq!(expand_training_pairs(&one, &t).len(), 2);
        let two = ProcessExample::new(
            Process::new("x").unwrap(),
            vec![seq(&["a", "b"]), seq(&["c", "d", "e"])],
        )
        .unwrap();
        let pairs = expand_training_pairs(&two, &t);
        assert_eq!(pairs.len(), 7);
        assert_eq!(pairs[3].input, "How to x? Step 1: [M]");
        assert_eq!(pairs[3].output, "c");
    }

    #[test]
    fn coherence_text_matches_controller_format() {
        let t = PromptTemplate::default();
        let p = Process::new("make a felt heart card").unwrap();
        let steps = seq(&[
            "Cut out a heart shape.",
            "Glue the heart to a card base.",
            "Add embellishments.",
        ]);
        assert_eq!(
            render_coherence_text(&p, &steps, &t).unwrap(),
            "How to make a felt heart card? Step 1: Cut out a heart shape. Step 2: Glue the heart to a card base. Step 3: Add embellishments."
        );
        assert_eq!(
            render_coherence_text(&p, &seq(&["Cut."]), &t).unwrap(),
            "How to make a felt heart card? Step 1: Cut."
        );
        assert!(render_coherence_text(&p, &SubEventSequence::default(), &t).is_err());
        assert_eq!(
            render_coherence_text_with(&p, &steps.prefix(2), "Add embellishments.", &t),
            render_coherence_text(&p, &steps, &t).unwrap()
        );
    }

    #[test]
    fn prompt_is_coherence_text_plus_open_slot() {
        let t = PromptTemplate::default();
        let p = Process::new("buy a house").unwrap();
        let prior = seq(&["Getting your financials in order.", "Shopping for a home."]);
        let coherent = render_coherence_text(&p, &prior, &t).unwrap();
        assert_eq!(
            render_prompt(&p, &prior, &t),
            format!("{coherent} Step {}: {}", prior.len() + 1, t.mask)
        );
    }

    #[test]
    fn parses_back_prompts() {
        let t = PromptTemplate::default();
        let parsed = parse_prompt("How to cook eggs? Step 1: [M]", &t).unwrap();
        assert_eq!(parsed.title, "cook eggs");
        assert!(parsed.steps.is_empty());
        assert!(parsed.masked);

        let parsed = parse_prompt(
            "How to make a felt heart card? Step 1: Cut out a heart shape. Step 2: Add embellishments.",
            &t,
        )
        .unwrap();
        assert_eq!(parsed.steps.len(), 2);
        assert!(!parsed.masked);
    }

    #[test]
    fn parse_rejects_ambiguous_steps() {
        let t = PromptTemplate::default();
        assert!(parse_prompt("How to x? Step 1: a Step 5: b Step 2: [M]", &t).is_err());
        assert!(parse_prompt("Why x? Step 1: [M]", &t).is_err());
        assert!(parse_prompt("How to x? Step 2: [M]", &t).is_err());
    }
}
