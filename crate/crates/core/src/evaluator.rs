//! Hallucination judgments: the LLM judge used during exploration and the
//! reference-based label (mean of unigram F1 and ROUGE-L) used for datasets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{complete, ChatBackend, ChatTurn, GatewayError};
use crate::prompts;
use crate::text::tokenize;

/// Judge confidence below this is flagged for review in reports.
pub const LOW_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge output could not be parsed after a reprompt: {0:?}")]
    Unparseable(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub hallucinated: bool,
    pub confidence: f64,
    #[serde(default)]
    pub rationale: String,
}

impl Judgment {
    pub fn low_confidence(&self) -> bool {
        self.confidence < LOW_CONFIDENCE
    }

    /// The per-response factor of the reward product: 1 when clean.
    pub fn sig(&self) -> u8 {
        u8::from(!self.hallucinated)
    }
}

/// Product of `sig` over a response set: 0 iff any response is hallucinated.
pub fn sig_product(judgments: &[Judgment]) -> u8 {
    judgments.iter().map(Judgment::sig).product()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GqaLabel {
    pub unigram_f1: f64,
    pub rouge_l: f64,
    pub mean: f64,
    pub hallucinated: bool,
}

/// Harmonic mean of clipped unigram precision and recall.
pub fn unigram_f1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &refr {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &cand {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap, cand.len(), refr.len())
}

fn f_measure(hits: usize, cand_len: usize, ref_len: usize) -> f64 {
    if hits == 0 {
        return 0.0;
    }
    let p = hits as f64 / cand_len as f64;
    let r = hits as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
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

/// ROUGE-L F-measure (beta = 1) over token sequences.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    f_measure(lcs_len(&cand, &refr), cand.len(), refr.len())
}

/// Hallucinated when the mean of unigram F1 and ROUGE-L is strictly below 0.5.
pub fn gqa_label(candidate: &str, reference: &str) -> GqaLabel {
    let unigram_f1 = unigram_f1(candidate, reference);
    let rouge_l = rouge_l(candidate, reference);
    label_from_scores(unigram_f1, rouge_l)
}

pub fn label_from_scores(unigram_f1: f64, rouge_l: f64) -> GqaLabel {
    let mean = (unigram_f1 + rouge_l) / 2.0;
    GqaLabel { unigram_f1, rouge_l, mean, hallucinated: mean < 0.5 }
}

/// Parses `verdict: yes|no, confidence: 0-100` anywhere in the reply.
pub fn parse_verdict(reply: &str) -> Option<(bool, f64)> {
    let lower = reply.to_lowercase();
    let value_after = |key: &str| -> Option<String> {
        let start = lower.find(key)? + key.len();
        let rest = lower[start..].trim_start_matches(|c: char| c == ':' || c == '=' || c.is_whitespace());
        let value: String = rest
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '.')
            .collect();
        (!value.is_empty()).then_some(value)
    };
    let hallucinated = match value_after("verdict")?.as_str() {
        "yes" => true,
        "no" => false,
        _ => return None,
    };
    let confidence: f64 = value_after("confidence")?.trim_end_matches('.').parse().ok()?;
    if !(0.0..=100.0).contains(&confidence) {
        return None;
    }
    Some((hallucinated, confidence / 100.0))
}

/// Asks the judge whether `response` to `query` is hallucinated. An
/// unparseable reply gets one reprompt before it becomes an error.
pub fn judge(query: &str, response: &str, backend: &dyn ChatBackend) -> Result<Judgment, EvalError> {
    let prompt = prompts::judge(query, response);
    let mut turns = vec![ChatTurn::user(prompt)];
    let first = complete(backend, &turns)?;
    if let Some((hallucinated, confidence)) = parse_verdict(&first) {
        return Ok(Judgment { hallucinated, confidence, rationale: first });
    }
    turns.push(ChatTurn::assistant(first));
    turns.push(ChatTurn::user(prompts::REPROMPT));
    let second = complete(backend, &turns)?;
    parse_verdict(&second)
        .map(|(hallucinated, confidence)| Judgment { hallucinated, confidence, rationale: second.clone() })
        .ok_or(EvalError::Unparseable(second))
}
