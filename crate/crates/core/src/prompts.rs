//! Prompt templates shared by the generator, judge and entailment roles.
//!
//! Every template ends with a block of `Key: value` lines. Remote models
//! read it as part of the instructions; synthetic backends parse it.

use crate::explorer::TransformKind;

const SEED: &str = include_str!("../assets/prompts/seed.txt");
const FRESH: &str = include_str!("../assets/prompts/fresh.txt");
const DEDUCTION: &str = include_str!("../assets/prompts/deduction.txt");
const ANALOGY: &str = include_str!("../assets/prompts/analogy.txt");
const INDUCTION: &str = include_str!("../assets/prompts/induction.txt");
const JUDGE: &str = include_str!("../assets/prompts/judge.txt");
const ENTAILMENT: &str = include_str!("../assets/prompts/entailment.txt");
const TRANSFORM_RETRY: &str = "Your rewrite was identical to the original query. Write a different question.\n\n";
pub const REPROMPT: &str = include_str!("../assets/prompts/reprompt.txt");

fn one_line(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn seed(domain: &str, count: usize) -> String {
    SEED.replace("{domain}", &one_line(domain)).replace("{count}", &count.to_string())
}

/// Seed prompt for a regeneration round; `attempt` 0 is the first request.
pub fn seed_attempt(domain: &str, count: usize, attempt: usize) -> String {
    with_attempt(seed(domain, count), attempt)
}

pub fn fresh(domain: &str, previous: &str) -> String {
    FRESH.replace("{domain}", &one_line(domain)).replace("{query}", &one_line(previous))
}

pub fn transform(kind: TransformKind, query: &str) -> String {
    let template = match kind {
        TransformKind::Deduction => DEDUCTION,
        TransformKind::Analogy => ANALOGY,
        TransformKind::Induction => INDUCTION,
    };
    template.replace("{query}", &one_line(query))
}

/// Follow-up after a rewrite came back identical to its input.
pub fn transform_retry(kind: TransformKind, query: &str) -> String {
    with_attempt(format!("{}{}", TRANSFORM_RETRY, transform(kind, query)), 1)
}

fn with_attempt(prompt: String, attempt: usize) -> String {
    if attempt == 0 {
        prompt
    } else {
        format!("{}\nAttempt: {attempt}", prompt.trim_end())
    }
}

pub fn judge(query: &str, response: &str) -> String {
    // Response is the last field and may span lines.
    JUDGE.replace("{query}", &one_line(query)).replace("{response}", response.trim())
}

pub fn entailment(premise: &str, hypothesis: &str) -> String {
    ENTAILMENT
        .replace("{premise}", &one_line(premise))
        .replace("{hypothesis}", &one_line(hypothesis))
}

/// Parsed trailing block of a rendered prompt.
#[derive(Debug, Default, PartialEq)]
pub struct Fields {
    pub task: Option<String>,
    pub domain: Option<String>,
    pub count: Option<usize>,
    pub transformation: Option<String>,
    pub query: Option<String>,
    pub previous: Option<String>,
    pub response: Option<String>,
    pub premise: Option<String>,
    pub hypothesis: Option<String>,
}

pub fn parse_fields(prompt: &str) -> Fields {
    let mut fields = Fields::default();
    let mut lines = prompt.lines();
    while let Some(line) = lines.next() {
        let Some((key, value)) = line.split_once(": ") else { continue };
        let value = value.trim().to_string();
        match key {
            "Task" => fields.task = Some(value),
            "Domain" => fields.domain = Some(value),
            "Count" => fields.count = value.parse().ok(),
            "Transformation" => fields.transformation = Some(value),
            "Query" => fields.query = Some(value),
            "Previous" => fields.previous = Some(value),
            "Premise" => fields.premise = Some(value),
            "Hypothesis" => fields.hypothesis = Some(value),
            "Response" => {
                let mut rest = value;
                for more in lines.by_ref() {
                    rest.push('\n');
                    rest.push_str(more);
                }
                fields.response = Some(rest.trim().to_string());
            }
            _ => {}
        }
    }
    fields
}
