//! Dataset adapters into one canonical question/answer item.
//!
//! | format       | file                      | domain        | reference            |
//! |--------------|---------------------------|---------------|----------------------|
//! | `canonical`  | JSON lines                | `domain`      | `reference_answer`   |
//! | `medquad`    | CSV `question,answer,source,focus_area` | `focus_area`, else `source` | `answer` |
//! | `squad`      | SQuAD v1/v2 JSON          | article title | first answer span    |
//! | `truthfulqa` | CSV with `Category`, `Question`, `Best Answer` | `Category` | `Best Answer` |
//!
//! Rows without a question or a reference are skipped and counted.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub domain: String,
    pub question: String,
    pub reference_answer: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Canonical,
    Medquad,
    Squad,
    Truthfulqa,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    pub items: Vec<QaItem>,
    /// `(row, reason)` for every skipped row; rows count from 1.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("no valid rows ({skipped} skipped)")]
    Empty { skipped: usize },
}

pub fn ingest(path: &Path, format: Format) -> Result<Ingested, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    let out = ingest_str(&text, format)?;
    if !out.skipped.is_empty() {
        tracing::warn!(path = %path.display(), skipped = out.skipped.len(), "skipped malformed rows");
    }
    Ok(out)
}

pub fn ingest_str(text: &str, format: Format) -> Result<Ingested, IngestError> {
    let mut out = Ingested::default();
    match format {
        Format::Canonical => canonical(text, &mut out),
        Format::Medquad => csv_rows(text, &mut out, |row, n| {
            let domain = row.get("focus_area").filter(|d| !d.is_empty()).or(row.get("source")).cloned();
            (format!("medquad-{n}"), domain.unwrap_or_else(|| "medical".into()), row.get("question").cloned(), row.get("answer").cloned())
        })?,
        Format::Truthfulqa => csv_rows(text, &mut out, |row, n| {
            (
                format!("truthfulqa-{n}"),
                row.get("category").cloned().unwrap_or_else(|| "general".into()),
                row.get("question").cloned(),
                row.get("best answer").cloned(),
            )
        })?,
        Format::Squad => squad(text, &mut out)?,
    }
    if out.items.is_empty() {
        return Err(IngestError::Empty { skipped: out.skipped.len() });
    }
    Ok(out)
}

fn push(out: &mut Ingested, row: usize, id: String, domain: String, question: Option<String>, reference: Option<String>) {
    let question = question.map(|q| q.trim().to_string()).filter(|q| !q.is_empty());
    let reference = reference.map(|r| r.trim().to_string()).filter(|r| !r.is_empty());
    match (question, reference) {
        (Some(question), Some(reference_answer)) => out.items.push(QaItem { id, domain, question, reference_answer }),
        (None, _) => out.skipped.push((row, "missing question".into())),
        (_, None) => out.skipped.push((row, "missing reference answer".into())),
    }
}

fn canonical(text: &str, out: &mut Ingested) {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        domain: String,
        question: Option<String>,
        reference_answer: Option<String>,
    }
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str::<Row>(line) {
            Ok(r) => push(out, i + 1, r.id, r.domain, r.question, r.reference_answer),
            Err(e) => out.skipped.push((i + 1, e.to_string())),
        }
    }
}

fn csv_rows(
    text: &str,
    out: &mut Ingested,
    map: impl Fn(&HashMap<String, String>, usize) -> (String, String, Option<String>, Option<String>),
) -> Result<(), IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Format(format!("csv header: {e}")))?
        .iter()
        .map(|h| h.trim().to_lowercase())
        .collect();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        match record {
            Ok(record) => {
                let fields: HashMap<String, String> =
                    headers.iter().cloned().zip(record.iter().map(str::to_string)).collect();
                let (id, domain, q, r) = map(&fields, row);
                push(out, row, id, domain, q, r);
            }
            Err(e) => out.skipped.push((row, e.to_string())),
        }
    }
    Ok(())
}

fn squad(text: &str, out: &mut Ingested) -> Result<(), IngestError> {
    #[derive(Deserialize)]
    struct File {
        data: Vec<Article>,
    }
    #[derive(Deserialize)]
    struct Article {
        title: String,
        paragraphs: Vec<Paragraph>,
    }
    #[derive(Deserialize)]
    struct Paragraph {
        qas: Vec<Qa>,
    }
    #[derive(Deserialize)]
    struct Qa {
        id: String,
        question: String,
        #[serde(default)]
        answers: Vec<Answer>,
    }
    #[derive(Deserialize)]
    struct Answer {
        text: String,
    }
    let file: File = serde_json::from_str(text).map_err(|e| IngestError::Format(format!("squad json: {e}")))?;
    let mut row = 0;
    for article in file.data {
        for paragraph in article.paragraphs {
            for qa in paragraph.qas {
                row += 1;
                let reference = qa.answers.into_iter().next().map(|a| a.text);
                push(out, row, qa.id, article.title.clone(), Some(qa.question), reference);
            }
        }
    }
    Ok(())
}
