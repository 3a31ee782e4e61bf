use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::docmodel::{split_into_passages, Document};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    title: Option<String>,
    #[serde(default)]
    sections: Option<Vec<Vec<String>>>,
    #[serde(default)]
    text: Option<String>,
}

/// Parses JSONL corpus text. `source` names the input in errors.
pub fn parse_corpus(text: &str, source: &str, passage_words: usize) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let sections = match (record.sections, record.text) {
            (Some(s), None) => s,
            (None, Some(t)) => vec![split_into_passages(&t, passage_words)],
            _ => return Err(err("exactly one of `sections` or `text` is required".into())),
        };
        let doc = Document {
            id: record.id,
            label: record.label,
            sections,
        };
        doc.validate()?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>, passage_words: usize) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), passage_words)
}

/// One `{"id", "label"?, "sections"}` object per line.
pub fn corpus_to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("document serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus_to_jsonl(docs)).map_err(|e| Error::io(path, e))
}
