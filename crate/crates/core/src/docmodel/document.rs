use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A document as ordered sections of passage texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub sections: Vec<Vec<String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, sections: Vec<Vec<String>>) -> Self {
        Self {
            id: id.into(),
            label: None,
            sections,
        }
    }

    /// Single-section document.
    pub fn from_passages<S: Into<String>>(id: impl Into<String>, passages: impl IntoIterator<Item = S>) -> Self {
        Self::new(id, vec![passages.into_iter().map(Into::into).collect()])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn passage_count(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    /// Passages in document order, across sections.
    pub fn passages(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().flatten().map(String::as_str)
    }

    /// Section index of every passage, in document order.
    pub fn section_of_passages(&self) -> Vec<usize> {
        self.sections
            .iter()
            .enumerate()
            .flat_map(|(s, ps)| std::iter::repeat_n(s, ps.len()))
            .collect()
    }

    /// At least one passage, and no passage blank after trimming.
    pub fn validate(&self) -> Result<()> {
        if self.passage_count() == 0 {
            return Err(Error::EmptyDocument(self.id.clone()));
        }
        if let Some(pos) = self.passages().position(|p| p.trim().is_empty()) {
            return Err(Error::InvalidDocument {
                id: self.id.clone(),
                reason: format!("passage {pos} is blank"),
            });
        }
        Ok(())
    }

    /// Keeps only the passages at `indices` (document-order positions).
    /// Sections left empty disappear.
    pub fn subset(&self, indices: &[usize]) -> Document {
        let mut keep = vec![false; self.passage_count()];
        for &i in indices {
            if i < keep.len() {
                keep[i] = true;
            }
        }
        let mut pos = 0;
        let sections = self
            .sections
            .iter()
            .filter_map(|section| {
                let kept: Vec<String> = section
                    .iter()
                    .filter(|_| {
                        let k = keep[pos];
                        pos += 1;
                        k
                    })
                    .cloned()
                    .collect();
                (!kept.is_empty()).then_some(kept)
            })
            .collect();
        Document {
            id: self.id.clone(),
            label: self.label.clone(),
            sections,
        }
    }

    /// The first `max` passages in document order.
    pub fn truncated(&self, max: usize) -> Document {
        if self.passage_count() <= max {
            return self.clone();
        }
        self.subset(&(0..max).collect::<Vec<_>>())
    }

    /// All passages joined with single spaces.
    pub fn full_text(&self) -> String {
        self.passages().collect::<Vec<_>>().join(" ")
    }
}
