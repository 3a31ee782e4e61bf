use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::Document;

/// Two disjoint passage-index sets covering a document's kept passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubDocumentPair {
    pub doc_id: String,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl SubDocumentPair {
    /// Materializes both halves as documents that keep the parent's section layout.
    pub fn documents(&self, parent: &Document) -> (Document, Document) {
        (parent.subset(&self.first), parent.subset(&self.second))
    }

    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![0u8; n];
        for &i in self.first.iter().chain(&self.second) {
            if i >= n {
                return false;
            }
            seen[i] += 1;
        }
        !self.first.is_empty() && !self.second.is_empty() && seen.iter().all(|&c| c == 1)
    }
}

/// How a document is cut into a positive pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Random half (floor) against the rest.
    #[default]
    Even,
    /// One passage against the rest.
    Ict,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "even" => Ok(SplitMode::Even),
            "ict" => Ok(SplitMode::Ict),
            other => Err(format!("unknown split mode `{other}`")),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Even => "even",
            SplitMode::Ict => "ict",
        })
    }
}

/// Uniformly random `⌊n/2⌋` passages against the rest. `None` when the
/// document has fewer than two passages.
pub fn split_even<R: Rng + ?Sized>(doc: &Document, rng: &mut R) -> Option<SubDocumentPair> {
    let n = doc.passage_count();
    if n < 2 {
        return None;
    }
    let mut first = sample(rng, n, n / 2).into_vec();
    first.sort_unstable();
    let second = (0..n).filter(|i| first.binary_search(i).is_err()).collect();
    Some(SubDocumentPair {
        doc_id: doc.id.clone(),
        first,
        second,
    })
}

/// One passage against the rest: with probability `first_passage_prob` the
/// first passage, otherwise a uniform pick over all passages.
pub fn split_ict<R: Rng + ?Sized>(doc: &Document, rng: &mut R, first_passage_prob: f64) -> Option<SubDocumentPair> {
    let n = doc.passage_count();
    if n < 2 {
        return None;
    }
    let chosen = if rng.gen::<f64>() < first_passage_prob {
        0
    } else {
        rng.gen_range(0..n)
    };
    Some(SubDocumentPair {
        doc_id: doc.id.clone(),
        first: vec![chosen],
        second: (0..n).filter(|&i| i != chosen).collect(),
    })
}
