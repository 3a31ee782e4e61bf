use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::{rank_hits, Hit};
use crate::docmodel::{words, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Inverted index with exact corpus statistics. Documents are referred to
/// internally by their position in `doc_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    /// term → (doc position, term frequency), ascending by position.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    /// Indexes each document's full text (all passages concatenated).
    pub fn build(corpus: &[Document], params: Bm25Params) -> Result<Self> {
        let texts: Vec<(String, String)> = corpus.iter().map(|d| (d.id.clone(), d.full_text())).collect();
        Self::from_texts(&texts, params)
    }

    pub fn from_texts(docs: &[(String, String)], params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Invalid("cannot index an empty corpus".into()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut seen = std::collections::HashSet::new();
        for (pos, (id, text)) in docs.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            let tokens: Vec<String> = words(text).collect();
            doc_lens.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((pos as u32, count));
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        if total == 0 {
            return Err(Error::Invalid("corpus contains no tokens".into()));
        }
        Ok(Self {
            params,
            doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
            doc_lens,
            avgdl: total as f64 / docs.len() as f64,
            postings,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, position: usize) -> u32 {
        self.doc_lens[position]
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn tf(&self, term: &str, position: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&(position as u32), |&(d, _)| d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.params.b + self.params.b * dl as f64 / self.avgdl;
        idf * tf / (tf + self.params.k1 * norm)
    }

    /// Deterministic JSON encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("bm25 index: {e}")))
    }
}

/// Score of one document for a tokenized query. Repeated query tokens
/// count once per occurrence.
pub fn bm25_score(index: &Bm25Index, query: &[String], doc_id: &str) -> Result<f64> {
    let pos = index
        .position(doc_id)
        .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
    let dl = index.doc_lens[pos];
    let mut score = 0.0;
    for term in query {
        let tf = index.tf(term, pos);
        if tf > 0 {
            score += index.term_weight(index.idf(term), tf, dl);
        }
    }
    Ok(score)
}

/// Top `k` documents sharing at least one term with the query, by
/// descending score then ascending doc id.
pub fn bm25_search(index: &Bm25Index, query: &str, k: usize) -> Vec<Hit> {
    let tokens: Vec<String> = words(query).collect();
    let mut scores = vec![0.0; index.doc_count()];
    let mut matched = vec![false; index.doc_count()];
    for term in &tokens {
        let Some(list) = index.postings.get(term) else { continue };
        let idf = index.idf(term);
        for &(d, tf) in list {
            let d = d as usize;
            scores[d] += index.term_weight(idf, tf, index.doc_lens[d]);
            matched[d] = true;
        }
    }
    let hits = (0..index.doc_count())
        .filter(|&d| matched[d])
        .map(|d| Hit::new(index.doc_ids[d].clone(), scores[d]))
        .collect();
    rank_hits(hits, k)
}
