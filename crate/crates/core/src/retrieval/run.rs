use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

impl Hit {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Descending score, then ascending doc id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Sorts by [`hit_order`] and keeps the first `k`.
pub fn rank_hits(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if hits.len() > k && k > 0 {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    hits.truncate(k);
    hits
}

/// Ranked results per query id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub queries: BTreeMap<String, Vec<Hit>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, hits: Vec<Hit>) {
        self.queries.insert(qid.into(), hits);
    }

    pub fn get(&self, qid: &str) -> Option<&[Hit]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Keeps only the listed queries.
    pub fn restricted_to(&self, qids: &[String]) -> Run {
        Run {
            queries: qids
                .iter()
                .filter_map(|q| self.queries.get(q).map(|h| (q.clone(), h.clone())))
                .collect(),
        }
    }

    /// TREC format: `qid Q0 docid rank score tag`, ranks from 1.
    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for (qid, hits) in &self.queries {
            for (rank, hit) in hits.iter().enumerate() {
                writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", hit.doc_id, rank + 1, hit.score).expect("string write");
            }
        }
        out
    }

    pub fn from_trec(text: &str, source: &str) -> Result<Run> {
        let mut queries: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
            }
            let rank: usize = fields[3].parse().map_err(|_| parse_err(format!("bad rank `{}`", fields[3])))?;
            let score: f64 = fields[4].parse().map_err(|_| parse_err(format!("bad score `{}`", fields[4])))?;
            queries
                .entry(fields[0].to_string())
                .or_default()
                .push((rank, Hit::new(fields[2], score)));
        }
        Ok(Run {
            queries: queries
                .into_iter()
                .map(|(q, mut hits)| {
                    hits.sort_by_key(|(r, _)| *r);
                    (q, hits.into_iter().map(|(_, h)| h).collect())
                })
                .collect(),
        })
    }
}

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments.entry(qid.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Docs carrying the query's highest positive grade, ascending id.
    pub fn best(&self, qid: &str) -> Vec<&str> {
        let Some(m) = self.judgments.get(qid) else {
            return vec![];
        };
        let top = m.values().copied().max().unwrap_or(0);
        if top == 0 {
            return vec![];
        }
        m.iter().filter(|(_, &g)| g == top).map(|(d, _)| d.as_str()).collect()
    }

    /// `qid 0 docid grade` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (qid, docs) in &self.judgments {
            for (doc, grade) in docs {
                writeln!(out, "{qid} 0 {doc} {grade}").expect("string write");
            }
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Qrels> {
        let mut q = Qrels::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let grade = (fields.len() == 4).then(|| fields[3].parse::<i64>().ok()).flatten();
            match grade {
                Some(g) if g >= 0 => q.insert(fields[0], fields[2], g as u32),
                _ => {
                    return Err(Error::Parse {
                        path: source.to_string(),
                        line: i + 1,
                        reason: "expected `qid 0 docid grade` with a nonnegative grade".into(),
                    })
                }
            }
        }
        Ok(q)
    }
}

/// `qid<TAB>text` per line.
pub fn queries_to_tsv(queries: &[(String, String)]) -> String {
    let mut out = String::new();
    for (qid, text) in queries {
        writeln!(out, "{qid}\t{text}").expect("string write");
    }
    out
}

pub fn queries_from_tsv(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((qid, body)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                reason: "expected `qid<TAB>text`".into(),
            });
        };
        if !seen.insert(qid.to_string()) {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                reason: format!("duplicate query id `{qid}`"),
            });
        }
        out.push((qid.to_string(), body.to_string()));
    }
    Ok(out)
}
