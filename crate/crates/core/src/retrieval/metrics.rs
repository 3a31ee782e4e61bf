use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{Hit, Qrels, Run};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Precision,
    Mrr,
    Ndcg,
}

/// A cutoff metric such as `ndcg@20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub k: usize,
}

impl Metric {
    pub fn new(kind: MetricKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("metric cutoff must be at least 1".into()));
        }
        Ok(Self { kind, k })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Precision => "p",
            MetricKind::Mrr => "mrr",
            MetricKind::Ndcg => "ndcg",
        };
        write!(f, "{name}@{}", self.k)
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (name, k) = s.split_once('@').ok_or_else(|| format!("metric `{s}` lacks an @k cutoff"))?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "p" | "precision" => MetricKind::Precision,
            "mrr" => MetricKind::Mrr,
            "ndcg" => MetricKind::Ndcg,
            other => return Err(format!("unknown metric `{other}`")),
        };
        let k: usize = k.parse().map_err(|_| format!("bad cutoff `{k}`"))?;
        Metric::new(kind, k).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade − 1
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Minimum grade counted as relevant by precision and MRR.
    pub relevance_level: u32,
    pub gain: Gain,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            relevance_level: 1,
            gain: Gain::Linear,
        }
    }
}

fn gain(grade: u32, kind: Gain) -> f64 {
    match kind {
        Gain::Linear => grade as f64,
        Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Metric value for one ranked list against one query's judgments.
pub fn score_query(hits: &[Hit], judged: Option<&BTreeMap<String, u32>>, metric: Metric, opts: EvalOptions) -> f64 {
    let grade = |d: &str| judged.and_then(|m| m.get(d)).copied().unwrap_or(0);
    let top = &hits[..hits.len().min(metric.k)];
    match metric.kind {
        MetricKind::Precision => {
            top.iter().filter(|h| grade(&h.doc_id) >= opts.relevance_level.max(1)).count() as f64 / metric.k as f64
        }
        MetricKind::Mrr => top
            .iter()
            .position(|h| grade(&h.doc_id) >= opts.relevance_level.max(1))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64),
        MetricKind::Ndcg => {
            let dcg: f64 = top
                .iter()
                .enumerate()
                .map(|(i, h)| gain(grade(&h.doc_id), opts.gain) * discount(i + 1))
                .sum();
            let mut ideal: Vec<u32> = judged.map(|m| m.values().copied().filter(|&g| g > 0).collect()).unwrap_or_default();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = ideal
                .iter()
                .take(metric.k)
                .enumerate()
                .map(|(i, &g)| gain(g, opts.gain) * discount(i + 1))
                .sum();
            if idcg > 0.0 {
                dcg / idcg
            } else {
                0.0
            }
        }
    }
}

/// Per-query values over every query in the run.
pub fn per_query(run: &Run, qrels: &Qrels, metric: Metric, opts: EvalOptions) -> BTreeMap<String, f64> {
    run.queries
        .iter()
        .map(|(q, hits)| (q.clone(), score_query(hits, qrels.for_query(q), metric, opts)))
        .collect()
}

/// Mean over the run's queries; queries without relevant documents count as 0.
pub fn evaluate(run: &Run, qrels: &Qrels, metric: Metric, opts: EvalOptions) -> Result<f64> {
    if run.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty run".into()));
    }
    let values = per_query(run, qrels, metric, opts);
    Ok(values.values().sum::<f64>() / values.len() as f64)
}

pub fn precision_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    evaluate(run, qrels, Metric::new(MetricKind::Precision, k)?, EvalOptions::default())
}

pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    evaluate(run, qrels, Metric::new(MetricKind::Mrr, k)?, EvalOptions::default())
}

pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    evaluate(run, qrels, Metric::new(MetricKind::Ndcg, k)?, EvalOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(ids: &[&str]) -> Run {
        let mut r = Run::new();
        r.insert(
            "q",
            ids.iter().enumerate().map(|(i, d)| Hit::new(*d, -(i as f64))).collect(),
        );
        r
    }

    fn qrels_of(grades: &[(&str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for (d, g) in grades {
            q.insert("q", *d, *g);
        }
        q
    }

    #[test]
    fn graded_ndcg_by_hand() {
        let qrels = qrels_of(&[("a", 3), ("b", 2), ("c", 0)]);
        let v = ndcg_at_k(&run_of(&["b", "a", "c"]), &qrels, 3).unwrap();
        let dcg = 2.0 + 3.0 / 3f64.log2();
        let idcg = 3.0 + 2.0 / 3f64.log2();
        assert!((v - dcg / idcg).abs() < 1e-12);
        assert!((v - 0.9134).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_empty() {
        let qrels = qrels_of(&[("a", 1), ("b", 1)]);
        let perfect = run_of(&["a", "b", "x"]);
        assert_eq!(ndcg_at_k(&perfect, &qrels, 10).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&perfect, &qrels, 10).unwrap(), 1.0);
        assert_eq!(precision_at_k(&perfect, &qrels, 2).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&perfect, &Qrels::new(), 10).unwrap(), 0.0);
        assert!(precision_at_k(&perfect, &qrels, 0).is_err());
    }

    #[test]
    fn mrr_third_rank() {
        let qrels = qrels_of(&[("c", 1)]);
        assert!((mrr_at_k(&run_of(&["a", "b", "c"]), &qrels, 10).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr_at_k(&run_of(&["a", "b", "c"]), &qrels, 2).unwrap(), 0.0);
    }

    #[test]
    fn relevance_level_filters_grades() {
        let qrels = qrels_of(&[("a", 1), ("b", 2)]);
        let opts = EvalOptions {
            relevance_level: 2,
            ..EvalOptions::default()
        };
        let m = Metric::new(MetricKind::Mrr, 10).unwrap();
        assert_eq!(evaluate(&run_of(&["a", "b"]), &qrels, m, opts).unwrap(), 0.5);
    }

    #[test]
    fn exponential_gain() {
        let qrels = qrels_of(&[("a", 2), ("b", 1)]);
        let opts = EvalOptions {
            gain: Gain::Exponential,
            ..EvalOptions::default()
        };
        let m = Metric::new(MetricKind::Ndcg, 2).unwrap();
        let v = evaluate(&run_of(&["b", "a"]), &qrels, m, opts).unwrap();
        let expected = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn metric_names_round_trip() {
        for s in ["p@20", "mrr@10", "ndcg@20"] {
            assert_eq!(s.parse::<Metric>().unwrap().to_string(), s);
        }
        assert!("ndcg".parse::<Metric>().is_err());
        assert!("ndcg@0".parse::<Metric>().is_err());
    }
}
