use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalOptions, Metric};
use super::run::{rank_hits, Hit, Qrels, Run};
use crate::error::{Error, Result};

/// How each system's scores are rescaled before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionNorm {
    /// Per-query min-max; a constant list maps to 1.
    #[default]
    MinMax,
    /// Scores used as they are.
    Raw,
}

impl std::str::FromStr for FusionNorm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "minmax" => Ok(FusionNorm::MinMax),
            "raw" => Ok(FusionNorm::Raw),
            other => Err(format!("unknown fusion normalization `{other}`")),
        }
    }
}

impl std::fmt::Display for FusionNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionNorm::MinMax => "minmax",
            FusionNorm::Raw => "raw",
        })
    }
}

/// Rescaled scores of one system's list plus the value a missing candidate gets.
fn normalized(hits: &[Hit], mode: FusionNorm) -> (BTreeMap<&str, f64>, f64) {
    let min = hits.iter().map(|h| h.score).fold(f64::INFINITY, f64::min);
    let max = hits.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let norm = |s: f64| match mode {
        FusionNorm::Raw => s,
        FusionNorm::MinMax if range > 0.0 => (s - min) / range,
        FusionNorm::MinMax => 1.0,
    };
    let map = hits.iter().map(|h| (h.doc_id.as_str(), norm(h.score))).collect();
    let floor = if hits.is_empty() { 0.0 } else { norm(min) };
    (map, floor)
}

/// Weighted average of per-query min-max normalized scores,
/// `w·dense + (1−w)·bm25`. A candidate missing from one system takes that
/// system's minimum. At `w = 0` and `w = 1` the other system has no weight
/// and the corresponding input run is returned as is (cut to `k`).
pub fn fuse(dense: &Run, bm25: &Run, w: f64, k: usize) -> Result<Run> {
    fuse_with(dense, bm25, w, k, FusionNorm::MinMax)
}

/// [`fuse`] with a choice of score normalization.
pub fn fuse_with(dense: &Run, bm25: &Run, w: f64, k: usize, norm: FusionNorm) -> Result<Run> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Invalid(format!("fusion weight {w} outside [0, 1]")));
    }
    let qids: BTreeSet<&String> = dense.queries.keys().chain(bm25.queries.keys()).collect();
    let mut out = Run::new();
    for qid in qids {
        let d = dense.get(qid).unwrap_or(&[]);
        let b = bm25.get(qid).unwrap_or(&[]);
        let hits = if w == 0.0 {
            b.iter().take(k).cloned().collect()
        } else if w == 1.0 {
            d.iter().take(k).cloned().collect()
        } else {
            let (dn, dfloor) = normalized(d, norm);
            let (bn, bfloor) = normalized(b, norm);
            let pool: BTreeSet<&str> = dn.keys().chain(bn.keys()).copied().collect();
            let fused = pool
                .into_iter()
                .map(|id| {
                    let ds = dn.get(id).copied().unwrap_or(dfloor);
                    let bs = bn.get(id).copied().unwrap_or(bfloor);
                    Hit::new(id, w * ds + (1.0 - w) * bs)
                })
                .collect();
            rank_hits(fused, k)
        };
        out.insert(qid.clone(), hits);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTuning {
    pub weight: f64,
    pub value: f64,
    /// `(w, metric)` at every grid point.
    pub grid: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub metric: Metric,
    pub eval: EvalOptions,
    /// Depth of the fused runs.
    pub k: usize,
    pub step: f64,
    pub norm: FusionNorm,
}

impl TuneOptions {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            eval: EvalOptions::default(),
            k: 100,
            step: 0.05,
            norm: FusionNorm::MinMax,
        }
    }
}

/// Grid search over `w ∈ {0, step, …, 1}` on the given (dev) runs. Ties go
/// to the smaller weight.
pub fn tune_fusion_weight(dense: &Run, bm25: &Run, qrels: &Qrels, opts: &TuneOptions) -> Result<FusionTuning> {
    let step = opts.step;
    let points = (1.0 / step).round();
    if step.is_nan() || step <= 0.0 || points < 1.0 || (points * step - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("grid step {step} must divide 1")));
    }
    if dense.is_empty() && bm25.is_empty() {
        return Err(Error::Invalid("no dev queries to tune on".into()));
    }
    let n = points as usize;
    let mut grid = Vec::with_capacity(n + 1);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=n {
        let w = i as f64 / n as f64;
        let value = evaluate(&fuse_with(dense, bm25, w, opts.k, opts.norm)?, qrels, opts.metric, opts.eval)?;
        grid.push((w, value));
        if best.is_none_or(|(_, v)| value > v) {
            best = Some((w, value));
        }
    }
    let (weight, value) = best.expect("grid is non-empty");
    Ok(FusionTuning { weight, value, grid })
}
