use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::{Document, GraphDocModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closest centroid; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, point);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. A cluster left empty is moved to the
/// point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 || points.len() < k {
        return Err(Error::Invalid(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Invalid("points differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut inertia = Vec::new();
    for _ in 0..max_iters.max(1) {
        let scored: Vec<(usize, f64)> = points.iter().map(|p| nearest(&centroids, p)).collect();
        let next: Vec<usize> = scored.iter().map(|s| s.0).collect();
        inertia.push(scored.iter().map(|s| s.1).sum());
        if next == assignment {
            break;
        }
        assignment = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[assignment[a]]);
                        let db = sq_dist(&points[b], &centroids[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty");
                centroids[c] = points[far].clone();
                counts[assignment[far]] -= 1;
                counts[c] = 1;
                assignment[far] = c;
            }
        }
    }
    Ok(ClusterAssignment {
        assignment,
        centroids,
        inertia,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    /// I / sqrt(H(C)·H(L))
    #[default]
    Sqrt,
    /// I / ((H(C)+H(L))/2)
    Arithmetic,
}

impl std::str::FromStr for NmiNorm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sqrt" => Ok(NmiNorm::Sqrt),
            "arithmetic" => Ok(NmiNorm::Arithmetic),
            other => Err(format!("unknown NMI normalization `{other}`")),
        }
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!("{a} assignments for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Invalid("empty clustering".into()));
    }
    Ok(())
}

/// Normalized mutual information with natural logs. If either partition is
/// a single block the value is 0, unless both are (then 1).
pub fn nmi<L: Ord>(assignment: &[usize], labels: &[L], norm: NmiNorm) -> Result<f64> {
    check_lengths(assignment.len(), labels.len())?;
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(usize, &L), usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_label: BTreeMap<&L, usize> = BTreeMap::new();
    for (&c, l) in assignment.iter().zip(labels) {
        *joint.entry((c, l)).or_default() += 1;
        *by_cluster.entry(c).or_default() += 1;
        *by_label.entry(l).or_default() += 1;
    }
    let hc = entropy(by_cluster.values().copied(), n);
    let hl = entropy(by_label.values().copied(), n);
    if by_cluster.len() == 1 || by_label.len() == 1 {
        return Ok(if by_cluster.len() == 1 && by_label.len() == 1 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (&(c, l), &count) in &joint {
        let pxy = count as f64 / n;
        let px = by_cluster[&c] as f64 / n;
        let py = by_label[l] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let denom = match norm {
        NmiNorm::Sqrt => (hc * hl).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (hc + hl),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Fraction of items carrying their cluster's majority label.
pub fn purity<L: Ord>(assignment: &[usize], labels: &[L]) -> Result<f64> {
    check_lengths(assignment.len(), labels.len())?;
    let mut table: BTreeMap<usize, BTreeMap<&L, usize>> = BTreeMap::new();
    for (&c, l) in assignment.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Number of clusters; 0 means one per distinct training label.
    pub k: usize,
    pub max_iters: usize,
    /// L2-normalize embeddings before clustering.
    pub normalize: bool,
    pub nmi: NmiNorm,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 0,
            max_iters: 100,
            normalize: false,
            nmi: NmiNorm::Sqrt,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub nmi: f64,
    pub purity: f64,
    pub k: usize,
    pub test_assignment: Vec<usize>,
}

fn l2_normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn labels_of(docs: &[Document]) -> Result<Vec<&str>> {
    docs.iter()
        .map(|d| {
            d.label.as_deref().ok_or_else(|| Error::InvalidDocument {
                id: d.id.clone(),
                reason: "missing label".into(),
            })
        })
        .collect()
}

/// Fits centroids on training embeddings, assigns each test document to its
/// nearest centroid, and scores against test labels. Labels are used only
/// for choosing the default `k` and for scoring.
pub fn cluster_eval(
    model: &GraphDocModel,
    train: &[Document],
    test: &[Document],
    config: &ClusterConfig,
) -> Result<ClusterReport> {
    let train_labels = labels_of(train)?;
    let test_labels = labels_of(test)?;
    let k = if config.k == 0 {
        let mut distinct = train_labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        distinct.len()
    } else {
        config.k
    };
    let prep = |v: Vec<f64>| if config.normalize { l2_normalized(v) } else { v };
    let train_emb: Vec<Vec<f64>> = model.encode_corpus(train)?.into_iter().map(prep).collect();
    let test_emb: Vec<Vec<f64>> = model.encode_corpus(test)?.into_iter().map(prep).collect();
    let fit = kmeans(&train_emb, k, config.max_iters, config.seed)?;
    let test_assignment: Vec<usize> = test_emb.iter().map(|p| nearest(&fit.centroids, p).0).collect();
    Ok(ClusterReport {
        nmi: nmi(&test_assignment, &test_labels, config.nmi)?,
        purity: purity(&test_assignment, &test_labels)?,
        k,
        test_assignment,
    })
}
