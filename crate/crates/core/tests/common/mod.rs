//! Test-only reference implementations, written with plain loops and no
//! dependency on the tape, used as independent oracles.
#![allow(dead_code)]

use graphdoc::docmodel::{build_graph, tokenize, Document, GraphDocModel, DocumentGraph, EMBEDDING, PROJ_BIAS, PROJ_WEIGHT};
use graphdoc::gradcore::ParamStore;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W v` for a row-major `[out×in]` matrix.
fn mat_vec(w: &[f64], out: usize, v: &[f64]) -> Vec<f64> {
    let inp = v.len();
    (0..out).map(|r| dot(&w[r * inp..(r + 1) * inp], v)).collect()
}

/// One GAT layer on explicit states.
pub fn reference_gat(
    params: &ParamStore,
    layer: usize,
    heads: usize,
    slope: f64,
    adjacency: &dyn Fn(usize, usize) -> bool,
    states: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = states.len();
    let d = states[0].len();
    let dh = d / heads;
    let mut merged = vec![Vec::with_capacity(d); n];
    let mut alphas = Vec::new();
    for h in 0..heads {
        let w = params.get(&format!("gat.{layer}.head{h}.weight")).unwrap().data();
        let a = params.get(&format!("gat.{layer}.head{h}.attn")).unwrap().data();
        let proj: Vec<Vec<f64>> = states.iter().map(|v| mat_vec(w, dh, v)).collect();
        let mut alpha = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut e = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if adjacency(i, j) {
                    let raw = dot(&a[..dh], &proj[i]) + dot(&a[dh..], &proj[j]);
                    e[j] = if raw > 0.0 { raw } else { slope * raw };
                }
            }
            let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().filter(|v| v.is_finite()).map(|v| (v - max).exp()).sum();
            for j in 0..n {
                if e[j].is_finite() {
                    alpha[i][j] = (e[j] - max).exp() / z;
                }
            }
            let row = &alpha[i];
            merged[i].extend((0..dh).map(|k| (0..n).map(|j| row[j] * proj[j][k]).sum::<f64>()));
        }
        alphas.push(alpha);
    }
    let out = merged
        .iter()
        .zip(states)
        .map(|(m, v)| {
            m.iter()
                .zip(v)
                .map(|(&x, &skip)| (if x > 0.0 { x } else { x.exp_m1() }) + skip)
                .collect()
        })
        .collect();
    (out, alphas)
}

/// Initial passage state: `tanh(W·mean(embeddings) + b)`.
pub fn reference_passage(model: &GraphDocModel, text: &str) -> Vec<f64> {
    let cfg = model.config();
    let p = model.params();
    let table = p.get(EMBEDDING).unwrap().data();
    let ids = tokenize(text, cfg.vocab_buckets, cfg.max_tokens);
    let mut pooled = vec![0.0; cfg.d_tok];
    for &id in &ids {
        for k in 0..cfg.d_tok {
            pooled[k] += table[id as usize * cfg.d_tok + k];
        }
    }
    if !ids.is_empty() {
        for v in &mut pooled {
            *v /= ids.len() as f64;
        }
    }
    let w = p.get(PROJ_WEIGHT).unwrap().data();
    let b = p.get(PROJ_BIAS).unwrap().data();
    mat_vec(w, cfg.d_model, &pooled)
        .iter()
        .zip(b)
        .map(|(x, bb)| (x + bb).tanh())
        .collect()
}

/// Whole-document forward pass at inference limits.
pub fn reference_document(model: &GraphDocModel, doc: &Document) -> Vec<f64> {
    let cfg = model.config();
    let doc = doc.truncated(cfg.max_passages_infer);
    let graph: DocumentGraph = build_graph(&doc, cfg.topology).unwrap();
    let passages: Vec<Vec<f64>> = doc.passages().map(|t| reference_passage(model, t)).collect();
    let mut doc_node = vec![0.0; cfg.d_model];
    for p in &passages {
        for (d, v) in doc_node.iter_mut().zip(p) {
            *d += v;
        }
    }
    for d in &mut doc_node {
        *d /= passages.len() as f64;
    }
    let mut states = vec![doc_node];
    states.extend(passages);
    for l in 0..cfg.layers {
        let adj = |i: usize, j: usize| graph.has_edge(i, j);
        states = reference_gat(model.params(), l, cfg.heads, cfg.attention_slope, &adj, &states).0;
    }
    states.swap_remove(0)
}

fn lower_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Exhaustive BM25: every document scored by rescanning the raw texts.
/// Returns matching documents by descending score, then ascending id.
pub fn brute_force_bm25(docs: &[(String, String)], query: &str, k1: f64, b: f64, k: usize) -> Vec<(String, f64)> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|(_, t)| lower_words(t)).collect();
    let n = docs.len() as f64;
    let avgdl = tokenized.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let q = lower_words(query);
    let mut scored = Vec::new();
    for (i, toks) in tokenized.iter().enumerate() {
        let mut score = 0.0;
        let mut matched = false;
        for term in &q {
            let tf = toks.iter().filter(|w| *w == term).count();
            if tf == 0 {
                continue;
            }
            matched = true;
            let df = tokenized.iter().filter(|t| t.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let tf = tf as f64;
            let norm = 1.0 - b + b * toks.len() as f64 / avgdl;
            score += idf * tf / (tf + k1 * norm);
        }
        if matched {
            scored.push((docs[i].0.clone(), score));
        }
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    scored.truncate(k);
    scored
}

/// Precision, reciprocal rank and linear-gain nDCG at `k` for one ranking,
/// counting grade ≥ 1 as relevant.
pub fn reference_metrics(ranking: &[&str], grades: &[(&str, u32)], k: usize) -> (f64, f64, f64) {
    let grade = |d: &str| grades.iter().find(|(g, _)| *g == d).map_or(0, |p| p.1);
    let top = &ranking[..ranking.len().min(k)];
    let relevant = top.iter().filter(|d| grade(d) > 0).count();
    let precision = relevant as f64 / k as f64;
    let mut rr = 0.0;
    for (i, d) in top.iter().enumerate() {
        if grade(d) > 0 {
            rr = 1.0 / (i as f64 + 1.0);
            break;
        }
    }
    let mut dcg = 0.0;
    for (i, d) in top.iter().enumerate() {
        dcg += grade(d) as f64 / (i as f64 + 2.0).log2();
    }
    let mut ideal: Vec<u32> = grades.iter().map(|g| g.1).filter(|&g| g > 0).collect();
    ideal.sort_by(|a, b| b.cmp(a));
    let mut idcg = 0.0;
    for (i, g) in ideal.iter().take(k).enumerate() {
        idcg += *g as f64 / (i as f64 + 2.0).log2();
    }
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    (precision, rr, ndcg)
}

/// Small corpora over a tiny vocabulary so that ties are frequent.
pub fn toy_corpus(rng: &mut impl rand::Rng) -> (Vec<(String, String)>, String) {
    const VOCAB: [&str; 8] = ["ant", "bee", "Cat", "dog", "eel", "fox", "gnu", "hen"];
    let docs = (0..rng.gen_range(1..=12))
        .map(|i| {
            let text = (0..rng.gen_range(1..=10))
                .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
                .collect::<Vec<_>>()
                .join(if rng.gen() { " " } else { ", " });
            (format!("d{:02}", rng.gen_range(0..100) * 100 + i), text)
        })
        .collect();
    let query = (0..rng.gen_range(1..=4))
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ");
    (docs, query)
}

/// A pair of runs over random document pools with frequent score ties.
pub fn random_run_pair(rng: &mut impl rand::Rng) -> (graphdoc::retrieval::Run, graphdoc::retrieval::Run) {
    use graphdoc::retrieval::{rank_hits, Hit, Run};
    fn make(rng: &mut impl rand::Rng) -> Run {
        let mut run = Run::new();
        for q in 0..rng.gen_range(1..5) {
            let hits: Vec<Hit> = (0..rng.gen_range(0..15))
                .map(|d| Hit::new(format!("d{d:02}"), rng.gen_range(0..6) as f64 * 0.5))
                .collect();
            run.insert(format!("q{q}"), rank_hits(hits, 100));
        }
        run
    }
    let a = make(rng);
    let b = make(rng);
    (a, b)
}

pub fn random_text(rng: &mut impl rand::Rng, words: usize) -> String {
    (0..words)
        .map(|_| format!("w{}", rng.gen_range(0..40)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_doc(rng: &mut impl rand::Rng, max_sections: usize, max_per_section: usize) -> Document {
    let sections = (0..rng.gen_range(1..=max_sections))
        .map(|_| {
            (0..rng.gen_range(1..=max_per_section))
                .map(|_| {
                    let n = rng.gen_range(1..12);
                    random_text(rng, n)
                })
                .collect()
        })
        .collect();
    Document::new("doc", sections)
}
