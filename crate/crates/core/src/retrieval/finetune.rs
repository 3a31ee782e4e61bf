use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bm25::{bm25_search, Bm25Index};
use super::dense::{dense_search, DenseIndex};
use super::run::{Qrels, Run};
use crate::contrastive::{StepRecord, TrainLog};
use crate::docmodel::{Document, GraphDocModel, Phase};
use crate::error::{Error, Result};
use crate::gradcore::{OptimConfig, Optimizer, Tape, Var};

/// One negative per query, drawn uniformly from the top `pool_size` hits
/// that are unjudged or graded 0. Queries whose pool has no such hit fall
/// back to a uniform draw over non-relevant corpus documents. Queries are
/// visited in the given order.
pub fn mine_hard_negatives<R: Rng + ?Sized>(
    run: &Run,
    qrels: &Qrels,
    qids: &[String],
    corpus_ids: &[String],
    pool_size: usize,
    rng: &mut R,
) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for qid in qids {
        let hits = run.get(qid).unwrap_or(&[]);
        let pool: Vec<&str> = hits
            .iter()
            .take(pool_size)
            .filter(|h| qrels.grade(qid, &h.doc_id) == 0)
            .map(|h| h.doc_id.as_str())
            .collect();
        let pick = if let Some(&d) = pool.choose(rng) {
            d.to_string()
        } else {
            let fallback: Vec<&String> = corpus_ids.iter().filter(|d| qrels.grade(qid, d) == 0).collect();
            match fallback.choose(rng) {
                Some(d) => (*d).clone(),
                None => match corpus_ids.choose(rng) {
                    Some(d) => d.clone(),
                    None => continue,
                },
            }
        };
        out.insert(qid.clone(), pick);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainQuery {
    pub qid: String,
    pub text: String,
    pub positive: String,
}

/// One training pair per query and top-graded document.
pub fn training_pairs(queries: &[(String, String)], qrels: &Qrels) -> Vec<TrainQuery> {
    queries
        .iter()
        .flat_map(|(qid, text)| {
            qrels.best(qid).into_iter().map(move |d| TrainQuery {
                qid: qid.clone(),
                text: text.clone(),
                positive: d.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
    /// Hard negatives come from this many top results.
    pub pool_size: usize,
    /// Switch from BM25 to model negatives halfway through.
    pub staged: bool,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            optim: OptimConfig::default(),
            pool_size: 100,
            staged: true,
            seed: 0,
        }
    }
}

/// Mean over queries of `−log softmax(q·d⁺)` against every positive and
/// negative in the batch.
pub fn retrieval_batch_loss(
    tape: &mut Tape,
    model: &GraphDocModel,
    queries: &[&str],
    positives: &[&Document],
    negatives: &[&Document],
) -> Result<Var> {
    if queries.len() != positives.len() || queries.len() != negatives.len() || queries.is_empty() {
        return Err(Error::Invalid("queries, positives and negatives must be equally many".into()));
    }
    let q = queries
        .iter()
        .map(|t| model.forward_query(tape, t))
        .collect::<Result<Vec<_>>>()?;
    let q = tape.concat_rows(&q)?;
    let docs = positives
        .iter()
        .chain(negatives)
        .map(|d| Ok(model.forward_document(tape, d, Phase::Train)?.embedding))
        .collect::<Result<Vec<_>>>()?;
    let d = tape.concat_rows(&docs)?;
    let scores = tape.linear(q, d)?;
    Ok(tape.cross_entropy(scores, (0..queries.len()).collect())?)
}

/// Top `k` BM25 results for each query.
pub fn bm25_run(index: &Bm25Index, queries: &[(String, String)], k: usize) -> Run {
    let hits: Vec<_> = queries.par_iter().map(|(_, t)| bm25_search(index, t, k)).collect();
    let mut run = Run::new();
    for ((qid, _), h) in queries.iter().zip(hits) {
        run.insert(qid.clone(), h);
    }
    run
}

/// Top `k` dense results for each query under `model`.
pub fn dense_run(model: &GraphDocModel, index: &DenseIndex, queries: &[(String, String)], k: usize) -> Result<Run> {
    let hits = queries
        .par_iter()
        .map(|(_, t)| dense_search(index, &model.encode_query(t)?, k))
        .collect::<Result<Vec<_>>>()?;
    let mut run = Run::new();
    for ((qid, _), h) in queries.iter().zip(hits) {
        run.insert(qid.clone(), h);
    }
    Ok(run)
}

/// Dual-encoder finetuning with in-batch plus one mined hard negative per
/// query. Negatives are redrawn each epoch from a candidate pool; the pool
/// is BM25's top results, replaced by the current model's top results at
/// the halfway epoch when `staged` is set.
pub fn finetune_retrieval(
    model: &mut GraphDocModel,
    corpus: &[Document],
    bm25: &Bm25Index,
    pairs: &[TrainQuery],
    qrels: &Qrels,
    config: &RetrievalConfig,
) -> Result<TrainLog> {
    if config.batch_size < 2 {
        return Err(Error::Config("retrieval batch size must be at least 2".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    for p in pairs {
        if !by_id.contains_key(p.positive.as_str()) {
            return Err(Error::UnknownDocument(p.positive.clone()));
        }
    }
    let per_epoch = pairs.len() / config.batch_size;
    if per_epoch == 0 {
        return Err(Error::Invalid(format!(
            "{} training pairs cannot fill a batch of {}",
            pairs.len(),
            config.batch_size
        )));
    }
    let corpus_ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
    let mut seen = std::collections::BTreeSet::new();
    let queries: Vec<(String, String)> = pairs
        .iter()
        .filter(|p| seen.insert(p.qid.clone()))
        .map(|p| (p.qid.clone(), p.text.clone()))
        .collect();
    let qids: Vec<String> = queries.iter().map(|(q, _)| q.clone()).collect();

    let mut pool = bm25_run(bm25, &queries, config.pool_size);
    let mut optimizer = Optimizer::new(config.optim, per_epoch * config.epochs)?;
    let mut neg_rng = ChaCha8Rng::seed_from_u64(config.seed);
    neg_rng.set_stream(2);
    let switch_epoch = if config.staged && config.epochs >= 2 {
        Some(config.epochs / 2)
    } else {
        None
    };
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        if Some(epoch) == switch_epoch {
            let index = DenseIndex::encode(model, corpus)?;
            pool = dense_run(model, &index, &queries, config.pool_size)?;
        }
        let negatives = mine_hard_negatives(&pool, qrels, &qids, &corpus_ids, config.pool_size, &mut neg_rng);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        for batch in order.chunks_exact(config.batch_size) {
            let texts: Vec<&str> = batch.iter().map(|&i| pairs[i].text.as_str()).collect();
            let pos: Vec<&Document> = batch.iter().map(|&i| by_id[pairs[i].positive.as_str()]).collect();
            let neg: Vec<&Document> = batch
                .iter()
                .map(|&i| by_id[negatives[&pairs[i].qid].as_str()])
                .collect();
            let mut tape = Tape::new();
            let loss = retrieval_batch_loss(&mut tape, model, &texts, &pos, &neg)?;
            let value = tape.value(loss).data()[0];
            let grads = tape.backprop(loss, model.params())?;
            let step = optimizer.step();
            let lr = optimizer.apply(model.params_mut(), &grads)?;
            log.records.push(StepRecord { step, lr, loss: value });
        }
    }
    Ok(log)
}
