use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{nce_loss, nce_loss_one_sided, Similarity};
use super::split::{split_even, split_ict, SplitMode, SubDocumentPair};
use crate::docmodel::{Document, GraphDocModel, Phase};
use crate::error::{Error, Result};
use crate::gradcore::{check_gradients, GradCheckReport, OptimConfig, Optimizer, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mode: SplitMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
    /// Passages kept per document before splitting.
    pub max_passages: usize,
    /// ICT only: chance the single-passage side is the first passage.
    pub first_passage_prob: f64,
    pub similarity: Similarity,
    pub seed: u64,
    /// Invoke the checkpoint callback every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::Even,
            batch_size: 32,
            epochs: 1,
            optim: OptimConfig::default(),
            max_passages: 50,
            first_passage_prob: 0.5,
            similarity: Similarity::Dot,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("pretraining batch size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.max_passages < 2 {
            return Err(Error::Config("max_passages must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.first_passage_prob) {
            return Err(Error::Config("first_passage_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-step training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    /// `step\tlr\tloss` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tlr\tloss\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{:.6e}\t{:.9}\n", r.step, r.lr, r.loss));
        }
        out
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Draws the pair for one document according to `config.mode`.
pub fn split_document(doc: &Document, config: &PretrainConfig, rng: &mut ChaCha8Rng) -> Option<SubDocumentPair> {
    match config.mode {
        SplitMode::Even => split_even(doc, rng),
        SplitMode::Ict => split_ict(doc, rng, config.first_passage_prob),
    }
}

/// Stacks the training-phase embeddings of `docs` into an `[N×d]` matrix.
pub fn embed_batch(tape: &mut Tape, model: &GraphDocModel, docs: &[Document]) -> Result<Var> {
    let rows = docs
        .iter()
        .map(|d| Ok(model.forward_document(tape, d, Phase::Train)?.embedding))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.concat_rows(&rows)?)
}

/// Contrastive loss of one batch of split pairs, on a fresh tape.
pub fn batch_loss(
    tape: &mut Tape,
    model: &GraphDocModel,
    pairs: &[(SubDocumentPair, &Document)],
    config: &PretrainConfig,
) -> Result<Var> {
    let (firsts, seconds): (Vec<Document>, Vec<Document>) = pairs.iter().map(|(p, d)| p.documents(d)).unzip();
    let a = embed_batch(tape, model, &firsts)?;
    let b = embed_batch(tape, model, &seconds)?;
    match config.mode {
        SplitMode::Even => nce_loss(tape, a, b, config.similarity),
        SplitMode::Ict => nce_loss_one_sided(tape, a, b, config.similarity),
    }
}

/// Finite-difference check of the contrastive loss over every parameter of
/// `model`, with one fixed split of each document drawn from `config.seed`.
pub fn pretraining_gradcheck(
    model: &GraphDocModel,
    docs: &[Document],
    config: &PretrainConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let pairs = docs
        .iter()
        .map(|d| {
            split_document(d, config, &mut rng)
                .map(|p| (p, d))
                .ok_or_else(|| Error::InvalidDocument {
                    id: d.id.clone(),
                    reason: "needs at least two passages".into(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let model_config = model.config().clone();
    let labels = model.labels().to_vec();
    let loss = |tape: &mut Tape, params: &ParamStore| -> Result<Var> {
        let m = GraphDocModel::from_parts(model_config.clone(), params.clone(), labels.clone())?;
        batch_loss(tape, &m, &pairs, config)
    };
    check_gradients(loss, model.params(), eps)
}

/// Number of optimizer steps `pretrain` will take on `corpus`.
pub fn pretrain_steps(corpus: &[Document], config: &PretrainConfig) -> usize {
    let eligible = corpus
        .iter()
        .filter(|d| d.truncated(config.max_passages).passage_count() >= 2)
        .count();
    config.epochs * (eligible / config.batch_size)
}

/// Contrastive pretraining. Documents with fewer than two passages are
/// skipped, each epoch is reshuffled with `seed + epoch`, and a trailing
/// partial batch is dropped. `on_checkpoint` sees the model after every
/// `checkpoint_every`-th step.
pub fn pretrain(
    corpus: &[Document],
    model: &mut GraphDocModel,
    config: &PretrainConfig,
    mut on_checkpoint: impl FnMut(usize, &GraphDocModel) -> Result<()>,
) -> Result<TrainLog> {
    config.validate()?;
    let docs: Vec<Document> = corpus
        .iter()
        .map(|d| d.truncated(config.max_passages))
        .filter(|d| d.passage_count() >= 2)
        .collect();
    let per_epoch = docs.len() / config.batch_size;
    if per_epoch == 0 {
        return Err(Error::Invalid(format!(
            "{} splittable documents cannot fill a batch of {}",
            docs.len(),
            config.batch_size
        )));
    }
    let mut optimizer = Optimizer::new(config.optim, per_epoch * config.epochs)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    split_rng.set_stream(1);
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        for batch in order.chunks_exact(config.batch_size) {
            let pairs: Vec<(SubDocumentPair, &Document)> = batch
                .iter()
                .map(|&i| {
                    let pair = split_document(&docs[i], config, &mut split_rng).expect("at least two passages");
                    (pair, &docs[i])
                })
                .collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, model, &pairs, config)?;
            let value = tape.value(loss).data()[0];
            let grads = tape.backprop(loss, model.params())?;
            let step = optimizer.step();
            let lr = optimizer.apply(model.params_mut(), &grads)?;
            log.records.push(StepRecord { step, lr, loss: value });
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
                on_checkpoint(step + 1, model)?;
            }
        }
    }
    Ok(log)
}
