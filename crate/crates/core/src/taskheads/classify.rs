use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{StepRecord, TrainLog};
use crate::docmodel::{Document, GraphDocModel, Phase, HEAD_BIAS, HEAD_WEIGHT};
use crate::error::{Error, Result};
use crate::gradcore::{AdamConfig, OptimConfig, Optimizer, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
    /// Train the head only; encoder parameters stay fixed.
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            optim: OptimConfig {
                lr: 2e-5,
                warmup: 0.1,
                adam: AdamConfig {
                    weight_decay: 0.01,
                    ..AdamConfig::default()
                },
                ..OptimConfig::default()
            },
            freeze_encoder: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyLog {
    pub steps: TrainLog,
    pub epochs: Vec<EpochRecord>,
}

impl ClassifyLog {
    /// First epoch (1-based) whose validation accuracy reaches `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.validation_accuracy.is_some_and(|a| a >= threshold))
            .map(|e| e.epoch + 1)
    }
}

fn label_index(model: &GraphDocModel, doc: &Document) -> Result<usize> {
    let label = doc.label.as_deref().ok_or_else(|| Error::InvalidDocument {
        id: doc.id.clone(),
        reason: "missing label".into(),
    })?;
    model
        .labels()
        .binary_search_by(|l| l.as_str().cmp(label))
        .map_err(|_| Error::UnknownLabel(label.to_string()))
}

/// Head logits `[N×C]` for a batch at the given phase.
pub fn batch_logits(tape: &mut Tape, model: &GraphDocModel, docs: &[&Document], phase: Phase) -> Result<Var> {
    if model.labels().is_empty() {
        return Err(Error::Invalid("model has no classification head".into()));
    }
    let rows = docs
        .iter()
        .map(|d| Ok(model.forward_document(tape, d, phase)?.embedding))
        .collect::<Result<Vec<_>>>()?;
    let emb = tape.concat_rows(&rows)?;
    let w = tape.param(model.params(), HEAD_WEIGHT)?;
    let b = tape.param(model.params(), HEAD_BIAS)?;
    Ok(tape.affine(emb, w, b)?)
}

/// Mean softmax cross-entropy of the head over a batch.
pub fn classification_loss(tape: &mut Tape, model: &GraphDocModel, docs: &[&Document]) -> Result<Var> {
    let targets = docs.iter().map(|d| label_index(model, d)).collect::<Result<Vec<_>>>()?;
    let logits = batch_logits(tape, model, docs, Phase::Train)?;
    Ok(tape.cross_entropy(logits, targets)?)
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Predicted label per document, computed in parallel.
pub fn predict(model: &GraphDocModel, docs: &[Document]) -> Result<Vec<String>> {
    docs.par_iter()
        .map(|d| {
            let mut tape = Tape::new();
            let logits = batch_logits(&mut tape, model, &[d], Phase::Infer)?;
            Ok(model.labels()[argmax(tape.value(logits).data())].clone())
        })
        .collect()
}

pub fn accuracy<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p.as_ref() == l.as_ref()).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy of `model` on labeled documents.
pub fn evaluate_accuracy(model: &GraphDocModel, docs: &[Document]) -> Result<f64> {
    let predictions = predict(model, docs)?;
    let labels = docs
        .iter()
        .map(|d| {
            d.label.clone().ok_or_else(|| Error::InvalidDocument {
                id: d.id.clone(),
                reason: "missing label".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    accuracy(&predictions, &labels)
}

fn head_only(grads: ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (path, g) in grads.iter() {
        if path == HEAD_WEIGHT || path == HEAD_BIAS {
            out.insert(path, g.clone());
        }
    }
    out
}

/// End-to-end (or head-only) finetuning. Each epoch is reshuffled with
/// `seed + epoch`; the final partial batch is kept. Validation accuracy is
/// recorded after every epoch when `validation` is non-empty.
pub fn finetune_classification(
    model: &mut GraphDocModel,
    train: &[Document],
    validation: &[Document],
    config: &ClassifyConfig,
) -> Result<ClassifyLog> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    if train.is_empty() {
        return Err(Error::Invalid("no training documents".into()));
    }
    for d in train.iter().chain(validation) {
        label_index(model, d)?;
    }
    let per_epoch = train.len().div_ceil(config.batch_size);
    let mut optimizer = Optimizer::new(config.optim, per_epoch * config.epochs)?;
    let mut log = ClassifyLog::default();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let docs: Vec<&Document> = batch.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let loss = classification_loss(&mut tape, model, &docs)?;
            let value = tape.value(loss).data()[0];
            let mut grads = tape.backprop(loss, model.params())?;
            if config.freeze_encoder {
                grads = head_only(grads);
            }
            let step = optimizer.step();
            let lr = optimizer.apply(model.params_mut(), &grads)?;
            log.steps.records.push(StepRecord { step, lr, loss: value });
            total += value;
        }
        let validation_accuracy = if validation.is_empty() {
            None
        } else {
            Some(evaluate_accuracy(model, validation)?)
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: total / per_epoch as f64,
            validation_accuracy,
        });
    }
    Ok(log)
}

/// `doc_id<TAB>label` per line.
pub fn predictions_tsv(docs: &[Document], predictions: &[String]) -> String {
    let mut out = String::new();
    for (d, p) in docs.iter().zip(predictions) {
        out.push_str(&d.id);
        out.push('\t');
        out.push_str(p);
        out.push('\n');
    }
    out
}
