use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::Document;
use super::graph::{build_graph, DocumentGraph, GraphTopology};
use super::text::tokenize;
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Tape, Tensor, Var};

pub const EMBEDDING: &str = "encoder.embedding";
pub const PROJ_WEIGHT: &str = "encoder.proj.weight";
pub const PROJ_BIAS: &str = "encoder.proj.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Architecture and input-size limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node embedding size.
    pub d_model: usize,
    /// Token embedding size of the pooled passage featurizer.
    pub d_tok: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hash buckets for token ids; a power of two.
    pub vocab_buckets: usize,
    pub max_tokens: usize,
    pub topology: GraphTopology,
    pub attention_slope: f64,
    pub max_passages_train: usize,
    pub max_passages_infer: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            d_tok: 128,
            heads: 2,
            layers: 2,
            vocab_buckets: 32768,
            max_tokens: 128,
            topology: GraphTopology::FullyConnected,
            attention_slope: 0.2,
            max_passages_train: 50,
            max_passages_infer: 100,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d_model == 0 || self.d_tok == 0 {
            return fail("d_model and d_tok must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("heads ({}) must divide d_model ({})", self.heads, self.d_model));
        }
        if self.layers == 0 {
            return fail("at least one graph attention layer is required".into());
        }
        if !self.vocab_buckets.is_power_of_two() || self.vocab_buckets > u32::MAX as usize {
            return fail(format!("vocab_buckets ({}) must be a power of two", self.vocab_buckets));
        }
        if self.max_tokens == 0 || self.max_passages_train == 0 || self.max_passages_infer == 0 {
            return fail("token and passage limits must be positive".into());
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Every parameter path with its shape, in lexicographic order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            (EMBEDDING.to_string(), vec![self.vocab_buckets, self.d_tok]),
            (PROJ_BIAS.to_string(), vec![self.d_model]),
            (PROJ_WEIGHT.to_string(), vec![self.d_model, self.d_tok]),
        ];
        for l in 0..self.layers {
            let layer = GatLayer::new(self, l);
            for h in 0..self.heads {
                out.push((layer.weight_path(h), vec![self.d_head(), self.d_model]));
                out.push((layer.attn_path(h), vec![2 * self.d_head()]));
            }
        }
        out.sort();
        out
    }
}

/// Whether passage limits for training or inference apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Parameter paths and hyperparameters of one graph attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub index: usize,
    pub heads: usize,
    pub d_head: usize,
    pub slope: f64,
}

impl GatLayer {
    pub fn new(config: &ModelConfig, index: usize) -> Self {
        Self {
            index,
            heads: config.heads,
            d_head: config.d_head(),
            slope: config.attention_slope,
        }
    }

    pub fn weight_path(&self, head: usize) -> String {
        format!("gat.{}.head{}.weight", self.index, head)
    }

    pub fn attn_path(&self, head: usize) -> String {
        format!("gat.{}.head{}.attn", self.index, head)
    }
}

/// Mean of the passage rows, `[n×d] -> [1×d]`.
pub fn init_doc_node(tape: &mut Tape, passages: Var) -> Result<Var> {
    if tape.value(passages).rows() == 0 {
        return Err(Error::Invalid("no passage vectors to average".into()));
    }
    Ok(tape.mean_rows(passages)?)
}

/// One multi-head graph attention layer with ELU and a skip connection.
///
/// Per head: `e_ij = LeakyReLU(a · [W v_i ‖ W v_j])`, normalized over the
/// closed neighborhood of `i`, then `Σ_j α_ij W v_j`. Heads are concatenated.
/// Returns the new states and each head's attention matrix.
pub fn gat_layer(
    tape: &mut Tape,
    params: &ParamStore,
    layer: &GatLayer,
    graph: &DocumentGraph,
    states: Var,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.value(states).rows();
    if n != graph.node_count() {
        return Err(Error::Invalid(format!(
            "{n} state rows for a graph of {} nodes",
            graph.node_count()
        )));
    }
    let mask = graph.mask();
    let mut outputs = Vec::with_capacity(layer.heads);
    let mut attention = Vec::with_capacity(layer.heads);
    for h in 0..layer.heads {
        let w = tape.param(params, &layer.weight_path(h))?;
        let a = tape.param(params, &layer.attn_path(h))?;
        let projected = tape.linear(states, w)?;
        let a = tape.reshape(a, &[2, layer.d_head])?;
        let halves = tape.linear(projected, a)?;
        let scores = tape.pair_scores(halves)?;
        let scores = tape.leaky_relu(scores, layer.slope)?;
        let alpha = tape.masked_softmax(scores, Arc::clone(&mask))?;
        outputs.push(tape.matmul(alpha, projected)?);
        attention.push(alpha);
    }
    let merged = tape.concat_cols(&outputs)?;
    let activated = tape.elu(merged)?;
    Ok((tape.add(activated, states)?, attention))
}

/// Tape handles produced by a document forward pass.
#[derive(Debug, Clone)]
pub struct DocumentForward {
    /// Final document-node row, `[1×d_model]`.
    pub embedding: Var,
    /// Initial node states, `[(n+1)×d_model]`.
    pub initial: Var,
    /// Per layer, per head attention matrices.
    pub attention: Vec<Vec<Var>>,
    pub graph: DocumentGraph,
}

/// Learnable parameters plus configuration. A classification head, when
/// attached, lives in the same store under `head.*` with its labels here.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDocModel {
    config: ModelConfig,
    params: ParamStore,
    labels: Vec<String>,
}

fn uniform_fill(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let fan_in = *shape.last().expect("non-empty shape") as f64;
    let bound = 1.0 / fan_in.sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

impl GraphDocModel {
    /// Seeded initialization: biases zero, every other tensor
    /// uniform in ±1/√fan_in, filled in path order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (path, shape) in config.parameter_shapes() {
            let value = if path.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                uniform_fill(&mut rng, &shape)
            };
            params.insert(path, value);
        }
        Ok(Self {
            config,
            params,
            labels: Vec::new(),
        })
    }

    /// Reassembles a model, checking every expected parameter is present
    /// with the right shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore, labels: Vec<String>) -> Result<Self> {
        config.validate()?;
        let mut expected = config.parameter_shapes();
        if !labels.is_empty() {
            expected.push((HEAD_BIAS.into(), vec![labels.len()]));
            expected.push((HEAD_WEIGHT.into(), vec![labels.len(), config.d_model]));
        }
        for (path, shape) in &expected {
            let t = params
                .get(path)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{path}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{path}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if params.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters present, {} expected",
                params.len(),
                expected.len()
            )));
        }
        Ok(Self {
            config,
            params,
            labels,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Adds (or replaces) a linear classification head over `labels`,
    /// which are sorted and deduplicated.
    pub fn attach_head(&mut self, labels: impl IntoIterator<Item = String>, seed: u64) -> Result<()> {
        let mut labels: Vec<String> = labels.into_iter().collect();
        labels.sort();
        labels.dedup();
        if labels.len() < 2 {
            return Err(Error::Invalid("a classifier needs at least two labels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params
            .insert(HEAD_WEIGHT, uniform_fill(&mut rng, &[labels.len(), self.config.d_model]));
        self.params.insert(HEAD_BIAS, Tensor::zeros(&[labels.len()]));
        self.labels = labels;
        Ok(())
    }

    pub fn tokens(&self, text: &str) -> Vec<u32> {
        tokenize(text, self.config.vocab_buckets, self.config.max_tokens)
    }

    /// Initial passage node states `tanh(W·meanpool(tokens) + b)`, one row per text.
    pub fn passage_states(&self, tape: &mut Tape, texts: &[&str]) -> Result<Var> {
        let ids: Vec<Vec<u32>> = texts.iter().map(|t| self.tokens(t)).collect();
        self.passage_states_from_ids(tape, ids)
    }

    pub fn passage_states_from_ids(&self, tape: &mut Tape, ids: Vec<Vec<u32>>) -> Result<Var> {
        let table = tape.param(&self.params, EMBEDDING)?;
        let w = tape.param(&self.params, PROJ_WEIGHT)?;
        let b = tape.param(&self.params, PROJ_BIAS)?;
        let pooled = tape.embed_mean(table, Arc::new(ids))?;
        let projected = tape.affine(pooled, w, b)?;
        Ok(tape.tanh(projected)?)
    }

    fn limit(&self, phase: Phase) -> usize {
        match phase {
            Phase::Train => self.config.max_passages_train,
            Phase::Infer => self.config.max_passages_infer,
        }
    }

    /// Full graph forward pass; the document is truncated to the phase's
    /// passage limit first.
    pub fn forward_document(&self, tape: &mut Tape, doc: &Document, phase: Phase) -> Result<DocumentForward> {
        let doc = doc.truncated(self.limit(phase));
        if doc.passage_count() == 0 {
            return Err(Error::EmptyDocument(doc.id.clone()));
        }
        let graph = build_graph(&doc, self.config.topology)?;
        let texts: Vec<&str> = doc.passages().collect();
        let passages = self.passage_states(tape, &texts)?;
        let doc_node = init_doc_node(tape, passages)?;
        let initial = tape.concat_rows(&[doc_node, passages])?;
        let mut states = initial;
        let mut attention = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let layer = GatLayer::new(&self.config, l);
            let (next, alphas) = gat_layer(tape, &self.params, &layer, &graph, states)?;
            states = next;
            attention.push(alphas);
        }
        let embedding = tape.row(states, 0)?;
        Ok(DocumentForward {
            embedding,
            initial,
            attention,
            graph,
        })
    }

    /// A query is a single-node graph: its embedding is the initial passage
    /// state, with no attention layers applied.
    pub fn forward_query(&self, tape: &mut Tape, text: &str) -> Result<Var> {
        self.passage_states(tape, &[text])
    }

    /// Inference-time document embedding.
    pub fn encode_document(&self, doc: &Document) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let fwd = self.forward_document(&mut tape, doc, Phase::Infer)?;
        Ok(tape.value(fwd.embedding).data().to_vec())
    }

    /// Inference embeddings for a corpus, computed in parallel, in input order.
    pub fn encode_corpus(&self, docs: &[Document]) -> Result<Vec<Vec<f64>>> {
        docs.par_iter().map(|d| self.encode_document(d)).collect()
    }

    pub fn encode_query(&self, text: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.forward_query(&mut tape, text)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Last-layer attention averaged over heads, `[(n+1)×(n+1)]`.
    pub fn export_attention(&self, doc: &Document) -> Result<Tensor> {
        let mut tape = Tape::new();
        let fwd = self.forward_document(&mut tape, doc, Phase::Infer)?;
        let last = fwd.attention.last().expect("at least one layer");
        let n = fwd.graph.node_count();
        let mut mean = vec![0.0; n * n];
        for &alpha in last {
            for (m, a) in mean.iter_mut().zip(tape.value(alpha).data()) {
                *m += a;
            }
        }
        for m in &mut mean {
            *m /= last.len() as f64;
        }
        Ok(Tensor::matrix(n, n, mean)?)
    }
}

/// Attention matrix as CSV: a `node_0..node_n` header, then one row per source node.
pub fn attention_csv(matrix: &Tensor) -> String {
    let n = matrix.cols();
    let mut out = (0..n).map(|i| format!("node_{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..matrix.rows() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:.9}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
