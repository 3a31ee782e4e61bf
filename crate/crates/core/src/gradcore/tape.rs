//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive is evaluated by [`evaluate`], which both recording and
//! [`Tape::replay`] call, so replaying a trace runs exactly the same
//! arithmetic as the original forward pass.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{shape_err, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Tanh,
    /// ELU with alpha = 1.
    Elu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::LeakyRelu(_) => "leaky_relu",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    /// x·Wᵀ (+ b)
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Pointwise { x: Var, act: Activation },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    MeanRows { x: Var },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Row { x: Var, index: usize },
    Transpose { x: Var },
    Reshape { x: Var, shape: Vec<usize> },
    PairScores { s: Var },
    MaskedSoftmax { scores: Var, mask: Arc<Vec<bool>> },
    EmbedMean { table: Var, ids: Arc<Vec<Vec<u32>>> },
    L2NormalizeRows { x: Var },
    CrossEntropy { logits: Var, targets: Arc<Vec<usize>> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::Affine { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::MatMul { a, b } | Op::Add { a, b } => vec![*a, *b],
            Op::Pointwise { x, .. }
            | Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::MeanRows { x }
            | Op::Row { x, .. }
            | Op::Transpose { x }
            | Op::Reshape { x, .. }
            | Op::L2NormalizeRows { x } => vec![*x],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::PairScores { s } => vec![*s],
            Op::MaskedSoftmax { scores, .. } => vec![*scores],
            Op::EmbedMean { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::MatMul { .. } => "matmul",
            Op::Pointwise { act, .. } => act.name(),
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::MeanRows { .. } => "mean_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Row { .. } => "row",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::PairScores { .. } => "pair_scores",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::EmbedMean { .. } => "embed_mean",
            Op::L2NormalizeRows { .. } => "l2_normalize",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Stable softmax over the `true` entries of `mask`; masked entries are 0.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>, TensorError> {
    if scores.len() != mask.len() {
        return Err(shape_err(
            "masked_softmax",
            format!("{} scores vs {} mask entries", scores.len(), mask.len()),
        ));
    }
    let mut out = vec![0.0; scores.len()];
    softmax_row(scores, mask, &mut out).map_err(|_| TensorError::EmptyNeighborhood(0))?;
    Ok(out)
}

fn softmax_row(scores: &[f64], mask: &[bool], out: &mut [f64]) -> Result<(), ()> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut total = 0.0;
    for ((o, s), &m) in out.iter_mut().zip(scores).zip(mask) {
        *o = if m { (s - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape().len() {
        1 | 2 => Ok((t.rows(), t.cols())),
        _ => Err(shape_err(op, format!("expected a matrix, got {:?}", t.shape()))),
    }
}

/// Runs one primitive on concrete input values.
fn evaluate(op: &Op, values: &[&Tensor]) -> Result<Tensor, TensorError> {
    let name = op.name();
    match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::Affine { b, .. } => {
            let (x, w) = (values[0], values[1]);
            let (m, k) = require_matrix(name, x)?;
            let (n, kw) = require_matrix(name, w)?;
            if k != kw {
                return Err(shape_err(name, format!("x has {k} columns, W has {kw}")));
            }
            let bias = if b.is_some() {
                let bias = values[2];
                if bias.len() != n {
                    return Err(shape_err(name, format!("bias has {} entries, W has {n} rows", bias.len())));
                }
                Some(bias.data())
            } else {
                None
            };
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let xi = x.row(i);
                for j in 0..n {
                    let wj = w.row(j);
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += xi[l] * wj[l];
                    }
                    out[i * n + j] = acc + bias.map_or(0.0, |b| b[j]);
                }
            }
            Tensor::new(vec![m, n], out)
        }
        Op::MatMul { .. } => {
            let (a, b) = (values[0], values[1]);
            let (m, k) = require_matrix(name, a)?;
            let (kb, n) = require_matrix(name, b)?;
            if k != kb || b.shape().len() != 2 {
                return Err(shape_err(name, format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for l in 0..k {
                    let av = a.at(i, l);
                    let brow = b.row(l);
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        Op::Pointwise { act, .. } => {
            let x = values[0];
            let data = x.data().iter().map(|&v| act.apply(v)).collect();
            Tensor::new(x.shape().to_vec(), data)
        }
        Op::Add { .. } => {
            let (a, b) = (values[0], values[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(name, format!("{:?} + {:?}", a.shape(), b.shape())));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::Scale { factor, .. } => {
            let x = values[0];
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect())
        }
        Op::Sum { .. } => Ok(Tensor::scalar(values[0].data().iter().sum())),
        Op::MeanRows { .. } => {
            let x = values[0];
            let (m, d) = require_matrix(name, x)?;
            if m == 0 {
                return Err(shape_err(name, "no rows to average"));
            }
            let mut out = vec![0.0; d];
            for i in 0..m {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            for o in &mut out {
                *o /= m as f64;
            }
            Tensor::new(vec![1, d], out)
        }
        Op::ConcatRows(_) => {
            let d = values.first().map_or(0, |t| t.cols());
            let mut rows = 0;
            let mut data = Vec::new();
            for t in values {
                if t.cols() != d {
                    return Err(shape_err(name, format!("column counts {} vs {d}", t.cols())));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, d], data)
        }
        Op::ConcatCols(_) => {
            let m = values.first().map_or(0, |t| t.rows());
            if values.iter().any(|t| t.rows() != m) {
                return Err(shape_err(name, "row counts differ"));
            }
            let total: usize = values.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(m * total);
            for i in 0..m {
                for t in values {
                    data.extend_from_slice(t.row(i));
                }
            }
            Tensor::new(vec![m, total], data)
        }
        Op::Row { index, .. } => {
            let x = values[0];
            if *index >= x.rows() {
                return Err(shape_err(name, format!("row {index} of {}", x.rows())));
            }
            Tensor::new(vec![1, x.cols()], x.row(*index).to_vec())
        }
        Op::Transpose { .. } => {
            require_matrix(name, values[0])?;
            Ok(values[0].transposed())
        }
        Op::Reshape { shape, .. } => values[0].reshaped(shape.clone()),
        Op::PairScores { .. } => {
            let s = values[0];
            let (n, two) = require_matrix(name, s)?;
            if two != 2 {
                return Err(shape_err(name, format!("expected [n x 2], got {:?}", s.shape())));
            }
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = s.at(i, 0) + s.at(j, 1);
                }
            }
            Tensor::new(vec![n, n], out)
        }
        Op::MaskedSoftmax { mask, .. } => {
            let s = values[0];
            let (m, n) = require_matrix(name, s)?;
            if mask.len() != m * n {
                return Err(shape_err(name, format!("mask has {} entries for {m}x{n}", mask.len())));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                softmax_row(s.row(i), &mask[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n])
                    .map_err(|_| TensorError::EmptyNeighborhood(i))?;
            }
            Tensor::new(s.shape().to_vec(), out)
        }
        Op::EmbedMean { ids, .. } => {
            let table = values[0];
            let (v, d) = require_matrix(name, table)?;
            let mut out = vec![0.0; ids.len() * d];
            for (p, list) in ids.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let row = &mut out[p * d..(p + 1) * d];
                for &id in list {
                    let id = id as usize;
                    if id >= v {
                        return Err(shape_err(name, format!("token id {id} outside table of {v}")));
                    }
                    for (o, e) in row.iter_mut().zip(table.row(id)) {
                        *o += e;
                    }
                }
                let inv = list.len() as f64;
                for o in row.iter_mut() {
                    *o /= inv;
                }
            }
            Tensor::new(vec![ids.len(), d], out)
        }
        Op::L2NormalizeRows { .. } => {
            let x = values[0];
            let (m, d) = require_matrix(name, x)?;
            let mut out = x.data().to_vec();
            for i in 0..m {
                let row = &mut out[i * d..(i + 1) * d];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::CrossEntropy { targets, .. } => {
            let z = values[0];
            let (m, c) = require_matrix(name, z)?;
            if targets.len() != m || m == 0 {
                return Err(shape_err(name, format!("{} targets for {m} rows", targets.len())));
            }
            let mut total = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                if t >= c {
                    return Err(shape_err(name, format!("target {t} outside {c} classes")));
                }
                let row = z.row(i);
                total += log_sum_exp(row) - row[t];
            }
            Ok(Tensor::scalar(total / m as f64))
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Path of the parameter bound at `v`, if it is a parameter leaf.
    pub fn param_path(&self, v: Var) -> Option<&str> {
        match &self.nodes[v.0].op {
            Op::Param(path) => Some(path),
            _ => None,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var, TensorError> {
        let value = {
            let inputs: Vec<&Tensor> = op.inputs().iter().map(|v| &self.nodes[v.0].value).collect();
            evaluate(&op, &inputs)?
        };
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op.name()));
        }
        Ok(self.push(op, value))
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite("input"));
        }
        Ok(self.push(Op::Input, value))
    }

    /// Binds a parameter; binding the same path twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Result<Var, TensorError> {
        if let Some(&v) = self.params.get(path) {
            return Ok(v);
        }
        let value = store.require(path)?.clone();
        if !value.is_finite() {
            return Err(TensorError::NonFinite("param"));
        }
        let v = self.push(Op::Param(path.to_string()), value);
        self.params.insert(path.to_string(), v);
        Ok(v)
    }

    /// Parameters bound so far, by path.
    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// `x·Wᵀ + b` for `x: [m×k]`, `W: [n×k]`, `b: [n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        self.record(Op::Affine { x, w, b: Some(b) })
    }

    /// `x·Wᵀ`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        self.record(Op::Affine { x, w, b: None })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(Op::MatMul { a, b })
    }

    pub fn pointwise(&mut self, act: Activation, x: Var) -> Result<Var, TensorError> {
        self.record(Op::Pointwise { x, act })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.pointwise(Activation::Tanh, x)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.pointwise(Activation::Elu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.pointwise(Activation::LeakyRelu(slope), x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(Op::Add { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        self.record(Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.record(Op::Sum { x })
    }

    /// Column-wise mean, `[m×d] -> [1×d]`, summed in row order.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.record(Op::MeanRows { x })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "nothing to concatenate"));
        }
        self.record(Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "nothing to concatenate"));
        }
        self.record(Op::ConcatCols(parts.to_vec()))
    }

    pub fn row(&mut self, x: Var, index: usize) -> Result<Var, TensorError> {
        self.record(Op::Row { x, index })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.record(Op::Transpose { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.record(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// From `s: [n×2]` builds `e[i][j] = s[i][0] + s[j][1]`.
    pub fn pair_scores(&mut self, s: Var) -> Result<Var, TensorError> {
        self.record(Op::PairScores { s })
    }

    /// Row-wise softmax restricted to `mask` (row-major, same shape as scores).
    pub fn masked_softmax(&mut self, scores: Var, mask: Arc<Vec<bool>>) -> Result<Var, TensorError> {
        self.record(Op::MaskedSoftmax { scores, mask })
    }

    /// One row per id list: the mean of the referenced table rows (zeros for an empty list).
    pub fn embed_mean(&mut self, table: Var, ids: Arc<Vec<Vec<u32>>>) -> Result<Var, TensorError> {
        self.record(Op::EmbedMean { table, ids })
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.record(Op::L2NormalizeRows { x })
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, TensorError> {
        self.record(Op::CrossEntropy {
            logits,
            targets: Arc::new(targets),
        })
    }

    /// Re-evaluates every node from its recorded inputs.
    ///
    /// Leaves keep their recorded values; the result is compared bitwise with
    /// the recorded outputs by [`Tape::replay_matches`].
    pub fn replay(&self) -> Result<Vec<Tensor>, TensorError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Input | Op::Param(_) => node.value.clone(),
                ref op => {
                    let inputs: Vec<&Tensor> = op.inputs().iter().map(|v| &values[v.0]).collect();
                    evaluate(op, &inputs)?
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    pub fn replay_matches(&self) -> Result<bool, TensorError> {
        let replayed = self.replay()?;
        Ok(replayed
            .iter()
            .zip(&self.nodes)
            .all(|(a, n)| a.bit_eq(&n.value)))
    }

    /// Reverse accumulation from a scalar `loss`.
    ///
    /// The returned store has an entry for every path in `params`; parameters
    /// the loss does not depend on get zeros.
    pub fn backprop(&self, loss: Var, params: &ParamStore) -> Result<ParamStore, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Param(_) | Op::Input = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (input, contribution) in self.vjp(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut out = params.zeros_like();
        for (path, var) in &self.params {
            if let (Some(slot), Some(Some(g))) = (out.get_mut(path), grads.get(var.0)) {
                if slot.shape() != g.shape() {
                    return Err(shape_err("backprop", format!("gradient shape for {path}")));
                }
                *slot = g.clone();
            }
        }
        Ok(out)
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(x), val(w));
                let (m, k) = (xv.rows(), xv.cols());
                let n = wv.rows();
                let mut dx = vec![0.0; m * k];
                let mut dw = vec![0.0; n * k];
                for i in 0..m {
                    let xi = xv.row(i);
                    let gi = g.row(i);
                    let dxi = &mut dx[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = gi[j];
                        if gij == 0.0 {
                            continue;
                        }
                        let wj = wv.row(j);
                        for l in 0..k {
                            dxi[l] += gij * wj[l];
                        }
                        let dwj = &mut dw[j * k..(j + 1) * k];
                        for l in 0..k {
                            dwj[l] += gij * xi[l];
                        }
                    }
                }
                let mut out = vec![
                    (*x, Tensor::new(xv.shape().to_vec(), dx).expect("dx shape")),
                    (*w, Tensor::new(wv.shape().to_vec(), dw).expect("dw shape")),
                ];
                if let Some(b) = b {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for (d, gv) in db.iter_mut().zip(g.row(i)) {
                            *d += gv;
                        }
                    }
                    out.push((*b, Tensor::new(val(b).shape().to_vec(), db).expect("db shape")));
                }
                out
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (val(a), val(b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let gi = g.row(i);
                    for l in 0..k {
                        let brow = bv.row(l);
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gi[j] * brow[j];
                        }
                        da[i * k + l] = acc;
                        let aval = av.at(i, l);
                        let dbrow = &mut db[l * n..(l + 1) * n];
                        for j in 0..n {
                            dbrow[j] += aval * gi[j];
                        }
                    }
                }
                vec![
                    (*a, Tensor::new(av.shape().to_vec(), da).expect("da shape")),
                    (*b, Tensor::new(bv.shape().to_vec(), db).expect("db shape")),
                ]
            }
            Op::Pointwise { x, act } => {
                let xv = val(x);
                let data = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * act.derivative(xi, yi))
                    .collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), data).expect("shape"))]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Scale { x, factor } => {
                let data = g.data().iter().map(|v| v * factor).collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), data).expect("shape"))]
            }
            Op::Sum { x } => {
                let gv = g.data()[0];
                vec![(*x, Tensor::filled(val(x).shape(), gv))]
            }
            Op::MeanRows { x } => {
                let xv = val(x);
                let m = xv.rows();
                let row: Vec<f64> = g.data().iter().map(|v| v / m as f64).collect();
                let data = (0..m).flat_map(|_| row.iter().copied()).collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), data).expect("shape"))]
            }
            Op::ConcatRows(parts) => {
                let d = g.cols();
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let pv = val(p);
                        let len = pv.rows() * d;
                        let slice = g.data()[offset * d..offset * d + len].to_vec();
                        offset += pv.rows();
                        (*p, Tensor::new(pv.shape().to_vec(), slice).expect("shape"))
                    })
                    .collect()
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut col = 0;
                parts
                    .iter()
                    .map(|p| {
                        let pv = val(p);
                        let c = pv.cols();
                        let mut data = Vec::with_capacity(m * c);
                        for i in 0..m {
                            data.extend_from_slice(&g.row(i)[col..col + c]);
                        }
                        col += c;
                        (*p, Tensor::new(pv.shape().to_vec(), data).expect("shape"))
                    })
                    .collect()
            }
            Op::Row { x, index } => {
                let xv = val(x);
                let mut t = Tensor::zeros(xv.shape());
                let c = xv.cols();
                t.data_mut()[index * c..(index + 1) * c].copy_from_slice(g.data());
                vec![(*x, t)]
            }
            Op::Transpose { x } => {
                let gt = g.transposed();
                vec![(*x, gt.reshaped(val(x).shape().to_vec()).expect("shape"))]
            }
            Op::Reshape { x, .. } => vec![(*x, g.reshaped(val(x).shape().to_vec()).expect("shape"))],
            Op::PairScores { s } => {
                let n = g.rows();
                let mut ds = vec![0.0; n * 2];
                for i in 0..n {
                    for j in 0..n {
                        let gij = g.at(i, j);
                        ds[i * 2] += gij;
                        ds[j * 2 + 1] += gij;
                    }
                }
                vec![(*s, Tensor::new(val(s).shape().to_vec(), ds).expect("shape"))]
            }
            Op::MaskedSoftmax { scores, mask } => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut ds = vec![0.0; m * n];
                for i in 0..m {
                    let yi = y.row(i);
                    let gi = g.row(i);
                    let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        if mask[i * n + j] {
                            ds[i * n + j] = yi[j] * (gi[j] - dot);
                        }
                    }
                }
                vec![(*scores, Tensor::new(y.shape().to_vec(), ds).expect("shape"))]
            }
            Op::EmbedMean { table, ids } => {
                let tv = val(table);
                let d = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                let data = dt.data_mut();
                for (p, list) in ids.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / list.len() as f64;
                    let gp = g.row(p);
                    for &id in list {
                        let row = &mut data[id as usize * d..(id as usize + 1) * d];
                        for (r, gv) in row.iter_mut().zip(gp) {
                            *r += gv * inv;
                        }
                    }
                }
                vec![(*table, dt)]
            }
            Op::L2NormalizeRows { x } => {
                let xv = val(x);
                let y = &node.value;
                let (m, d) = (xv.rows(), xv.cols());
                let mut dx = vec![0.0; m * d];
                for i in 0..m {
                    let norm = xv.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    let yi = y.row(i);
                    let gi = g.row(i);
                    let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[i * d + j] = (gi[j] - yi[j] * dot) / norm;
                    }
                }
                vec![(*x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"))]
            }
            Op::CrossEntropy { logits, targets } => {
                let z = val(logits);
                let (m, c) = (z.rows(), z.cols());
                let scale = g.data()[0] / m as f64;
                let mut dz = vec![0.0; m * c];
                for (i, &t) in targets.iter().enumerate() {
                    let row = z.row(i);
                    let lse = log_sum_exp(row);
                    for j in 0..c {
                        dz[i * c + j] = (row[j] - lse).exp() * scale;
                    }
                    dz[i * c + t] -= scale;
                }
                vec![(*logits, Tensor::new(z.shape().to_vec(), dz).expect("shape"))]
            }
        }
    }
}
