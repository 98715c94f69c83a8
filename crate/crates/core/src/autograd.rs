//! A small reverse-mode automatic differentiation tape over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints.
//! Parameters are pulled from a [`ParamStore`] by name; repeated lookups of
//! the same name share one node, so their gradients accumulate naturally.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{MuseError, Result};
use crate::params::ParamStore;
use crate::tensor::Matrix;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which attention scores are admissible.
#[derive(Clone, Debug, Default)]
pub struct AttnMask {
    /// `keys[j] == false` excludes key `j` for every query.
    pub keys: Option<Rc<[bool]>>,
    /// Excludes keys after the query position.
    pub causal: bool,
}

impl AttnMask {
    pub fn keys(keys: &[bool]) -> Self {
        AttnMask {
            keys: Some(keys.into()),
            causal: false,
        }
    }

    pub fn causal() -> Self {
        AttnMask {
            keys: None,
            causal: true,
        }
    }

    fn allows(&self, query: usize, key: usize) -> bool {
        if self.causal && key > query {
            return false;
        }
        self.keys.as_ref().is_none_or(|k| k[key])
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    MaskRows(Var, Rc<[bool]>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    MeanRows {
        x: Var,
        keep: Rc<[bool]>,
        count: usize,
    },
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix,
        count: usize,
    },
    BceWithLogits {
        logit: Var,
        label: f64,
    },
    WeightedSum(Var, Matrix),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::ScaleBy(a, b) | Op::ConcatRows(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::MaskRows(a, _) | Op::Softmax(a) | Op::Gelu(a) | Op::Tanh(a) | Op::Sigmoid(a) => {
                vec![*a]
            }
            Op::SliceCols(a, _) | Op::SliceRows(a, _) | Op::Gather(a, _) | Op::WeightedSum(a, _) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(parts) => parts.clone(),
            Op::MeanRows { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::BceWithLogits { logit, .. } => vec![*logit],
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    /// Whether any trainable leaf feeds this node.
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
    frozen: Vec<String>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            frozen: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Parameters whose names start with one of `prefixes` enter the graph as
    /// constants: no gradient is computed for them or for anything only they feed.
    pub fn freeze(mut self, prefixes: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.frozen.extend(prefixes.into_iter().map(Into::into));
        self
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.push_node(value, op, needs_grad)
    }

    fn push_node(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, d: impl FnOnce() -> Matrix) {
        if self.needs(v) {
            acc_into(grads, v, d());
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient can be read back after [`Graph::backward`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| MuseError::Config("graph has no parameter store".into()))?;
        let value = store
            .get(name)
            .ok_or_else(|| MuseError::Config(format!("missing parameter {name}")))?
            .clone();
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.push_node(value, Op::Leaf, trainable);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (b, cols) = (self.value(bias), self.value(a).cols());
        assert_eq!(b.shape(), (1, cols), "bias shape");
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            for (v, bv) in value.row_mut(r).iter_mut().zip(b.row(0)) {
                *v += bv;
            }
        }
        self.push(value, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    /// Multiplies `a` by the single value of the 1x1 node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by expects a scalar node");
        let k = self.value(s).item();
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::ScaleBy(a, s))
    }

    /// Zeroes every row `r` with `keep[r] == false`.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(keep.len(), value.rows());
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                value.row_mut(r).fill(0.0);
            }
        }
        self.push(value, Op::MaskRows(a, keep.into()))
    }

    /// Row-wise softmax over admissible entries, computed with max subtraction.
    /// Inadmissible entries are exactly zero; a row with no admissible entry is all zeros.
    pub fn softmax(&mut self, x: Var, mask: &AttnMask) -> Var {
        let src = self.value(x);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            let row = src.row(r);
            let max = row
                .iter()
                .enumerate()
                .filter(|(c, _)| mask.allows(r, *c))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = value.row_mut(r);
            let mut total = 0.0;
            for (c, &v) in row.iter().enumerate() {
                if mask.allows(r, c) {
                    let e = (v - max).exp();
                    out[c] = e;
                    total += e;
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        self.push(value, Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        assert_eq!(g.shape(), (1, cols));
        assert_eq!(b.shape(), (1, cols));
        let mut value = xhat.clone();
        for r in 0..rows {
            for ((v, gv), bv) in value.row_mut(r).iter_mut().zip(g.row(0)).zip(b.row(0)) {
                *v = *v * gv + bv;
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()));
        self.push(value, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.cols(), "concat_rows widths");
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let value = Matrix::from_vec(va.rows() + vb.rows(), va.cols(), data).expect("consistent shape");
        self.push(value, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat_cols heights");
                value.row_mut(r)[offset..offset + src.cols()].copy_from_slice(src.row(r));
                offset += src.cols();
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let src = self.value(x);
        let mut value = Matrix::zeros(src.rows(), end - start);
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..end]);
        }
        self.push(value, Op::SliceCols(x, start))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let rows: Vec<usize> = (start..end).collect();
        let value = self.value(x).select_rows(&rows);
        self.push(value, Op::SliceRows(x, start))
    }

    /// Mean over the rows with `keep[r] == true`, as a `1 x cols` node.
    pub fn mean_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let src = self.value(x);
        assert_eq!(keep.len(), src.rows());
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(MuseError::Degenerate("mean over a fully masked sequence".into()));
        }
        let mut value = Matrix::zeros(1, src.cols());
        for (r, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            for (o, v) in value.row_mut(0).iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        value.scale_assign(1.0 / count as f64);
        Ok(self.push(
            value,
            Op::MeanRows {
                x,
                keep: keep.into(),
                count,
            },
        ))
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let value = self.value(table).select_rows(ids);
        self.push(value, Op::Gather(table, ids.to_vec()))
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let src = self.value(logits);
        if targets.len() != src.rows() {
            return Err(MuseError::Shape(format!(
                "{} targets for {} logit rows",
                targets.len(),
                src.rows()
            )));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(MuseError::Degenerate("cross-entropy over an all-padding target".into()));
        }
        let mut probs = Matrix::zeros(src.rows(), src.cols());
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = src.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - max).exp() / total;
            }
            if let Some(t) = *t {
                if t >= src.cols() {
                    return Err(MuseError::Shape(format!("target {t} outside {} classes", src.cols())));
                }
                loss += max + total.ln() - row[t];
            }
        }
        Ok(self.push(
            Matrix::scalar(loss / count as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `label` in {0, 1}.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Var {
        let z = self.value(logit).item();
        let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        self.push(Matrix::scalar(loss), Op::BceWithLogits { logit, label })
    }

    /// `sum(weights ⊙ x)`, a convenient scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Matrix) -> Var {
        assert_eq!(self.shape(x), weights.shape());
        let s = crate::tensor::dot(self.value(x).data(), weights.data());
        self.push(Matrix::scalar(s), Op::WeightedSum(x, weights))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads {
            grads,
            params: self.param_vars.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                self.acc(grads, *a, || g.matmul_t(val(*b)));
                self.acc(grads, *b, || val(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                self.acc(grads, *a, || g.matmul(val(*b)));
                self.acc(grads, *b, || g.t_matmul(val(*a)));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.sum_rows());
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, || g.zip_map(val(*b), |x, y| x * y));
                self.acc(grads, *b, || g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => self.acc(grads, *a, || g.map(|x| x * s)),
            Op::ScaleBy(a, s) => {
                let k = val(*s).item();
                self.acc(grads, *a, || g.map(|x| x * k));
                let ds = crate::tensor::dot(g.data(), val(*a).data());
                self.acc(grads, *s, || Matrix::scalar(ds));
            }
            Op::MaskRows(a, keep) => {
                let mut d = g.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        d.row_mut(r).fill(0.0);
                    }
                }
                self.acc(grads, *a, || d);
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = crate::tensor::dot(yr, gr);
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                self.acc(grads, *x, || d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = val(*gain);
                let cols = xhat.cols();
                let mut dgain = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(xhat.rows(), cols);
                for (r, &istd) in inv_std.iter().enumerate() {
                    let (xr, gr) = (xhat.row(r), g.row(r));
                    let dxhat: Vec<f64> = gr.iter().zip(gv.row(0)).map(|(a, b)| a * b).collect();
                    for ((o, a), b) in dgain.row_mut(0).iter_mut().zip(gr).zip(xr) {
                        *o += a * b;
                    }
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = crate::tensor::dot(&dxhat, xr);
                    let n = cols as f64;
                    for ((o, d), xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xr) {
                        *o = istd / n * (n * d - sum_d - xh * sum_dx);
                    }
                }
                self.acc(grads, *x, || dx);
                self.acc(grads, *gain, || dgain);
                self.acc(grads, *bias, || g.sum_rows());
            }
            Op::Gelu(x) => {
                let d = val(*x).zip_map(g, |v, gv| {
                    let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                    gv * (0.5 * (1.0 + t) + 0.5 * v * dt)
                });
                self.acc(grads, *x, || d);
            }
            Op::Tanh(x) => {
                let d = self.nodes[i].value.zip_map(g, |y, gv| gv * (1.0 - y * y));
                self.acc(grads, *x, || d);
            }
            Op::Sigmoid(x) => {
                let d = self.nodes[i].value.zip_map(g, |y, gv| gv * y * (1.0 - y));
                self.acc(grads, *x, || d);
            }
            Op::ConcatRows(a, b) => {
                let ra = val(*a).rows();
                let top: Vec<usize> = (0..ra).collect();
                let bottom: Vec<usize> = (ra..g.rows()).collect();
                self.acc(grads, *a, || g.select_rows(&top));
                self.acc(grads, *b, || g.select_rows(&bottom));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut d = Matrix::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    self.acc(grads, p, || d);
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let src = val(*x);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *x, || d);
            }
            Op::SliceRows(x, start) => {
                let src = val(*x);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.acc(grads, *x, || d);
            }
            Op::MeanRows { x, keep, count } => {
                let src = val(*x);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (r, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
                    for (o, gv) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = gv / *count as f64;
                    }
                }
                self.acc(grads, *x, || d);
            }
            Op::Gather(table, ids) => {
                let src = val(*table);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, gv) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                self.acc(grads, *table, || d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let scale = g.item() / *count as f64;
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for (o, p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *o = p * scale;
                    }
                    d.row_mut(r)[t] -= scale;
                }
                self.acc(grads, *logits, || d);
            }
            Op::BceWithLogits { logit, label } => {
                let z = val(*logit).item();
                self.acc(grads, *logit, || Matrix::scalar(g.item() * (sigmoid(z) - label)));
            }
            Op::WeightedSum(x, w) => self.acc(grads, *x, || w.map(|v| v * g.item())),
        }
    }
}

fn acc_into(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub struct Grads {
    grads: Vec<Option<Matrix>>,
    params: Vec<(String, Var)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter touched by the graph.
    pub fn into_params(mut self) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.params) {
            if let Some(g) = self.grads[v.0].take() {
                out.insert(name, g);
            }
        }
        out
    }
}
