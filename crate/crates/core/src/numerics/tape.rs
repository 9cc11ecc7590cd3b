//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! A [`Tape`] records each operation as a node holding its output value. Nodes
//! are appended in evaluation order, so [`Tape::backward`] visits them in exact
//! reverse of recording order. Parameters are borrowed from a [`ParamStore`]
//! rather than copied; their gradients are returned as [`Gradients`] for the
//! caller to accumulate.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, inv_rms, sigmoid, silu, silu_grad, softplus};
use crate::numerics::{counters, Gradients, ParamStore, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One prediction position of a sampled-softmax loss: the hidden row it reads
/// and the candidate table rows, positive first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftmaxRow {
    pub position: usize,
    pub candidates: Vec<usize>,
}

enum Value<'p> {
    Owned(Tensor),
    Param(&'p Tensor),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    ScaleBy {
        scalar: Var,
        x: Var,
    },
    AddScalar {
        scalar: Var,
        x: Var,
    },
    AddRowBias {
        x: Var,
        bias: Var,
    },
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv: Vec<Real>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    CausalMask(Var),
    SiluCausal {
        x: Var,
        scale: Real,
    },
    GatherRows {
        table: Var,
        index: Vec<usize>,
    },
    GatherEntries {
        table: Var,
        index: Vec<Option<usize>>,
    },
    Reshape(Var),
    SumAll(Var),
    SampledSoftmax {
        hidden: Var,
        table: Var,
        rows: Vec<SoftmaxRow>,
        probs: Vec<Vec<Real>>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | MatMulBt(a, b) | Add(a, b) | Mul(a, b) => vec![*a, *b],
            ScaleBy { scalar, x } | AddScalar { scalar, x } => vec![*scalar, *x],
            AddRowBias { x, bias } => vec![*x, *bias],
            RmsNorm { x, gain, .. } => vec![*x, *gain],
            Scale(x, _)
            | Silu(x)
            | Sigmoid(x)
            | Softplus(x)
            | Exp(x)
            | Log(x)
            | Sin(x)
            | CausalMask(x)
            | Reshape(x)
            | SumAll(x) => vec![*x],
            SliceCols { x, .. } | SiluCausal { x, .. } => vec![*x],
            ConcatCols(parts) => parts.clone(),
            GatherRows { table, .. } | GatherEntries { table, .. } => vec![*table],
            SampledSoftmax { hidden, table, .. } => vec![*hidden, *table],
        }
    }
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    param: Option<usize>,
    needs_grad: bool,
}

/// Records one forward pass. A tape is used with a single [`ParamStore`].
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<usize, Var>,
}

impl<'p> Tape<'p> {
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
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(t) => t,
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        let needs_grad = op.inputs().iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            param: None,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// A leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &'p ParamStore, name: &str) -> Result<Var> {
        let idx = store.index_of(name)?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        let (_, p) = store
            .by_index(idx)
            .expect("index_of returned a valid index");
        self.nodes.push(Node {
            value: Value::Param(&p.value),
            op: Op::Leaf,
            param: Some(idx),
            needs_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a·bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_bt(self.value(a), self.value(b))?;
        self.push(out, Op::MatMulBt(a, b), "matmul_bt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    fn expect_scalar(&self, op: &'static str, s: Var) -> Result<Real> {
        let t = self.value(s);
        if t.shape() != (1, 1) {
            return Err(Error::shape(op, t.shape(), (1, 1)));
        }
        Ok(t.item())
    }

    /// `scalar · x` with a `1×1` differentiable scalar.
    pub fn scale_by(&mut self, scalar: Var, x: Var) -> Result<Var> {
        let s = self.expect_scalar("scale_by", scalar)?;
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::ScaleBy { scalar, x }, "scale_by")
    }

    /// `x + scalar` broadcast over every entry.
    pub fn add_scalar(&mut self, scalar: Var, x: Var) -> Result<Var> {
        let s = self.expect_scalar("add_scalar", scalar)?;
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::AddScalar { scalar, x }, "add_scalar")
    }

    /// Adds a `1×k` bias row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(bias));
        if bt.rows() != 1 || bt.cols() != xt.cols() {
            return Err(Error::shape("add_row_bias", xt.shape(), bt.shape()));
        }
        let mut out = xt.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bt.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRowBias { x, bias }, "add_row_bias")
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(silu);
        self.push(out, Op::Silu(x), "silu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x), "softplus")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(Real::exp);
        self.push(out, Op::Exp(x), "exp")
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(Real::ln);
        self.push(out, Op::Log(x), "log")
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(Real::sin);
        self.push(out, Op::Sin(x), "sin")
    }

    /// Row-wise RMSNorm with a `1×d` gain.
    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (xt, gt) = (self.value(x), self.value(gain));
        if gt.rows() != 1 || gt.cols() != xt.cols() {
            return Err(Error::shape("rmsnorm", xt.shape(), gt.shape()));
        }
        let mut out = Tensor::zeros(xt.rows(), xt.cols());
        let mut inv = Vec::with_capacity(xt.rows());
        for i in 0..xt.rows() {
            let r = inv_rms(xt.row(i));
            inv.push(r);
            for ((o, &v), &g) in out.row_mut(i).iter_mut().zip(xt.row(i)).zip(gt.data()) {
                *o = g * v * r;
            }
        }
        self.push(out, Op::RmsNorm { x, gain, inv }, "rmsnorm")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape("concat_cols", (rows, cols), t.shape()));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols()].copy_from_slice(t.row(i));
            }
            offset += t.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(x);
        if start + width > t.cols() {
            return Err(Error::shape(
                "slice_cols",
                t.shape(),
                (t.rows(), start + width),
            ));
        }
        let out = Tensor::from_fn(t.rows(), width, |i, j| t.get(i, start + j));
        self.push(out, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Zeroes entries strictly above the diagonal.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        zero_upper(&mut out);
        self.push(out, Op::CausalMask(x), "causal_mask")
    }

    /// `scale · mask(SiLU(x))`, the pointwise attention activation.
    pub fn silu_causal(&mut self, x: Var, scale: Real) -> Result<Var> {
        let mut out = self.value(x).map(|v| silu(v) * scale);
        zero_upper(&mut out);
        self.push(out, Op::SiluCausal { x, scale }, "silu_causal")
    }

    /// Embedding lookup: row `r` of the output is `table[index[r]]`.
    pub fn gather_rows(&mut self, table: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        let mut out = Tensor::zeros(index.len(), t.cols());
        for (r, &k) in index.iter().enumerate() {
            if k >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows table",
                    index: k,
                    len: t.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(t.row(k));
        }
        counters::record_gathers(index.len() as u64);
        self.push(out, Op::GatherRows { table, index }, "gather_rows")
    }

    /// Builds a `rows×cols` matrix whose entry `e` is `table[index[e]]`, or 0
    /// for `None`. `table` is read as a flat vector.
    pub fn gather_entries(
        &mut self,
        table: Var,
        index: Vec<Option<usize>>,
        rows: usize,
        cols: usize,
    ) -> Result<Var> {
        if index.len() != rows * cols {
            return Err(Error::shape(
                "gather_entries",
                (rows, cols),
                (index.len(), 1),
            ));
        }
        let t = self.value(table).data();
        let mut out = Tensor::zeros(rows, cols);
        let mut reads = 0u64;
        for (o, k) in out.data_mut().iter_mut().zip(&index) {
            if let Some(k) = *k {
                *o = *t.get(k).ok_or(Error::IndexOutOfRange {
                    what: "gather_entries table",
                    index: k,
                    len: t.len(),
                })?;
                reads += 1;
            }
        }
        counters::record_gathers(reads);
        self.push(out, Op::GatherEntries { table, index }, "gather_entries")
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshape(rows, cols)?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x), "sum_all")
    }

    /// Mean over `rows` of `log Σ_c exp(s_c) − s_pos`, where
    /// `s_c = hidden[position] · table[c]`.
    pub fn sampled_softmax(
        &mut self,
        hidden: Var,
        table: Var,
        rows: Vec<SoftmaxRow>,
    ) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Precondition(
                "sampled softmax needs at least one target".into(),
            ));
        }
        let (h, e) = (self.value(hidden), self.value(table));
        if h.cols() != e.cols() {
            return Err(Error::shape("sampled_softmax", h.shape(), e.shape()));
        }
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(rows.len());
        for row in &rows {
            if row.candidates.len() < 2 {
                return Err(Error::Precondition(
                    "sampled softmax needs N >= 1 negatives".into(),
                ));
            }
            if row.position >= h.rows() {
                return Err(Error::IndexOutOfRange {
                    what: "hidden rows",
                    index: row.position,
                    len: h.rows(),
                });
            }
            let hr = h.row(row.position);
            let mut scores = Vec::with_capacity(row.candidates.len());
            for &c in &row.candidates {
                if c >= e.rows() {
                    return Err(Error::IndexOutOfRange {
                        what: "embedding table",
                        index: c,
                        len: e.rows(),
                    });
                }
                scores.push(dot(hr, e.row(c)));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite("sampled softmax score".into()));
            }
            total += kernels::log_sum_exp(&scores) - scores[0];
            probs.push(kernels::softmax_row(&scores));
        }
        counters::record_multiplies((rows.len() * rows[0].candidates.len() * h.cols()) as u64);
        let out = Tensor::scalar(total / rows.len() as Real);
        self.push(
            out,
            Op::SampledSoftmax {
                hidden,
                table,
                rows,
                probs,
            },
            "sampled_softmax",
        )
    }

    /// Reverse pass from a `1×1` output. Visits nodes in exact reverse of
    /// recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if out.shape() != (1, 1) {
            return Err(Error::shape("backward", out.shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut entries = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(p) = node.param {
                entries.push((p, g));
                continue;
            }
            self.propagate(&node.op, Var(i), g, &mut grads)?;
        }
        entries.sort_by_key(|(i, _)| *i);
        Ok(Gradients { entries })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.needs(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, me: Var, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, kernels::matmul_bt(&g, self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.acc(grads, *b, kernels::matmul_at(self.value(*a), &g)?)?;
                }
            }
            Op::MatMulBt(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, kernels::matmul(&g, self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.acc(grads, *b, kernels::matmul_at(&g, self.value(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.clone())?;
                }
                self.acc(grads, *b, g)?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?)?;
                }
                if self.needs(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?)?;
                }
            }
            Op::Scale(x, s) => self.acc(grads, *x, g.map(|v| v * s))?,
            Op::ScaleBy { scalar, x } => {
                if self.needs(*scalar) {
                    let ds = weighted_sum(&g, self.value(*x));
                    self.acc(grads, *scalar, Tensor::scalar(ds))?;
                }
                let s = self.value(*scalar).item();
                self.acc(grads, *x, g.map(|v| v * s))?;
            }
            Op::AddScalar { scalar, x } => {
                if self.needs(*scalar) {
                    self.acc(grads, *scalar, Tensor::scalar(g.sum()))?;
                }
                self.acc(grads, *x, g)?;
            }
            Op::AddRowBias { x, bias } => {
                if self.needs(*bias) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    self.acc(grads, *bias, db)?;
                }
                self.acc(grads, *x, g)?;
            }
            Op::Silu(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| gv * silu_grad(xv))?;
                self.acc(grads, *x, dx)?;
            }
            Op::Sigmoid(x) => {
                let dx = g.zip_map(self.value(me), |gv, y| gv * y * (1.0 - y))?;
                self.acc(grads, *x, dx)?;
            }
            Op::Softplus(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv))?;
                self.acc(grads, *x, dx)?;
            }
            Op::Exp(x) => {
                let dx = g.zip_map(self.value(me), |gv, y| gv * y)?;
                self.acc(grads, *x, dx)?;
            }
            Op::Log(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| gv / xv)?;
                self.acc(grads, *x, dx)?;
            }
            Op::Sin(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| gv * xv.cos())?;
                self.acc(grads, *x, dx)?;
            }
            Op::RmsNorm { x, gain, inv } => {
                let (xt, gt) = (self.value(*x), self.value(*gain));
                let d = xt.cols() as Real;
                let mut dx = Tensor::zeros(xt.rows(), xt.cols());
                let mut dgain = Tensor::zeros(1, xt.cols());
                for (i, &r) in inv.iter().enumerate() {
                    let (xr, gr) = (xt.row(i), g.row(i));
                    let mut s = 0.0;
                    for j in 0..xr.len() {
                        s += gr[j] * gt.data()[j] * xr[j];
                        dgain.data_mut()[j] += gr[j] * xr[j] * r;
                    }
                    let k = r * r * r * s / d;
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = r * gr[j] * gt.data()[j] - k * xr[j];
                    }
                }
                if self.needs(*x) {
                    self.acc(grads, *x, dx)?;
                }
                self.acc(grads, *gain, dgain)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let part = Tensor::from_fn(g.rows(), w, |i, j| g.get(i, offset + j));
                        self.acc(grads, p, part)?;
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                self.acc(grads, *x, dx)?;
            }
            Op::CausalMask(x) => {
                let mut dx = g;
                zero_upper(&mut dx);
                self.acc(grads, *x, dx)?;
            }
            Op::SiluCausal { x, scale } => {
                let mut dx = g.zip_map(self.value(*x), |gv, xv| gv * scale * silu_grad(xv))?;
                zero_upper(&mut dx);
                self.acc(grads, *x, dx)?;
            }
            Op::GatherRows { table, index } => {
                let (rows, cols) = self.value(*table).shape();
                let mut dt = Tensor::zeros(rows, cols);
                for (r, &k) in index.iter().enumerate() {
                    for (d, v) in dt.row_mut(k).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                self.acc(grads, *table, dt)?;
            }
            Op::GatherEntries { table, index } => {
                let (rows, cols) = self.value(*table).shape();
                let mut dt = Tensor::zeros(rows, cols);
                for (k, v) in index.iter().zip(g.data()) {
                    if let Some(k) = *k {
                        dt.data_mut()[k] += v;
                    }
                }
                self.acc(grads, *table, dt)?;
            }
            Op::Reshape(x) => {
                let (rows, cols) = self.value(*x).shape();
                self.acc(grads, *x, g.reshape(rows, cols)?)?;
            }
            Op::SumAll(x) => {
                let (rows, cols) = self.value(*x).shape();
                self.acc(grads, *x, Tensor::filled(rows, cols, g.item()))?;
            }
            Op::SampledSoftmax {
                hidden,
                table,
                rows,
                probs,
            } => {
                let (h, e) = (self.value(*hidden), self.value(*table));
                let scale = g.item() / rows.len() as Real;
                let mut dh = Tensor::zeros(h.rows(), h.cols());
                let mut de = Tensor::zeros(e.rows(), e.cols());
                for (row, p) in rows.iter().zip(probs) {
                    let hr = h.row(row.position);
                    for (c, (&cand, &pc)) in row.candidates.iter().zip(p).enumerate() {
                        let coef = scale * (pc - if c == 0 { 1.0 } else { 0.0 });
                        for (d, v) in dh.row_mut(row.position).iter_mut().zip(e.row(cand)) {
                            *d += coef * v;
                        }
                        for (d, v) in de.row_mut(cand).iter_mut().zip(hr) {
                            *d += coef * v;
                        }
                    }
                }
                if self.needs(*hidden) {
                    self.acc(grads, *hidden, dh)?;
                }
                self.acc(grads, *table, de)?;
            }
        }
        Ok(())
    }
}

fn zero_upper(t: &mut Tensor) {
    let cols = t.cols();
    for i in 0..t.rows() {
        let start = (i + 1).min(cols);
        t.row_mut(i)[start..].fill(0.0);
    }
}

#[inline]
fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_sum(a: &Tensor, b: &Tensor) -> Real {
    dot(a.data(), b.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t, true).unwrap();
        s
    }

    #[test]
    fn matmul_gradients_match_closed_form() {
        let store = {
            let mut s = ParamStore::new();
            s.insert(
                "a",
                Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(),
                true,
            )
            .unwrap();
            s.insert("b", Tensor::from_rows(&[[5.0], [6.0]]).unwrap(), true)
                .unwrap();
            s
        };
        let mut tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        let b = tape.param(&store, "b").unwrap();
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c).unwrap();
        assert_eq!(tape.value(loss).item(), 56.0);
        let g = tape.backward(loss).unwrap();
        // dA = 1·Bᵀ, dB = Aᵀ·1
        assert_eq!(g.get(0).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(g.get(1).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn param_leaf_is_shared() {
        let store = store_with("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(0).unwrap().item(), 6.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let store = store_with("w", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let c = tape.constant(Tensor::scalar(5.0)).unwrap();
        let y = tape.mul(w, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.iter().count(), 1);
        assert_eq!(g.get(0).unwrap().item(), 5.0);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let store = store_with("w", Tensor::zeros(2, 2));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn non_finite_output_raises() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0)).unwrap();
        assert!(matches!(tape.ln(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sampled_softmax_equal_scores_is_ln2() {
        let store = store_with("e", Tensor::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap());
        let mut tape = Tape::new();
        let e = tape.param(&store, "e").unwrap();
        let h = tape
            .constant(Tensor::from_rows(&[[0.7, 0.2]]).unwrap())
            .unwrap();
        let rows = vec![SoftmaxRow {
            position: 0,
            candidates: vec![0, 1],
        }];
        let loss = tape.sampled_softmax(h, e, rows).unwrap();
        assert!((tape.value(loss).item() - (2.0 as Real).ln()).abs() < 1e-15);
    }

    #[test]
    fn gather_entries_counts_reads() {
        let store = store_with("beta", Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let mut tape = Tape::new();
        let beta = tape.param(&store, "beta").unwrap();
        let index = vec![Some(0), None, Some(1), Some(0)];
        let (m, counts) = counters::measure(|| tape.gather_entries(beta, index, 2, 2).unwrap());
        assert_eq!(counts.gathers, 3);
        assert_eq!(tape.value(m).data(), &[1.0, 0.0, 2.0, 1.0]);
        let loss = tape.sum_all(m).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[2.0, 1.0, 0.0]);
    }
}
