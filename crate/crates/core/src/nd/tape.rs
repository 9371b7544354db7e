//! Reverse-mode tape.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the recipe for its local gradient. [`Tape::backward`] walks the nodes in
//! reverse order from a scalar root and returns the gradient of every
//! parameter leaf that was read through [`Tape::param`].

use super::param::{ParamId, ParamStore};
use super::{NdError, Tensor};

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Additive sentinel used for masked attention logits.
pub const MASK_SENTINEL: f64 = -1e9;

/// Variance floor of layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    LogSoftmaxPick {
        logits: Var,
        probs: Tensor,
        picks: Vec<Option<usize>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Parameter gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::new(i), g)))
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &str, a: [usize; 2], b: [usize; 2]) -> NdError {
    NdError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Sign pattern of every ReLU input on the tape. Two evaluations with the
    /// same pattern lie in the same linear piece of all ReLUs.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not tied to a parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf reading parameter `id`; repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.index()) {
            return *v;
        }
        let var = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[var.0].param = Some(id);
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        self.param_vars[id.index()] = Some(var);
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let out = ta.matmul(tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", ta.shape(), tb.shape()));
        }
        let out = ta.matmul_nt(tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMulNT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += x;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::AddRow(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.tanh());
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Row-wise softmax. Entries where `mask` is `false` receive the
    /// [`MASK_SENTINEL`] logit and are then written back as exact zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, NdError> {
        let out = softmax_values(self.value(a), mask)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Row-wise layer normalization followed by the affine map `gain, bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NdError> {
        let tx = self.value(x);
        let (tg, tb) = (self.value(gain), self.value(bias));
        let cols = tx.cols();
        if tg.shape() != [1, cols] || tb.shape() != [1, cols] {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        if cols < 2 {
            return Err(NdError::Shape("layer_norm needs at least two features".into()));
        }
        let mut normalized = tx.clone();
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut out = Tensor::zeros(tx.rows(), cols);
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let nrow = normalized.row_mut(r);
            for v in nrow.iter_mut() {
                *v = (*v - mean) * is;
            }
            let orow = out.row_mut(r);
            for c in 0..cols {
                orow[c] = nrow[c] * tg.data()[c] + tb.data()[c];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(NdError::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(NdError::Shape("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NdError> {
        let ta = self.value(a);
        if start + width > ta.cols() {
            return Err(NdError::Shape(format!("slice_cols {start}+{width} of {:?}", ta.shape())));
        }
        let mut out = Tensor::zeros(ta.rows(), width);
        for r in 0..ta.rows() {
            out.row_mut(r).copy_from_slice(&ta.row(r)[start..start + width]);
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var, NdError> {
        let ta = self.value(a);
        if start + count > ta.rows() {
            return Err(NdError::Shape(format!("slice_rows {start}+{count} of {:?}", ta.shape())));
        }
        let c = ta.cols();
        let out = Tensor::from_vec(count, c, ta.data()[start * c..(start + count) * c].to_vec())?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    /// Rows of `a` in the order given by `index` (repetition allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, NdError> {
        let ta = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(NdError::Shape(format!("gather_rows: row {bad} of {:?}", ta.shape())));
        }
        let c = ta.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::from_vec(index.len(), c, data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::GatherRows(a, index.to_vec()), ng))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// `sum_r log softmax(logits_r)[picks_r]` over rows with a pick, under a
    /// feasibility mask. Returns the `1 x 1` total log-probability.
    pub fn log_softmax_pick(&mut self, logits: Var, mask: Option<&[bool]>, picks: &[Option<usize>]) -> Result<Var, NdError> {
        let tz = self.value(logits);
        if picks.len() != tz.rows() {
            return Err(NdError::Shape("log_softmax_pick: one pick per row".into()));
        }
        let probs = softmax_values(tz, mask)?;
        let mut total = 0.0;
        for (r, pick) in picks.iter().enumerate() {
            if let Some(c) = *pick {
                if c >= tz.cols() || probs.get(r, c) == 0.0 && mask.is_some_and(|m| !m[r * tz.cols() + c]) {
                    return Err(NdError::Contract(format!("row {r} picks masked or unknown entry {c}")));
                }
                total += log_softmax_at(tz.row(r), mask.map(|m| &m[r * tz.cols()..(r + 1) * tz.cols()]), c);
            }
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::LogSoftmaxPick {
                logits,
                probs,
                picks: picks.to_vec(),
            },
            ng,
        ))
    }

    /// Gradients of the scalar `root` scaled by `seed` with respect to every
    /// parameter leaf on this tape.
    pub fn backward(&self, root: Var, seed: f64) -> Result<Gradients, NdError> {
        if self.value(root).shape() != [1, 1] {
            return Err(NdError::Shape("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(seed));
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Some(pid) = node.param {
                if out.grads.len() <= pid.index() {
                    out.grads.resize(pid.index() + 1, None);
                }
                match &mut out.grads[pid.index()] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            let send = |v: Var, d: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        send(*a, g.matmul_nt(self.value(*b)), &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, self.value(*a).matmul_tn(&g), &mut grads);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.needs(*a) {
                        send(*a, g.matmul(self.value(*b)), &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, g.matmul_tn(self.value(*a)), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        send(*b, g.clone(), &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                        send(*b, db, &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        send(*a, Tensor::from_vec(g.rows(), g.cols(), d)?, &mut grads);
                    }
                    if self.needs(*b) {
                        let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        send(*b, Tensor::from_vec(g.rows(), g.cols(), d)?, &mut grads);
                    }
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.scale_assign(*s);
                    send(*a, d, &mut grads);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    for (x, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    send(*a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    for (x, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= 1.0 - y * y;
                    }
                    send(*a, d, &mut grads);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = d.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (x, p) in d.row_mut(r).iter_mut().zip(yr) {
                            *x = p * (*x - dot);
                        }
                    }
                    send(*a, d, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let cols = g.cols();
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = Tensor::zeros(1, cols);
                        let mut db = Tensor::zeros(1, cols);
                        for r in 0..g.rows() {
                            for c in 0..cols {
                                dg.data_mut()[c] += g.get(r, c) * normalized.get(r, c);
                                db.data_mut()[c] += g.get(r, c);
                            }
                        }
                        send(*gain, dg, &mut grads);
                        send(*bias, db, &mut grads);
                    }
                    if self.needs(*x) {
                        let mut dx = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            let xh = normalized.row(r);
                            let dxh: Vec<f64> = (0..cols).map(|c| g.get(r, c) * tg.data()[c]).collect();
                            let mean_d = dxh.iter().sum::<f64>() / cols as f64;
                            let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                            for c in 0..cols {
                                dx.set(r, c, inv_std[r] * (dxh[c] - mean_d - xh[c] * mean_dx));
                            }
                        }
                        send(*x, dx, &mut grads);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let mut d = Tensor::zeros(g.rows(), w);
                            for r in 0..g.rows() {
                                d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                            }
                            send(p, d, &mut grads);
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        if self.needs(p) {
                            let c = g.cols();
                            let d = Tensor::from_vec(h, c, g.data()[off * c..(off + h) * c].to_vec())?;
                            send(p, d, &mut grads);
                        }
                        off += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    send(*a, d, &mut grads);
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.rows(), ta.cols());
                    let c = ta.cols();
                    d.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    send(*a, d, &mut grads);
                }
                Op::GatherRows(a, index) => {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.rows(), ta.cols());
                    for (r, &src) in index.iter().enumerate() {
                        for (x, y) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    send(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    send(*a, Tensor::filled(ta.rows(), ta.cols(), g.data()[0]), &mut grads);
                }
                Op::LogSoftmaxPick { logits, probs, picks } => {
                    let s = g.data()[0];
                    let mut d = Tensor::zeros(probs.rows(), probs.cols());
                    for (r, pick) in picks.iter().enumerate() {
                        if let Some(c) = *pick {
                            for (x, p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                                *x = -s * p;
                            }
                            d.set(r, c, d.get(r, c) + s);
                        }
                    }
                    send(*logits, d, &mut grads);
                }
            }
        }
        Ok(out)
    }
}

/// Masked, max-stabilized row softmax on plain values.
pub fn softmax_values(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NdError> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(NdError::Shape("mask shape differs from logits".into()));
        }
    }
    let cols = x.cols();
    let mut out = Tensor::zeros(x.rows(), cols);
    for r in 0..x.rows() {
        let keep = |c: usize| mask.map_or(true, |m| m[r * cols + c]);
        let row = x.row(r);
        let max = (0..cols)
            .filter(|&c| keep(c))
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NdError::Contract(format!("softmax row {r} is fully masked")));
        }
        let orow = out.row_mut(r);
        let mut total = 0.0;
        for c in 0..cols {
            let z = if keep(c) { row[c] } else { row[c] + MASK_SENTINEL };
            let e = (z - max).exp();
            orow[c] = e;
            total += e;
        }
        for c in 0..cols {
            orow[c] = if keep(c) { orow[c] / total } else { 0.0 };
        }
    }
    Ok(out)
}

fn log_softmax_at(row: &[f64], mask: Option<&[bool]>, c: usize) -> f64 {
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    let max = (0..row.len())
        .filter(|&i| keep(i))
        .map(|i| row[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = (0..row.len())
        .filter(|&i| keep(i))
        .map(|i| (row[i] - max).exp())
        .sum::<f64>()
        .ln();
    row[c] - max - lse
}
