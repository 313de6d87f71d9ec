//! Recorded computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its
//! forward value and enough context to run the hand-derived
//! vector-Jacobian rule. Nodes only reference earlier nodes, so creation
//! order is a topological order and `backward` is a single reverse sweep.
//! A graph and its tensors are confined to one execution context; model
//! replicas running in parallel each record their own graph.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{BoolMat, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Value {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Shared(v) => v,
        }
    }
}

enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRow { x: usize, row: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Transpose { x: usize },
    SliceRows { x: usize, start: usize },
    ConcatRows { xs: Vec<usize> },
    Embedding { table: usize, ids: Vec<usize> },
    MaskedSoftmax { logits: usize, mask: BoolMat },
    RmsNorm { x: usize, gain: usize },
    Silu { x: usize },
    Sum { x: usize },
    MseLoss { pred: usize, target: usize },
    L1Loss { pred: usize, target: usize },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Value,
    needs_grad: bool,
    /// Saved forward intermediates (inverse RMS per row, for RmsNorm).
    aux: Vec<f64>,
}

/// Reverse-mode tape over the fixed op set.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// (node id, caller-assigned parameter slot) for leaves registered
    /// through [`Graph::param`].
    params: Vec<(usize, usize)>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Value, aux: Vec<f64>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Matmul { a, b }
            | Op::Add { a, b }
            | Op::Mul { a, b }
            | Op::AddRow { x: a, row: b }
            | Op::MseLoss { pred: a, target: b }
            | Op::L1Loss { pred: a, target: b }
            | Op::RmsNorm { x: a, gain: b } => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::Scale { x, .. }
            | Op::Transpose { x }
            | Op::SliceRows { x, .. }
            | Op::Silu { x }
            | Op::Sum { x }
            | Op::MaskedSoftmax { logits: x, .. } => self.nodes[*x].needs_grad,
            Op::Embedding { table, .. } => self.nodes[*table].needs_grad,
            Op::ConcatRows { xs } => xs.iter().any(|x| self.nodes[*x].needs_grad),
        };
        self.nodes.push(Node { op, shape, value, needs_grad, aux });
        Var(self.nodes.len() - 1)
    }

    /// Register a tensor as a leaf. Gradient tracking follows the
    /// tensor's `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let v = self.push(
            Op::Leaf,
            t.shape().to_vec(),
            Value::Shared(t.data_arc()),
            Vec::new(),
        );
        self.nodes[v.0].needs_grad = t.requires_grad();
        v
    }

    /// Register a parameter leaf under a caller-assigned slot so its
    /// gradient can be collected after `backward`.
    pub fn param(&mut self, t: &Tensor, slot: usize) -> Var {
        let v = self.leaf(t);
        self.params.push((v.0, slot));
        v
    }

    /// A non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "constant: shape {:?} wants {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(self.push(Op::Leaf, shape, Value::Owned(data), Vec::new()))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let val = self.value(v);
        if val.len() != 1 {
            return Err(Error::Contract(format!(
                "expected scalar, got shape {:?}",
                self.shape(v)
            )));
        }
        Ok(val[0])
    }

    fn mat(&self, v: Var) -> (&[f64], usize, usize) {
        let node = &self.nodes[v.0];
        let (r, c) = rows_cols(&node.shape);
        (node.value.as_slice(), r, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, m, k) = self.mat(a);
        let (bv, k2, n) = self.mat(b);
        if self.nodes[a.0].shape.len() != 2 || self.nodes[b.0].shape.len() != 2 || k != k2 {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let out = kernels::matmul(av, bv, m, k, n);
        Ok(self.push(Op::Matmul { a: a.0, b: b.0 }, vec![m, n], Value::Owned(out), Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let out: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, shape, Value::Owned(out), Vec::new()))
    }

    /// Broadcast-add a row vector over every row of a matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, m, n) = self.mat(x);
        let rv = self.value(row);
        if rv.len() != n {
            return Err(Error::Shape(format!(
                "add_row: matrix {:?} vs row {:?}",
                self.nodes[x.0].shape, self.nodes[row.0].shape
            )));
        }
        let mut out = xv.to_vec();
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, r) in orow.iter_mut().zip(rv) {
                *o += r;
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(Op::AddRow { x: x.0, row: row.0 }, shape, Value::Owned(out), Vec::new()))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let out: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, shape, Value::Owned(out), Vec::new()))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Scale { x: x.0, c }, shape, Value::Owned(out), Vec::new())
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (xv, r, c) = self.mat(x);
        if self.nodes[x.0].shape.len() != 2 {
            return Err(Error::Shape(format!(
                "transpose: rank-2 required, got {:?}",
                self.nodes[x.0].shape
            )));
        }
        let out = kernels::transpose(xv, r, c);
        Ok(self.push(Op::Transpose { x: x.0 }, vec![c, r], Value::Owned(out), Vec::new()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (xv, r, c) = self.mat(x);
        if self.nodes[x.0].shape.len() != 2 || start + len > r {
            return Err(Error::Shape(format!(
                "slice_rows: rows {}..{} of {:?}",
                start,
                start + len,
                self.nodes[x.0].shape
            )));
        }
        let out = xv[start * c..(start + len) * c].to_vec();
        Ok(self.push(Op::SliceRows { x: x.0, start }, vec![len, c], Value::Owned(out), Vec::new()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows: no inputs".into()));
        }
        let cols = rows_cols(&self.nodes[parts[0].0].shape).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pv, r, c) = self.mat(p);
            if self.nodes[p.0].shape.len() != 2 || c != cols {
                return Err(Error::Shape(format!(
                    "concat_rows: {:?} does not stack on {} columns",
                    self.nodes[p.0].shape, cols
                )));
            }
            rows += r;
            out.extend_from_slice(pv);
        }
        let xs = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Op::ConcatRows { xs }, vec![rows, cols], Value::Owned(out), Vec::new()))
    }

    /// Gather rows of `table` by index.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (tv, v, d) = self.mat(table);
        if self.nodes[table.0].shape.len() != 2 {
            return Err(Error::Shape(format!(
                "embedding: table must be rank-2, got {:?}",
                self.nodes[table.0].shape
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Data(format!("unknown token id {} (table has {})", id, v)));
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Op::Embedding { table: table.0, ids: ids.to_vec() },
            vec![ids.len(), d],
            Value::Owned(out),
            Vec::new(),
        ))
    }

    /// Row-wise softmax over allowed positions; masked positions are exact
    /// zeros. A fully masked row is a structural error, never a silent NaN.
    pub fn masked_softmax(&mut self, logits: Var, mask: &BoolMat) -> Result<Var> {
        let (lv, r, c) = self.mat(logits);
        if mask.rows() != r || mask.cols() != c {
            return Err(Error::Shape(format!(
                "masked_softmax: logits {:?} vs mask {}x{}",
                self.nodes[logits.0].shape,
                mask.rows(),
                mask.cols()
            )));
        }
        let mut out = vec![0.0; lv.len()];
        for i in 0..r {
            let lrow = &lv[i * c..(i + 1) * c];
            let orow = &mut out[i * c..(i + 1) * c];
            if kernels::masked_softmax_row(lrow, mask.row(i), orow).is_none() {
                return Err(Error::Contract(format!("masked_softmax: row {} fully masked", i)));
            }
        }
        Ok(self.push(
            Op::MaskedSoftmax { logits: logits.0, mask: mask.clone() },
            vec![r, c],
            Value::Owned(out),
            Vec::new(),
        ))
    }

    /// Row-wise RMS normalization with learnable gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (xv, m, d) = self.mat(x);
        let gv = self.value(gain);
        if gv.len() != d {
            return Err(Error::Shape(format!(
                "rms_norm: x {:?} vs gain {:?}",
                self.nodes[x.0].shape, self.nodes[gain.0].shape
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("rms_norm: eps must be positive".into()));
        }
        let mut out = vec![0.0; xv.len()];
        let mut inv = vec![0.0; m];
        for i in 0..m {
            inv[i] =
                kernels::rms_norm_row(&xv[i * d..(i + 1) * d], gv, eps, &mut out[i * d..(i + 1) * d]);
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(Op::RmsNorm { x: x.0, gain: gain.0 }, shape, Value::Owned(out), inv))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| kernels::silu(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Silu { x: x.0 }, shape, Value::Owned(out), Vec::new())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        self.push(Op::Sum { x: x.0 }, vec![1], Value::Owned(vec![s]), Vec::new())
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.nodes[pred.0].shape != self.nodes[target.0].shape {
            return Err(Error::Shape(format!(
                "mse_loss: {:?} vs {:?}",
                self.nodes[pred.0].shape, self.nodes[target.0].shape
            )));
        }
        let n = self.value(pred).len() as f64;
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Op::MseLoss { pred: pred.0, target: target.0 },
            vec![1],
            Value::Owned(vec![s / n]),
            Vec::new(),
        ))
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.nodes[pred.0].shape != self.nodes[target.0].shape {
            return Err(Error::Shape(format!(
                "l1_loss: {:?} vs {:?}",
                self.nodes[pred.0].shape, self.nodes[target.0].shape
            )));
        }
        let n = self.value(pred).len() as f64;
        let s: f64 =
            self.value(pred).iter().zip(self.value(target)).map(|(p, t)| (p - t).abs()).sum();
        Ok(self.push(
            Op::L1Loss { pred: pred.0, target: target.0 },
            vec![1],
            Value::Owned(vec![s / n]),
            Vec::new(),
        ))
    }

    /// Reverse sweep from a scalar loss. Each node is visited exactly once
    /// in reverse creation order; adjoints for parameters reached through
    /// several branches accumulate by summation.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let d_out = match adj[id].take() {
                Some(d) => d,
                None => continue,
            };
            self.backprop_node(id, &d_out, &mut adj);
            adj[id] = Some(d_out);
        }
        self.grads = Some(adj);
        Ok(())
    }

    fn input_needs_grad(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn ensure<'a>(
        adj: &'a mut [Option<Vec<f64>>],
        id: usize,
        len: usize,
    ) -> &'a mut Vec<f64> {
        adj[id].get_or_insert_with(|| vec![0.0; len])
    }

    fn backprop_node(&self, id: usize, d_out: &[f64], adj: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, m, k) = self.mat(Var(*a));
                let (bv, _, n) = self.mat(Var(*b));
                if self.input_needs_grad(*a) {
                    let da = Self::ensure(adj, *a, m * k);
                    kernels::matmul_nt_acc(d_out, bv, da, m, n, k);
                }
                if self.input_needs_grad(*b) {
                    let db = Self::ensure(adj, *b, k * n);
                    kernels::matmul_tn_acc(av, d_out, db, k, m, n);
                }
            }
            Op::Add { a, b } => {
                for &i in [a, b].iter() {
                    if self.input_needs_grad(*i) {
                        let d = Self::ensure(adj, *i, d_out.len());
                        for (g, o) in d.iter_mut().zip(d_out) {
                            *g += o;
                        }
                    }
                }
            }
            Op::AddRow { x, row } => {
                if self.input_needs_grad(*x) {
                    let d = Self::ensure(adj, *x, d_out.len());
                    for (g, o) in d.iter_mut().zip(d_out) {
                        *g += o;
                    }
                }
                if self.input_needs_grad(*row) {
                    let n = self.nodes[*row].value.as_slice().len();
                    let d = Self::ensure(adj, *row, n);
                    for chunk in d_out.chunks_exact(n) {
                        for (g, o) in d.iter_mut().zip(chunk) {
                            *g += o;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.nodes[*a].value.as_slice();
                let bv = self.nodes[*b].value.as_slice();
                if self.input_needs_grad(*a) {
                    let d = Self::ensure(adj, *a, d_out.len());
                    for i in 0..d_out.len() {
                        d[i] += d_out[i] * bv[i];
                    }
                }
                if self.input_needs_grad(*b) {
                    let d = Self::ensure(adj, *b, d_out.len());
                    for i in 0..d_out.len() {
                        d[i] += d_out[i] * av[i];
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.input_needs_grad(*x) {
                    let d = Self::ensure(adj, *x, d_out.len());
                    for (g, o) in d.iter_mut().zip(d_out) {
                        *g += c * o;
                    }
                }
            }
            Op::Transpose { x } => {
                if self.input_needs_grad(*x) {
                    let (_, r, c) = self.mat(Var(*x));
                    // d_out is c x r; transpose it back
                    let d = Self::ensure(adj, *x, r * c);
                    for i in 0..c {
                        for j in 0..r {
                            d[j * c + i] += d_out[i * r + j];
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if self.input_needs_grad(*x) {
                    let (_, _, c) = self.mat(Var(*x));
                    let numel = self.nodes[*x].value.as_slice().len();
                    let d = Self::ensure(adj, *x, numel);
                    let off = start * c;
                    for (g, o) in d[off..off + d_out.len()].iter_mut().zip(d_out) {
                        *g += o;
                    }
                }
            }
            Op::ConcatRows { xs } => {
                let mut off = 0;
                for &xi in xs {
                    let n = self.nodes[xi].value.as_slice().len();
                    if self.input_needs_grad(xi) {
                        let d = Self::ensure(adj, xi, n);
                        for (g, o) in d.iter_mut().zip(&d_out[off..off + n]) {
                            *g += o;
                        }
                    }
                    off += n;
                }
            }
            Op::Embedding { table, ids } => {
                if self.input_needs_grad(*table) {
                    let (_, _, d_cols) = self.mat(Var(*table));
                    let numel = self.nodes[*table].value.as_slice().len();
                    let d = Self::ensure(adj, *table, numel);
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &d_out[row * d_cols..(row + 1) * d_cols];
                        let dst = &mut d[id * d_cols..(id + 1) * d_cols];
                        for (g, o) in dst.iter_mut().zip(src) {
                            *g += o;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { logits, mask } => {
                if self.input_needs_grad(*logits) {
                    let probs = self.nodes[id].value.as_slice();
                    let c = mask.cols();
                    let numel = probs.len();
                    let d = Self::ensure(adj, *logits, numel);
                    for i in 0..mask.rows() {
                        let p = &probs[i * c..(i + 1) * c];
                        let o = &d_out[i * c..(i + 1) * c];
                        let dot: f64 = p.iter().zip(o).map(|(pi, oi)| pi * oi).sum();
                        let drow = &mut d[i * c..(i + 1) * c];
                        for j in 0..c {
                            // p is exactly 0 where masked, so masked logits
                            // receive exactly zero gradient.
                            drow[j] += p[j] * (o[j] - dot);
                        }
                    }
                }
            }
            Op::RmsNorm { x, gain } => {
                let (xv, m, d_cols) = self.mat(Var(*x));
                let gv = self.nodes[*gain].value.as_slice();
                let inv = &self.nodes[id].aux;
                if self.input_needs_grad(*x) {
                    let dx = Self::ensure(adj, *x, xv.len());
                    for i in 0..m {
                        let xrow = &xv[i * d_cols..(i + 1) * d_cols];
                        let orow = &d_out[i * d_cols..(i + 1) * d_cols];
                        let r = inv[i];
                        let dot: f64 = orow
                            .iter()
                            .zip(gv)
                            .zip(xrow)
                            .map(|((o, g), x)| o * g * x)
                            .sum();
                        let coef = dot * r * r * r / d_cols as f64;
                        let drow = &mut dx[i * d_cols..(i + 1) * d_cols];
                        for j in 0..d_cols {
                            drow[j] += orow[j] * gv[j] * r - xrow[j] * coef;
                        }
                    }
                }
                if self.input_needs_grad(*gain) {
                    let dg = Self::ensure(adj, *gain, gv.len());
                    for i in 0..m {
                        let xrow = &xv[i * d_cols..(i + 1) * d_cols];
                        let orow = &d_out[i * d_cols..(i + 1) * d_cols];
                        let r = inv[i];
                        for j in 0..d_cols {
                            dg[j] += orow[j] * xrow[j] * r;
                        }
                    }
                }
            }
            Op::Silu { x } => {
                if self.input_needs_grad(*x) {
                    let xv = self.nodes[*x].value.as_slice();
                    let d = Self::ensure(adj, *x, xv.len());
                    for i in 0..xv.len() {
                        d[i] += d_out[i] * kernels::silu_grad(xv[i]);
                    }
                }
            }
            Op::Sum { x } => {
                if self.input_needs_grad(*x) {
                    let n = self.nodes[*x].value.as_slice().len();
                    let d = Self::ensure(adj, *x, n);
                    for g in d.iter_mut() {
                        *g += d_out[0];
                    }
                }
            }
            Op::MseLoss { pred, target } => {
                let pv = self.nodes[*pred].value.as_slice();
                let tv = self.nodes[*target].value.as_slice();
                let n = pv.len() as f64;
                if self.input_needs_grad(*pred) {
                    let d = Self::ensure(adj, *pred, pv.len());
                    for i in 0..pv.len() {
                        d[i] += d_out[0] * 2.0 * (pv[i] - tv[i]) / n;
                    }
                }
                if self.input_needs_grad(*target) {
                    let d = Self::ensure(adj, *target, tv.len());
                    for i in 0..tv.len() {
                        d[i] -= d_out[0] * 2.0 * (pv[i] - tv[i]) / n;
                    }
                }
            }
            Op::L1Loss { pred, target } => {
                let pv = self.nodes[*pred].value.as_slice();
                let tv = self.nodes[*target].value.as_slice();
                let n = pv.len() as f64;
                if self.input_needs_grad(*pred) {
                    let d = Self::ensure(adj, *pred, pv.len());
                    for i in 0..pv.len() {
                        d[i] += d_out[0] * (pv[i] - tv[i]).signum_or_zero() / n;
                    }
                }
                if self.input_needs_grad(*target) {
                    let d = Self::ensure(adj, *target, tv.len());
                    for i in 0..tv.len() {
                        d[i] -= d_out[0] * (pv[i] - tv[i]).signum_or_zero() / n;
                    }
                }
            }
        }
    }

    /// Gradient of the last `backward` call with respect to `v`, or zeros
    /// if the node was never reached.
    pub fn grad(&self, v: Var) -> Result<Vec<f64>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::Contract("grad queried before backward".into()))?;
        Ok(match &grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.value(v).len()],
        })
    }

    /// Fold the gradients of all registered parameter leaves into the
    /// tensors' grad buffers, in registration order.
    pub fn accumulate_param_grads(&self, sink: &mut dyn FnMut(usize, &[f64])) -> Result<()> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::Contract("param grads queried before backward".into()))?;
        for &(node, slot) in &self.params {
            if let Some(g) = &grads[node] {
                sink(slot, g);
            }
        }
        Ok(())
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    // f64::signum(0.0) is 1.0-signed; the L1 subgradient at zero is zero.
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    /// Central finite differences of a scalar-valued function of one
    /// tensor, used as the independent oracle for the op-level checks.
    fn finite_diff(
        base: &Tensor,
        step: f64,
        f: &dyn Fn(&Tensor) -> f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; base.numel()];
        for i in 0..base.numel() {
            let mut plus = base.data().to_vec();
            plus[i] += step;
            let mut minus = base.data().to_vec();
            minus[i] -= step;
            let fp = f(&t(base.shape().to_vec(), plus).with_grad());
            let fm = f(&t(base.shape().to_vec(), minus).with_grad());
            out[i] = (fp - fm) / (2.0 * step);
        }
        out
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity_case() {
        let mut g = Graph::new();
        let eye = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = g.constant(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(c), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_matches_dot_product_oracle() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        // per-element dot products of rows of a with columns of b
        let mut expect = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    expect[i * 2 + j] += a[i * 2 + p] * b[p * 2 + j];
                }
            }
        }
        assert_eq!(expect, [19.0, 22.0, 43.0, 50.0]);

        let mut g = Graph::new();
        let av = g.constant(vec![2, 2], a.to_vec()).unwrap();
        let bv = g.constant(vec![2, 2], b.to_vec()).unwrap();
        let c = g.matmul(av, bv).unwrap();
        assert_eq!(g.value(c), &expect);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn matmul_grad_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = t(vec![3, 3], (0..9).map(|_| rng.random::<f64>() - 0.5).collect()).with_grad();
        let b = t(vec![3, 3], (0..9).map(|_| rng.random::<f64>() - 0.5).collect());

        let loss_of = |at: &Tensor| {
            let mut g = Graph::new();
            let av = g.leaf(at);
            let bv = g.leaf(&b);
            let c = g.matmul(av, bv).unwrap();
            let s = g.sum(c);
            g.scalar_value(s).unwrap()
        };

        let mut g = Graph::new();
        let av = g.leaf(&a);
        let bv = g.leaf(&b);
        let c = g.matmul(av, bv).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        let analytic = g.grad(av).unwrap();
        let numeric = finite_diff(&a, 1e-5, &loss_of);
        assert!(max_rel_err(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::new();
        let l = g.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let m = BoolMat::ones(1, 2);
        let p = g.masked_softmax(l, &m).unwrap();
        assert_eq!(g.value(p), &[0.5, 0.5]);

        let l2 = g.constant(vec![1, 2], vec![9.0, 3.0]).unwrap();
        let m2 = BoolMat::new(1, 2, vec![false, true]).unwrap();
        let p2 = g.masked_softmax(l2, &m2).unwrap();
        assert_eq!(g.value(p2), &[0.0, 1.0]);

        // direct exponentiation oracle
        let l3 = g.constant(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let p3 = g.masked_softmax(l3, &BoolMat::ones(1, 3)).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
        for (got, l) in g.value(p3).iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((got - l.exp() / z).abs() < 1e-12);
        }
        let expect = [0.09003, 0.24473, 0.66524];
        for (got, e) in g.value(p3).iter().zip(expect) {
            assert!((got - e).abs() < 1e-5);
        }
    }

    #[test]
    fn masked_softmax_fully_masked_row_is_structural_error() {
        let mut g = Graph::new();
        let l = g.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let m = BoolMat::new(1, 2, vec![false, false]).unwrap();
        let err = g.masked_softmax(l, &m).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_with_exact_zeros() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = 4;
            let c = 5;
            let logits: Vec<f64> = (0..r * c).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let mut mask: Vec<bool> = (0..r * c).map(|_| rng.random::<f64>() < 0.6).collect();
            for i in 0..r {
                let row = &mut mask[i * c..(i + 1) * c];
                if !row.iter().any(|&b| b) {
                    row[0] = true;
                }
            }
            let mask = BoolMat::new(r, c, mask).unwrap();
            let mut g = Graph::new();
            let l = g.constant(vec![r, c], logits).unwrap();
            let p = g.masked_softmax(l, &mask).unwrap();
            let pv = g.value(p);
            for i in 0..r {
                let mut sum = 0.0;
                for j in 0..c {
                    let v = pv[i * c + j];
                    assert!(v >= 0.0);
                    if !mask.get(i, j) {
                        assert_eq!(v, 0.0);
                    }
                    sum += v;
                }
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rms_norm_examples() {
        let mut g = Graph::new();
        let gain = g.constant(vec![2], vec![1.0, 1.0]).unwrap();

        let x = g.constant(vec![1, 2], vec![2.0, 2.0]).unwrap();
        let y = g.rms_norm(x, gain, 1e-15).unwrap();
        assert!((g.value(y)[0] - 1.0).abs() < 1e-7 && (g.value(y)[1] - 1.0).abs() < 1e-7);

        let x2 = g.constant(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let y2 = g.rms_norm(x2, gain, 1e-15).unwrap();
        let rms = (12.5f64).sqrt();
        assert!((g.value(y2)[0] - 3.0 / rms).abs() < 1e-7);
        assert!((g.value(y2)[1] - 4.0 / rms).abs() < 1e-7);
        assert!((g.value(y2)[0] - 0.84853).abs() < 1e-5);
        assert!((g.value(y2)[1] - 1.13137).abs() < 1e-5);

        let x3 = g.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let y3 = g.rms_norm(x3, gain, 1e-6).unwrap();
        assert_eq!(g.value(y3), &[0.0, 0.0]);
    }

    #[test]
    fn silu_examples() {
        let mut g = Graph::new();
        let x = g.constant(vec![3], vec![0.0, 1.0, -20.0]).unwrap();
        let y = g.silu(x);
        let v = g.value(y);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.7310585786300049).abs() < 1e-12);
        assert!((v[2] - (-20.0 * kernels::sigmoid(-20.0))).abs() < 1e-20);
        assert!((v[2] - (-4.12e-8)).abs() < 1e-10);
        assert!(v[2].is_finite());
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let p = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let z = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let mse = g.mse_loss(p, z).unwrap();
        let l1 = g.l1_loss(p, z).unwrap();
        assert_eq!(g.scalar_value(mse).unwrap(), 2.5);
        assert_eq!(g.scalar_value(l1).unwrap(), 1.5);

        // pred == target -> 0; constant offset 1 -> mse 1, l1 1
        let a = g.constant(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        let b = g.constant(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        let c = g.constant(vec![3], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(g.mse_loss(a, b).map(|v| g.scalar_value(v).unwrap()).unwrap(), 0.0);
        assert_eq!(g.mse_loss(c, a).map(|v| g.scalar_value(v).unwrap()).unwrap(), 1.0);
        assert_eq!(g.l1_loss(c, a).map(|v| g.scalar_value(v).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = t(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).with_grad();
        let xv = g.leaf(&x);
        let s = g.sum(xv);
        g.backward(s).unwrap();
        assert_eq!(g.grad(xv).unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_hand_chain_rule() {
        // loss = mse(W*x, y) with scalar W=2, x=3, y=0 -> dW = 2*(Wx-y)*x = 36
        let w = t(vec![1, 1], vec![2.0]).with_grad();
        let mut g = Graph::new();
        let wv = g.leaf(&w);
        let x = g.constant(vec![1, 1], vec![3.0]).unwrap();
        let y = g.constant(vec![1, 1], vec![0.0]).unwrap();
        let pred = g.matmul(wv, x).unwrap();
        let loss = g.mse_loss(pred, y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(wv).unwrap(), vec![36.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = t(vec![2], vec![1.0, 2.0]).with_grad();
        let xv = g.leaf(&x);
        assert!(matches!(g.backward(xv), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_across_branches() {
        // loss = sum(x + x): grad should be 2 everywhere
        let x = t(vec![3], vec![1.0, 2.0, 3.0]).with_grad();
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let y = g.add(xv, xv).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(xv).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn unreachable_parameters_get_zero_grad() {
        let x = t(vec![2], vec![1.0, 2.0]).with_grad();
        let y = t(vec![2], vec![3.0, 4.0]).with_grad();
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let yv = g.leaf(&y);
        let s = g.sum(xv);
        g.backward(s).unwrap();
        assert_eq!(g.grad(yv).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        // one composite touching every differentiable op
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let x = t(vec![3, 4], (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .with_grad();
        let gain = t(vec![4], vec![1.1, 0.9, 1.0, 1.2]);
        let w = t(vec![4, 4], (0..16).map(|_| rng.random::<f64>() - 0.5).collect());
        let row = t(vec![4], vec![0.1, -0.2, 0.3, 0.0]);
        let target = t(vec![3, 4], vec![0.25; 12]);
        let mask = BoolMat::new(
            3,
            3,
            vec![true, false, false, true, true, false, true, true, true],
        )
        .unwrap();

        let run = |xt: &Tensor| -> (f64, Option<Vec<f64>>) {
            let mut g = Graph::new();
            let xv = g.leaf(xt);
            let gv = g.leaf(&gain);
            let wv = g.leaf(&w);
            let rv = g.leaf(&row);
            let tv = g.leaf(&target);
            let n = g.rms_norm(xv, gv, 1e-6).unwrap();
            let h = g.matmul(n, wv).unwrap();
            let h = g.add_row(h, rv).unwrap();
            let h = g.silu(h);
            let ht = g.transpose(h).unwrap();
            let scores = g.matmul(h, ht).unwrap();
            let scores = g.scale(scores, 0.5);
            let probs = g.masked_softmax(scores, &mask).unwrap();
            let mixed = g.matmul(probs, h).unwrap();
            let top = g.slice_rows(mixed, 0, 2).unwrap();
            let bottom = g.slice_rows(mixed, 2, 1).unwrap();
            let joined = g.concat_rows(&[top, bottom]).unwrap();
            let prod = g.mul(joined, joined).unwrap();
            let loss = g.mse_loss(prod, tv).unwrap();
            let lv = g.scalar_value(loss).unwrap();
            if xt.requires_grad() {
                g.backward(loss).unwrap();
                (lv, Some(g.grad(xv).unwrap()))
            } else {
                (lv, None)
            }
        };

        let (_, analytic) = run(&x);
        let numeric = finite_diff(&x, 1e-5, &|xt| run(xt).0);
        let err = max_rel_err(analytic.as_ref().unwrap(), &numeric);
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn embedding_grad_scatters_to_rows() {
        let table = t(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad();
        let mut g = Graph::new();
        let tv = g.leaf(&table);
        let e = g.embedding(tv, &[0, 2, 0]).unwrap();
        assert_eq!(g.value(e), &[1.0, 2.0, 5.0, 6.0, 1.0, 2.0]);
        let s = g.sum(e);
        g.backward(s).unwrap();
        assert_eq!(g.grad(tv).unwrap(), vec![2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);

        assert!(matches!(g.embedding(tv, &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(vec![2, 2], vec![0.3, -0.7, 1.9, 2.2]).unwrap();
            let y = g.silu(x);
            let z = g.matmul(y, y).unwrap();
            g.value(z).to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "identical inputs must give bit-identical outputs");
    }
}
