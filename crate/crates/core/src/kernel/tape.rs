//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Tape`] stores every intermediate value in execution order together
//! with the primitive that produced it. [`Tape::backward`] walks the tape once
//! in reverse and returns gradients for every parameter leaf that was read
//! from a [`ParamStore`]. Gradients accumulate additively across fan-out.

use std::rc::Rc;

use rand::Rng;

use super::tensor::{gemm, Operand};
use super::{KernelError, ParamId, ParamStore, SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A constant sparse operator together with its transpose, shared between
/// forward passes.
#[derive(Debug)]
pub struct SparseOp {
    forward: SparseMatrix,
    transpose: SparseMatrix,
}

impl SparseOp {
    pub fn new(forward: SparseMatrix) -> Self {
        let transpose = forward.transpose();
        Self { forward, transpose }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.forward
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Exp(Var),
    RowNorm(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    SliceRows(Var, usize),
    SegmentMean(Var, Rc<[usize]>),
    SoftmaxCrossEntropy { logits: Var, targets: Rc<[usize]>, probs: Tensor },
    MaskedMse { pred: Var, target: Var, rows: Rc<[usize]> },
    Dropout(Var, Rc<[f64]>),
    StandardizeColumns { input: Var, inv_std: Vec<f64> },
    Spmm(Rc<SparseOp>, Var),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Ln(_) => "ln",
            Op::Exp(_) => "exp",
            Op::RowNorm(_) => "row_norm",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SegmentMean(..) => "segment_mean",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::MaskedMse { .. } => "masked_mse",
            Op::Dropout(..) => "dropout",
            Op::StandardizeColumns { .. } => "standardize_columns",
            Op::Spmm(..) => "spmm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every parameter of a store.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId::from_index(i), g))
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> KernelError {
    KernelError::Shape { op, detail }
}

impl Tape {
    /// A tape that records for a later [`Tape::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A tape that only evaluates; calling `backward` on it is an error.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
            consumed: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len() * 8).sum()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, KernelError> {
        if !value.is_finite() {
            return Err(KernelError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.recording,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reads a parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let recording = self.recording;
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            needs_grad: recording,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// Checks `b` is either the same shape as `a` or a `1 × cols` row.
    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool, KernelError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) == (br, bc) {
            Ok(false)
        } else if br == 1 && bc == ac {
            Ok(true)
        } else {
            Err(shape_err(op, format!("{ar}x{ac} with {br}x{bc}")))
        }
    }

    fn zip_with(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = av.clone();
        let cols = av.cols();
        if broadcast {
            let row = bv.data();
            for chunk in out.data_mut().chunks_mut(cols.max(1)) {
                for (o, &y) in chunk.iter_mut().zip(row) {
                    *o = f(*o, y);
                }
            }
        } else {
            for (o, &y) in out.data_mut().iter_mut().zip(bv.data()) {
                *o = f(*o, y);
            }
        }
        out
    }

    /// `a + b`, where `b` may be a `1 × cols` row broadcast over rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let broadcast = self.broadcast_kind("add", a, b)?;
        let value = self.zip_with(a, b, broadcast, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add { a, b, broadcast }, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let broadcast = self.broadcast_kind("sub", a, b)?;
        let value = self.zip_with(a, b, broadcast, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub { a, b, broadcast }, ng)
    }

    /// Elementwise product, with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let broadcast = self.broadcast_kind("mul", a, b)?;
        let value = self.zip_with(a, b, broadcast, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul { a, b, broadcast }, ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, KernelError> {
        let value = self.value(a).scale(factor);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, factor), ng)
    }

    /// Multiplies every entry of `a` by the `1 × 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, KernelError> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale_by", format!("factor is {:?}", self.shape(s))));
        }
        let factor = self.value(s).item();
        let value = self.value(a).scale(factor);
        let ng = self.needs(a) || self.needs(s);
        self.push(value, Op::ScaleBy(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(f64::ln);
        let ng = self.needs(a);
        self.push(value, Op::Ln(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(value, Op::Exp(a), ng)
    }

    /// Euclidean norm of every row, as an `n × 1` column.
    pub fn row_norm(&mut self, a: Var) -> Result<Var, KernelError> {
        let norms = self.value(a).row_norms();
        let value = Tensor::from_vec(norms.len(), 1, norms)?;
        let ng = self.needs(a);
        self.push(value, Op::RowNorm(a), ng)
    }

    /// Side-by-side concatenation `[a ∥ b ∥ …]`; row counts must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(shape_err("concat_cols", format!("row counts {rows} and {r}")));
            }
            cols += c;
        }
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Stacks blocks vertically; column counts must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::vstack(&tensors).map_err(|_| {
            shape_err("concat_rows", "blocks have different column counts".into())
        })?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows of `a` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: impl Into<Rc<[usize]>>) -> Result<Var, KernelError> {
        let index: Rc<[usize]> = index.into();
        let rows = self.shape(a).0;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        let value = self.value(a).gather_rows(&index);
        let ng = self.needs(a);
        self.push(value, Op::GatherRows(a, index), ng)
    }

    /// The contiguous block of rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, KernelError> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(shape_err("slice_rows", format!("{start}+{len} of {rows} rows")));
        }
        let src = self.value(a);
        let value = Tensor::from_vec(len, cols, src.data()[start * cols..(start + len) * cols].to_vec())?;
        let ng = self.needs(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    /// Mean of consecutive row groups: group `s` covers rows
    /// `offsets[s]..offsets[s + 1]`. Empty groups produce zero rows.
    pub fn segment_mean(&mut self, a: Var, offsets: impl Into<Rc<[usize]>>) -> Result<Var, KernelError> {
        let offsets: Rc<[usize]> = offsets.into();
        let (rows, cols) = self.shape(a);
        if offsets.is_empty()
            || offsets[0] != 0
            || *offsets.last().unwrap() != rows
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(shape_err("segment_mean", format!("offsets do not partition {rows} rows")));
        }
        let segments = offsets.len() - 1;
        let src = self.value(a);
        let mut value = Tensor::zeros(segments, cols);
        for s in 0..segments {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi == lo {
                continue;
            }
            let out = value.row_mut(s);
            for r in lo..hi {
                for (o, x) in out.iter_mut().zip(src.row(r)) {
                    *o += x;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::SegmentMean(a, offsets), ng)
    }

    /// Mean softmax cross-entropy of `logits` rows against integer targets.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: impl Into<Rc<[usize]>>,
    ) -> Result<Var, KernelError> {
        let targets: Rc<[usize]> = targets.into();
        let (rows, cols) = self.shape(logits);
        if targets.len() != rows || rows == 0 {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(shape_err("softmax_cross_entropy", format!("class {bad} of {cols}")));
        }
        let src = self.value(logits);
        let mut probs = Tensor::zeros(rows, cols);
        let mut loss = 0.0;
        for r in 0..rows {
            let row = src.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_denom = denom.ln();
            loss -= row[targets[r]] - max - log_denom;
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - max).exp() / denom;
            }
        }
        let value = Tensor::scalar(loss / rows as f64);
        let ng = self.needs(logits);
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
            ng,
        )
    }

    /// `(1/|rows|) Σ_{r ∈ rows} ‖pred_r − target_r‖²`.
    pub fn masked_mse(
        &mut self,
        pred: Var,
        target: Var,
        rows: impl Into<Rc<[usize]>>,
    ) -> Result<Var, KernelError> {
        let rows: Rc<[usize]> = rows.into();
        if self.shape(pred) != self.shape(target) {
            return Err(shape_err(
                "masked_mse",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let n = self.shape(pred).0;
        if rows.is_empty() {
            return Err(shape_err("masked_mse", "empty row mask".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(shape_err("masked_mse", format!("row {bad} of {n}")));
        }
        let (p, t) = (self.value(pred), self.value(target));
        let total: f64 = rows
            .iter()
            .map(|&r| p.row(r).iter().zip(t.row(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        let value = Tensor::scalar(total / rows.len() as f64);
        let ng = self.needs(pred) || self.needs(target);
        self.push(value, Op::MaskedMse { pred, target, rows }, ng)
    }

    /// Inverted dropout. In eval mode (`train == false`) or at rate 0 this is
    /// the identity and returns `a` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, KernelError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(KernelError::InvalidArgument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Rc<[f64]> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut value = self.value(a).clone();
        for (v, m) in value.data_mut().iter_mut().zip(mask.iter()) {
            *v *= m;
        }
        let ng = self.needs(a);
        self.push(value, Op::Dropout(a, mask), ng)
    }

    /// Standardizes every column to zero mean and unit variance:
    /// `(x − μ) / sqrt(σ² + eps)` with the population variance. Constant
    /// columns map to zero.
    pub fn standardize_columns(&mut self, a: Var, eps: f64) -> Result<Var, KernelError> {
        let src = self.value(a);
        let (rows, cols) = src.shape();
        let mut value = src.clone();
        let mut inv_std = vec![0.0; cols];
        if rows > 0 {
            for (c, inv) in inv_std.iter_mut().enumerate() {
                let mean = (0..rows).map(|r| src.get(r, c)).sum::<f64>() / rows as f64;
                let var = (0..rows)
                    .map(|r| (src.get(r, c) - mean).powi(2))
                    .sum::<f64>()
                    / rows as f64;
                *inv = 1.0 / (var + eps).sqrt();
                for r in 0..rows {
                    value.set(r, c, (src.get(r, c) - mean) * *inv);
                }
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::StandardizeColumns { input: a, inv_std }, ng)
    }

    /// `op · a` for a constant sparse operator.
    pub fn spmm(&mut self, op: &Rc<SparseOp>, a: Var) -> Result<Var, KernelError> {
        let m = op.matrix();
        if m.cols() != self.shape(a).0 {
            return Err(shape_err(
                "spmm",
                format!("{}x{} times {:?}", m.rows(), m.cols(), self.shape(a)),
            ));
        }
        let value = m.mul_dense(self.value(a));
        let ng = self.needs(a);
        self.push(value, Op::Spmm(Rc::clone(op), a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, KernelError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Runs the reverse pass from the scalar `loss` and returns the gradient
    /// of every parameter in `store` (zero for parameters the loss never read).
    pub fn backward(&mut self, loss: Var, store: &ParamStore) -> Result<Gradients, KernelError> {
        if !self.recording || loss.0 >= self.nodes.len() {
            return Err(KernelError::NoTape);
        }
        if self.consumed {
            return Err(KernelError::TapeConsumed);
        }
        if self.shape(loss) != (1, 1) {
            return Err(KernelError::NotScalar {
                shape: self.shape(loss),
            });
        }
        self.consumed = true;

        let mut out: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut [Tensor],
    ) {
        let nodes = &self.nodes;
        // Accumulator for input `v`, allocated on first touch.
        fn slot<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], v: Var) -> Option<&'a mut Tensor> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let (r, c) = nodes[v.0].value.shape();
            Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
        }
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out[id.index()].add_assign(g),
            Op::MatMul(a, b) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    gemm(Operand::plain(g), Operand::transposed(val(*b)), ga, 1.0);
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    gemm(Operand::transposed(val(*a)), Operand::plain(g), gb, 1.0);
                }
            }
            Op::Add { a, b, broadcast } | Op::Sub { a, b, broadcast } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if let Some(ga) = slot(grads, nodes, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    if *broadcast {
                        let cols = g.cols();
                        for chunk in g.data().chunks(cols.max(1)) {
                            for (o, x) in gb.data_mut().iter_mut().zip(chunk) {
                                *o += sign * x;
                            }
                        }
                    } else {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.data()) {
                            *o += sign * x;
                        }
                    }
                }
            }
            Op::Mul { a, b, broadcast } => {
                let (av, bv) = (val(*a), val(*b));
                let cols = g.cols().max(1);
                if let Some(ga) = slot(grads, nodes, *a) {
                    if *broadcast {
                        for (gc, oc) in g.data().chunks(cols).zip(ga.data_mut().chunks_mut(cols)) {
                            for ((o, x), y) in oc.iter_mut().zip(gc).zip(bv.data()) {
                                *o += x * y;
                            }
                        }
                    } else {
                        for ((o, x), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += x * y;
                        }
                    }
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    if *broadcast {
                        for (gc, ac) in g.data().chunks(cols).zip(av.data().chunks(cols)) {
                            for ((o, x), y) in gb.data_mut().iter_mut().zip(gc).zip(ac) {
                                *o += x * y;
                            }
                        }
                    } else {
                        for ((o, x), y) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += x * y;
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for (o, x) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += factor * x;
                    }
                }
            }
            Op::ScaleBy(a, s) => {
                let factor = val(*s).item();
                let dot: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                if let Some(ga) = slot(grads, nodes, *a) {
                    for (o, x) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += factor * x;
                    }
                }
                if let Some(gs) = slot(grads, nodes, *s) {
                    gs.data_mut()[0] += dot;
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += x * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(a) => {
                let input = val(*a);
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), z) in ga.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
                        if *z > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Ln(a) => {
                let input = val(*a);
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), z) in ga.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
                        *o += x / z;
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += x * y;
                    }
                }
            }
            Op::RowNorm(a) => {
                let input = val(*a);
                if let Some(ga) = slot(grads, nodes, *a) {
                    for r in 0..input.rows() {
                        let norm = node.value.get(r, 0);
                        if norm == 0.0 {
                            continue;
                        }
                        let coef = g.get(r, 0) / norm;
                        for (o, x) in ga.row_mut(r).iter_mut().zip(input.row(r)) {
                            *o += coef * x;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).cols();
                    if let Some(gp) = slot(grads, nodes, p) {
                        for r in 0..g.rows() {
                            for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + width]) {
                                *o += x;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if let Some(gp) = slot(grads, nodes, p) {
                        for (o, x) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *o += x;
                        }
                    }
                    offset += len;
                }
                debug_assert_eq!(offset, g.rows() * cols);
            }
            Op::GatherRows(a, index) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for (r, &src) in index.iter().enumerate() {
                        for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let cols = g.cols();
                    let dst = &mut ga.data_mut()[start * cols..start * cols + g.len()];
                    for (o, x) in dst.iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
            }
            Op::SegmentMean(a, offsets) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        if hi == lo {
                            continue;
                        }
                        let inv = 1.0 / (hi - lo) as f64;
                        for r in lo..hi {
                            for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                                *o += inv * x;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let upstream = g.item() / targets.len() as f64;
                if let Some(gl) = slot(grads, nodes, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (o, p)) in gl.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            *o += upstream * (p - onehot);
                        }
                    }
                }
            }
            Op::MaskedMse { pred, target, rows } => {
                let coef = 2.0 * g.item() / rows.len() as f64;
                let (pv, tv) = (val(*pred), val(*target));
                if let Some(gp) = slot(grads, nodes, *pred) {
                    for &r in rows.iter() {
                        for ((o, a), b) in gp.row_mut(r).iter_mut().zip(pv.row(r)).zip(tv.row(r)) {
                            *o += coef * (a - b);
                        }
                    }
                }
                if let Some(gt) = slot(grads, nodes, *target) {
                    for &r in rows.iter() {
                        for ((o, a), b) in gt.row_mut(r).iter_mut().zip(pv.row(r)).zip(tv.row(r)) {
                            *o -= coef * (a - b);
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for ((o, x), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.iter()) {
                        *o += x * m;
                    }
                }
            }
            Op::StandardizeColumns { input, inv_std } => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                if let Some(gi) = slot(grads, nodes, *input) {
                    let n = rows as f64;
                    for (c, &s) in inv_std.iter().enumerate() {
                        let mean_g = (0..rows).map(|r| g.get(r, c)).sum::<f64>() / n;
                        let mean_gy = (0..rows).map(|r| g.get(r, c) * y.get(r, c)).sum::<f64>() / n;
                        for r in 0..rows {
                            let d = s * (g.get(r, c) - mean_g - y.get(r, c) * mean_gy);
                            gi.set(r, c, gi.get(r, c) + d);
                        }
                    }
                    debug_assert_eq!(cols, inv_std.len());
                }
            }
            Op::Spmm(op, a) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    ga.add_assign(&op.transpose.mul_dense(g));
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let x = g.item();
                    for o in ga.data_mut() {
                        *o += x;
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let x = g.item() / ga.len() as f64;
                    for o in ga.data_mut() {
                        *o += x;
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
