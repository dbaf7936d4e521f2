//! Recorded-tape reverse-mode differentiation over a fixed op vocabulary.
//!
//! A `Tape` records the forward pass as a linear sequence of nodes and
//! replays it in reverse to accumulate gradients. The op set is a closed
//! enum: every variant has a backward rule, so an op without a gradient
//! cannot be recorded in the first place. Parameters enter as snapshot
//! leaves bound to a `ParamStore` slot; after `backward`, their gradients
//! are pushed back with `accumulate_param_grads`.
//!
//! One tape is single-threaded. Concurrent forward passes need independent
//! tapes over a shared read-only parameter snapshot.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{GlotError, Result};
use crate::numeric::matrix::Matrix;
use crate::numeric::param::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(TapeId, TapeId),
    Transpose(TapeId),
    Add(TapeId, TapeId),
    Sub(TapeId, TapeId),
    /// `a (m x n) + b (1 x n)` broadcast over rows.
    AddRowBroadcast(TapeId, TapeId),
    Mul(TapeId, TapeId),
    /// `out[i][j] = a[i][j] * b[i][0]`, b is m x 1.
    MulColBroadcast(TapeId, TapeId),
    /// `out = a * s` where s is a 1x1 tape node.
    ScaleByScalar(TapeId, TapeId),
    ScaleConst(TapeId, f64),
    /// Per-row constant factors (degree normalizations etc.).
    ScaleRows(TapeId, Arc<Vec<f64>>),
    Tanh(TapeId),
    Relu(TapeId),
    LeakyRelu(TapeId, f64),
    Log(TapeId),
    Sqrt(TapeId),
    Recip(TapeId),
    ClampMin(TapeId, f64),
    RowSum(TapeId),
    SumAll(TapeId),
    RowSoftmax(TapeId),
    /// Softmax over contiguous segments of a column vector.
    SegmentSoftmax(TapeId, Arc<Vec<usize>>),
    /// Row sums grouped by non-decreasing segment id.
    SegmentSum(TapeId, Arc<Vec<usize>>, usize),
    /// Row gather; backward scatter-adds into the source.
    Gather(TapeId, Arc<Vec<usize>>),
    ConcatCols(Vec<TapeId>),
    /// Elementwise max; ties route the gradient to the first operand.
    MaxElem(TapeId, TapeId),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<usize, TapeId>,
    grads: Vec<Option<Matrix>>,
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

    pub fn value(&self, id: TapeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> TapeId {
        self.nodes.push(Node { value, op });
        TapeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> TapeId {
        self.push(value, Op::Const)
    }

    /// Binds a parameter slot as a leaf, snapshotting its current value.
    /// Repeated binds of the same slot return the existing leaf so its
    /// gradient accumulates across all uses.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TapeId {
        if let Some(&leaf) = self.param_leaves.get(&id.index()) {
            return leaf;
        }
        let leaf = self.push(store.value(id).clone(), Op::Param(id.index()));
        self.param_leaves.insert(id.index(), leaf);
        leaf
    }

    fn shape_err(op: &'static str, detail: String) -> GlotError {
        GlotError::ShapeMismatch { op, detail }
    }

    pub fn matmul(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(Self::shape_err("matmul", format!("{ar}x{ac} * {br}x{bc}")));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let value = self.value(a).add(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "sub",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let value = self.value(a).sub(self.value(b));
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn add_row_broadcast(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let (_, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if br != 1 || bc != ac {
            return Err(Self::shape_err(
                "add_row_broadcast",
                format!("bias {br}x{bc} against {ac} columns"),
            ));
        }
        let mut value = self.value(a).clone();
        let bias = self.value(b).row(0).to_vec();
        for r in 0..value.rows() {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddRowBroadcast(a, b)))
    }

    pub fn mul(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *v *= w;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn mul_col_broadcast(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let (ar, _) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if bc != 1 || br != ar {
            return Err(Self::shape_err(
                "mul_col_broadcast",
                format!("weights {br}x{bc} against {ar} rows"),
            ));
        }
        let mut value = self.value(a).clone();
        for r in 0..ar {
            let w = self.nodes[b.0].value.get(r, 0);
            for v in value.row_mut(r) {
                *v *= w;
            }
        }
        Ok(self.push(value, Op::MulColBroadcast(a, b)))
    }

    pub fn scale_by_scalar(&mut self, a: TapeId, s: TapeId) -> Result<TapeId> {
        if self.value(s).shape() != (1, 1) {
            return Err(Self::shape_err(
                "scale_by_scalar",
                format!("scalar operand is {:?}", self.value(s).shape()),
            ));
        }
        let c = self.value(s).scalar();
        let value = self.value(a).scale(c);
        Ok(self.push(value, Op::ScaleByScalar(a, s)))
    }

    pub fn scale_const(&mut self, a: TapeId, c: f64) -> TapeId {
        let value = self.value(a).scale(c);
        self.push(value, Op::ScaleConst(a, c))
    }

    pub fn scale_rows(&mut self, a: TapeId, factors: Arc<Vec<f64>>) -> Result<TapeId> {
        if factors.len() != self.value(a).rows() {
            return Err(Self::shape_err(
                "scale_rows",
                format!("{} factors for {} rows", factors.len(), self.value(a).rows()),
            ));
        }
        let mut value = self.value(a).clone();
        for (r, &f) in factors.iter().enumerate() {
            for v in value.row_mut(r) {
                *v *= f;
            }
        }
        Ok(self.push(value, Op::ScaleRows(a, factors)))
    }

    pub fn tanh(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: TapeId, slope: f64) -> TapeId {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn log(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).map(f64::recip);
        self.push(value, Op::Recip(a))
    }

    pub fn clamp_min(&mut self, a: TapeId, floor: f64) -> TapeId {
        let value = self.value(a).map(|x| x.max(floor));
        self.push(value, Op::ClampMin(a, floor))
    }

    pub fn row_sum(&mut self, a: TapeId) -> TapeId {
        let m = self.value(a);
        let mut value = Matrix::zeros(m.rows(), 1);
        for r in 0..m.rows() {
            value.set(r, 0, m.row(r).iter().sum());
        }
        self.push(value, Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: TapeId) -> TapeId {
        let s: f64 = self.value(a).data().iter().sum();
        let value = Matrix::from_vec(1, 1, vec![s]).expect("finite sum");
        self.push(value, Op::SumAll(a))
    }

    pub fn row_softmax(&mut self, a: TapeId) -> TapeId {
        let m = self.value(a);
        let mut value = m.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::RowSoftmax(a))
    }

    /// Softmax within contiguous segments of a column vector. Segment ids
    /// must be non-decreasing (rows grouped per sentence).
    pub fn segment_softmax(&mut self, a: TapeId, segments: Arc<Vec<usize>>) -> Result<TapeId> {
        let m = self.value(a);
        if m.cols() != 1 {
            return Err(Self::shape_err(
                "segment_softmax",
                format!("expected column vector, got {:?}", m.shape()),
            ));
        }
        validate_segments(&segments, m.rows(), "segment_softmax")?;
        let mut value = m.clone();
        for (start, end) in segment_ranges(&segments) {
            softmax_in_place(&mut value.data_mut()[start..end]);
        }
        Ok(self.push(value, Op::SegmentSoftmax(a, segments)))
    }

    /// Sums rows that share a segment id into one output row per segment.
    /// Rows are visited in index order, so summation order is fixed.
    pub fn segment_sum(
        &mut self,
        a: TapeId,
        segments: Arc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<TapeId> {
        let m = self.value(a);
        validate_segments(&segments, m.rows(), "segment_sum")?;
        if let Some(&max) = segments.iter().max() {
            if max >= n_segments {
                return Err(Self::shape_err(
                    "segment_sum",
                    format!("segment id {max} >= n_segments {n_segments}"),
                ));
            }
        }
        let mut value = Matrix::zeros(n_segments, m.cols());
        for (r, &s) in segments.iter().enumerate() {
            let src = m.row(r);
            for (v, x) in value.row_mut(s).iter_mut().zip(src) {
                *v += x;
            }
        }
        Ok(self.push(value, Op::SegmentSum(a, segments, n_segments)))
    }

    pub fn gather(&mut self, a: TapeId, indices: Arc<Vec<usize>>) -> Result<TapeId> {
        let m = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m.rows()) {
            return Err(Self::shape_err(
                "gather",
                format!("row index {bad} out of {}", m.rows()),
            ));
        }
        let mut value = Matrix::zeros(indices.len(), m.cols());
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).copy_from_slice(m.row(i));
        }
        Ok(self.push(value, Op::Gather(a, indices)))
    }

    pub fn concat_cols(&mut self, parts: &[TapeId]) -> Result<TapeId> {
        if parts.is_empty() {
            return Err(GlotError::EmptyBatch("concat_cols"));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("{} rows vs {}", self.value(p).rows(), rows),
                ));
            }
            cols += self.value(p).cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn max_elem(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "max_elem",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            if *w > *v {
                *v = *w;
            }
        }
        Ok(self.push(value, Op::MaxElem(a, b)))
    }

    /// Reverse pass from a 1x1 loss node. Gradients for every node are
    /// retained on the tape until the next backward call.
    pub fn backward(&mut self, loss: TapeId) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Self::shape_err(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        self.grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).expect("unit seed"));

        for i in (0..n).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_step(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: TapeId, delta: Matrix) {
        match &mut self.grads[target.0] {
            Some(existing) => existing.axpy(1.0, &delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_step(&mut self, i: usize, g: &Matrix) {
        // Closed op vocabulary: the match is exhaustive, so every recorded
        // op has a gradient rule by construction.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Const | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(b));
                let db = self.value(a).matmul_tn(g);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Transpose(a) => {
                self.accumulate(a, g.transpose());
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.scale(-1.0));
            }
            Op::AddRowBroadcast(a, b) => {
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                self.accumulate(a, g.clone());
                self.accumulate(b, db);
            }
            Op::Mul(a, b) => {
                let mut da = g.clone();
                for (d, x) in da.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
                    *d *= x;
                }
                let mut db = g.clone();
                for (d, x) in db.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                    *d *= x;
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::MulColBroadcast(a, b) => {
                let mut da = g.clone();
                let mut db = Matrix::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    let w = self.nodes[b.0].value.get(r, 0);
                    let mut acc = 0.0;
                    for (d, x) in da.row_mut(r).iter_mut().zip(self.nodes[a.0].value.row(r)) {
                        acc += *d * x;
                        *d *= w;
                    }
                    db.set(r, 0, acc);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::ScaleByScalar(a, s) => {
                let c = self.value(s).scalar();
                let da = g.scale(c);
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(gv, av)| gv * av)
                    .sum();
                self.accumulate(a, da);
                self.accumulate(s, Matrix::from_vec(1, 1, vec![ds]).expect("finite"));
            }
            Op::ScaleConst(a, c) => {
                self.accumulate(a, g.scale(c));
            }
            Op::ScaleRows(a, factors) => {
                let mut da = g.clone();
                for (r, &f) in factors.iter().enumerate() {
                    for d in da.row_mut(r) {
                        *d *= f;
                    }
                }
                self.accumulate(a, da);
            }
            Op::Tanh(a) => {
                let mut da = g.clone();
                for (d, y) in da.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                    *d *= 1.0 - y * y;
                }
                self.accumulate(a, da);
            }
            Op::Relu(a) => {
                let mut da = g.clone();
                for (d, x) in da.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                    if *x <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(a, da);
            }
            Op::LeakyRelu(a, slope) => {
                let mut da = g.clone();
                for (d, x) in da.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                    if *x <= 0.0 {
                        *d *= slope;
                    }
                }
                self.accumulate(a, da);
            }
            Op::Log(a) => {
                let mut da = g.clone();
                for (d, x) in da.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                    *d /= x;
                }
                self.accumulate(a, da);
            }
            Op::Sqrt(a) => {
                let mut da = g.clone();
                for (d, y) in da.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                    *d *= 0.5 / y;
                }
                self.accumulate(a, da);
            }
            Op::Recip(a) => {
                let mut da = g.clone();
                for (d, y) in da.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                    *d *= -(y * y);
                }
                self.accumulate(a, da);
            }
            Op::ClampMin(a, floor) => {
                let mut da = g.clone();
                for (d, x) in da.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                    if *x < floor {
                        *d = 0.0;
                    }
                }
                self.accumulate(a, da);
            }
            Op::RowSum(a) => {
                let (rows, cols) = self.value(a).shape();
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gv = g.get(r, 0);
                    da.row_mut(r).iter_mut().for_each(|d| *d = gv);
                }
                self.accumulate(a, da);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.value(a).shape();
                let da = Matrix::full(rows, cols, g.scalar());
                self.accumulate(a, da);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[i].value;
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for (d, (yv, gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(a, da);
            }
            Op::SegmentSoftmax(a, segments) => {
                let y = &self.nodes[i].value;
                let mut da = Matrix::zeros(y.rows(), 1);
                for (start, end) in segment_ranges(&segments) {
                    let dot: f64 = (start..end).map(|r| y.get(r, 0) * g.get(r, 0)).sum();
                    for r in start..end {
                        da.set(r, 0, y.get(r, 0) * (g.get(r, 0) - dot));
                    }
                }
                self.accumulate(a, da);
            }
            Op::SegmentSum(a, segments, n_segments) => {
                debug_assert_eq!(g.rows(), n_segments);
                let cols = self.value(a).cols();
                let mut da = Matrix::zeros(segments.len(), cols);
                for (r, &s) in segments.iter().enumerate() {
                    da.row_mut(r).copy_from_slice(g.row(s));
                }
                self.accumulate(a, da);
            }
            Op::Gather(a, indices) => {
                let (rows, cols) = self.value(a).shape();
                let mut da = Matrix::zeros(rows, cols);
                for (r, &src) in indices.iter().enumerate() {
                    for (d, x) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                self.accumulate(a, da);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let mut dp = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    self.accumulate(p, dp);
                }
            }
            Op::MaxElem(a, b) => {
                let mut da = g.clone();
                let mut db = g.clone();
                for (k, (da_v, db_v)) in da
                    .data_mut()
                    .iter_mut()
                    .zip(db.data_mut().iter_mut())
                    .enumerate()
                {
                    if self.nodes[a.0].value.data()[k] >= self.nodes[b.0].value.data()[k] {
                        *db_v = 0.0;
                    } else {
                        *da_v = 0.0;
                    }
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
        }
    }

    /// Gradient of a node from the last backward pass, if it received one.
    pub fn grad(&self, id: TapeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of all bound parameter leaves into their
    /// `ParamStore` slots.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                if let Some(g) = self.grads.get(i).and_then(|g| g.as_ref()) {
                    store.grad_mut(ParamId::from_index(slot)).axpy(1.0, g);
                }
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn validate_segments(segments: &[usize], rows: usize, op: &'static str) -> Result<()> {
    if segments.len() != rows {
        return Err(GlotError::ShapeMismatch {
            op,
            detail: format!("{} segment ids for {} rows", segments.len(), rows),
        });
    }
    if segments.windows(2).any(|w| w[1] < w[0]) {
        return Err(GlotError::ShapeMismatch {
            op,
            detail: "segment ids must be non-decreasing".into(),
        });
    }
    Ok(())
}

fn segment_ranges(segments: &[usize]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=segments.len() {
        if i == segments.len() || segments[i] != segments[start] {
            ranges.push((start, i));
            start = i;
        }
    }
    ranges
}
