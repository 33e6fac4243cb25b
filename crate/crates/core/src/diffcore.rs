//! Dense row-major matrices and a tape for reverse-mode differentiation.
//!
//! The tape records every operation of a forward pass as a node holding its
//! value. [`Tape::backward`] then walks the nodes in reverse recording order
//! (which is a topological order) and accumulates vector-Jacobian products
//! into per-node gradient slots. Only the operations the message-passing
//! model and the Potts loss need are provided.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Clamp applied inside the logarithm of the entropy head.
pub const LOG_CLAMP: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2::from_vec",
                format!("{} values for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Tensor2::from_rows", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column tensor still has `rows` empty rows
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor2, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    fn view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &self.data).expect("length checked at construction")
    }

    fn view_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut self.data).expect("length checked at construction")
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Permutation-invariant reduction used to aggregate rows into segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
    Max,
}

impl Aggregation {
    pub fn id(self) -> u32 {
        match self {
            Aggregation::Sum => 0,
            Aggregation::Mean => 1,
            Aggregation::Max => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Aggregation::Sum),
            1 => Some(Aggregation::Mean),
            2 => Some(Aggregation::Max),
            _ => None,
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::InvalidArgument(format!("unknown aggregation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        })
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Concat(Vec<Var>),
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    SegmentSum {
        x: Var,
        segments: Arc<[usize]>,
    },
    SegmentMean {
        x: Var,
        segments: Arc<[usize]>,
        inv_count: Vec<f64>,
    },
    // source row per output element; usize::MAX for empty segments
    SegmentMax {
        x: Var,
        winner: Vec<usize>,
    },
    EdgeEnergy {
        y: Var,
        edges: Arc<[(usize, usize)]>,
        scale: f64,
    },
    NegEntropy {
        y: Var,
        scale: f64,
    },
    Overlap {
        y: Var,
        target: Tensor2,
        scale: f64,
    },
    Sum(Var),
    LinComb(Vec<(f64, Var)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor2 {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor2 {
        match self.slots[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

fn slot(slots: &mut [Option<Tensor2>], v: Var, shape: (usize, usize)) -> &mut Tensor2 {
    slots[v.0].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1))
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

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `x Wᵀ + b` for `x: [n, in]`, `W: [out, in]`, `b: [1, out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols != wv.cols || bv.shape() != (1, wv.rows) {
            return Err(Error::shape(
                "affine",
                format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let mut y = Tensor2::zeros(xv.rows, wv.rows);
        for r in 0..y.rows {
            y.row_mut(r).copy_from_slice(&bv.data);
        }
        general_mat_mul(1.0, &xv.view(), &wv.view().t(), 1.0, &mut y.view_mut());
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(y, Op::Affine { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        let rg = self.needs(&[x]);
        self.push(y, Op::Tanh(x), rg)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let y = softmax_rows(self.value(x));
        let rg = self.needs(&[x]);
        self.push(y, Op::SoftmaxRows(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(*first).rows;
        if parts.iter().any(|p| self.value(*p).rows != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut y = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let out = y.row_mut(r);
            let mut at = 0;
            for p in parts {
                let src = self.nodes[p.0].value.row(r);
                out[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(y, Op::Concat(parts.to_vec()), rg))
    }

    /// Row `r` of the output is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: xv.rows,
            });
        }
        let mut y = Tensor2::zeros(index.len(), xv.cols);
        for (r, &i) in index.iter().enumerate() {
            y.row_mut(r).copy_from_slice(xv.row(i));
        }
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Gather { x, index }, rg))
    }

    /// Reduce row `r` of `x` into output row `segments[r]`. Empty segments
    /// produce zero rows for every reduction.
    pub fn segment_reduce(
        &mut self,
        x: Var,
        segments: Arc<[usize]>,
        n_segments: usize,
        reduce: Aggregation,
    ) -> Result<Var> {
        let xv = self.value(x);
        if segments.len() != xv.rows {
            return Err(Error::shape(
                "segment_reduce",
                format!("{} segment ids for {} rows", segments.len(), xv.rows),
            ));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: n_segments,
            });
        }
        let d = xv.cols;
        let mut y = Tensor2::zeros(n_segments, d);
        let op = match reduce {
            Aggregation::Sum | Aggregation::Mean => {
                for (r, &s) in segments.iter().enumerate() {
                    for (o, v) in y.row_mut(s).iter_mut().zip(xv.row(r)) {
                        *o += v;
                    }
                }
                if reduce == Aggregation::Sum {
                    Op::SegmentSum { x, segments }
                } else {
                    let mut count = vec![0usize; n_segments];
                    for &s in segments.iter() {
                        count[s] += 1;
                    }
                    let inv_count: Vec<f64> = count
                        .iter()
                        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                        .collect();
                    for (s, &inv) in inv_count.iter().enumerate() {
                        y.row_mut(s).iter_mut().for_each(|v| *v *= inv);
                    }
                    Op::SegmentMean { x, segments, inv_count }
                }
            }
            Aggregation::Max => {
                let mut winner = vec![usize::MAX; n_segments * d];
                for (r, &s) in segments.iter().enumerate() {
                    for (k, &v) in xv.row(r).iter().enumerate() {
                        let w = &mut winner[s * d + k];
                        if *w == usize::MAX || v > y.data[s * d + k] {
                            *w = r;
                            y.data[s * d + k] = v;
                        }
                    }
                }
                Op::SegmentMax { x, winner }
            }
        };
        let rg = self.needs(&[x]);
        Ok(self.push(y, op, rg))
    }

    /// `scale * Σ_(i,j) <y_i, y_j>` over the given undirected edges.
    pub fn edge_energy(&mut self, y: Var, edges: Arc<[(usize, usize)]>, scale: f64) -> Result<Var> {
        let yv = self.value(y);
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i.max(j) >= yv.rows) {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                len: yv.rows,
            });
        }
        let total: f64 = edges.iter().map(|&(i, j)| dot(yv.row(i), yv.row(j))).sum();
        let rg = self.needs(&[y]);
        Ok(self.push(Tensor2::scalar(scale * total), Op::EdgeEnergy { y, edges, scale }, rg))
    }

    /// `scale * Σ y log2 y`, with the logarithm's argument clamped at
    /// [`LOG_CLAMP`] so that `0 log 0 = 0`.
    pub fn neg_entropy(&mut self, y: Var, scale: f64) -> Var {
        let s: f64 = self.value(y).data.iter().map(|&p| xlog2x(p)).sum();
        let rg = self.needs(&[y]);
        self.push(Tensor2::scalar(scale * s), Op::NegEntropy { y, scale }, rg)
    }

    /// `scale * Σ_ia y_ia t_ia` against a constant target.
    pub fn overlap(&mut self, y: Var, target: &Tensor2, scale: f64) -> Result<Var> {
        let yv = self.value(y);
        if yv.shape() != target.shape() {
            return Err(Error::shape(
                "overlap",
                format!("{:?} vs {:?}", yv.shape(), target.shape()),
            ));
        }
        let v = scale * dot(&yv.data, &target.data);
        let rg = self.needs(&[y]);
        Ok(self.push(
            Tensor2::scalar(v),
            Op::Overlap {
                y,
                target: target.clone(),
                scale,
            },
            rg,
        ))
    }

    /// Sum of every element.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor2::scalar(s), Op::Sum(x), rg)
    }

    /// `Σ_k w_k v_k` over same-shaped inputs.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::shape("lincomb", "no terms"));
        };
        let (r, c) = self.value(first).shape();
        let mut y = Tensor2::zeros(r, c);
        for &(w, v) in terms {
            let vv = self.value(v);
            if vv.shape() != (r, c) {
                return Err(Error::shape("lincomb", "operand shapes differ"));
            }
            y.add_scaled(vv, w);
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.1).collect();
        let rg = self.needs(&vars);
        Ok(self.push(y, Op::LinComb(terms.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("root must be 1x1, got {:?}", root_value.shape()),
            ));
        }
        let shapes: Vec<(usize, usize)> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut slots: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        slots[root.0] = Some(Tensor2::scalar(1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = slots[id].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut slots, &shapes);
            slots[id] = Some(g);
        }
        Ok(Gradients { slots, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor2, g: &Tensor2, slots: &mut [Option<Tensor2>], shapes: &[(usize, usize)]) {
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.wants(*x) {
                    let dx = slot(slots, *x, shapes[x.0]);
                    general_mat_mul(1.0, &g.view(), &wv.view(), 1.0, &mut dx.view_mut());
                }
                if self.wants(*w) {
                    let dw = slot(slots, *w, shapes[w.0]);
                    general_mat_mul(1.0, &g.view().t(), &xv.view(), 1.0, &mut dw.view_mut());
                }
                if self.wants(*b) {
                    let db = slot(slots, *b, shapes[b.0]);
                    for row in g.iter_rows() {
                        for (acc, v) in db.data.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = slot(slots, *x, shapes[x.0]);
                for ((d, &gi), &xi) in dx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                    if xi > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Tanh(x) => {
                let dx = slot(slots, *x, shapes[x.0]);
                for ((d, &gi), &yi) in dx.data.iter_mut().zip(&g.data).zip(&out.data) {
                    *d += gi * (1.0 - yi * yi);
                }
            }
            Op::SoftmaxRows(x) => {
                let dx = slot(slots, *x, shapes[x.0]);
                for r in 0..out.rows {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let inner = dot(y, gr);
                    for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *d += yi * (gi - inner);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let w = shapes[p.0].1;
                    if self.wants(*p) {
                        let dp = slot(slots, *p, shapes[p.0]);
                        for r in 0..g.rows {
                            for (d, v) in dp.row_mut(r).iter_mut().zip(&g.row(r)[at..at + w]) {
                                *d += v;
                            }
                        }
                    }
                    at += w;
                }
            }
            Op::Gather { x, index } => {
                let dx = slot(slots, *x, shapes[x.0]);
                for (r, &i) in index.iter().enumerate() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
            }
            Op::SegmentSum { x, segments } => {
                let dx = slot(slots, *x, shapes[x.0]);
                for (r, &s) in segments.iter().enumerate() {
                    for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                        *d += v;
                    }
                }
            }
            Op::SegmentMean { x, segments, inv_count } => {
                let dx = slot(slots, *x, shapes[x.0]);
                for (r, &s) in segments.iter().enumerate() {
                    let inv = inv_count[s];
                    for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                        *d += inv * v;
                    }
                }
            }
            Op::SegmentMax { x, winner } => {
                let d = shapes[x.0].1;
                let dx = slot(slots, *x, shapes[x.0]);
                for (e, &r) in winner.iter().enumerate() {
                    if r != usize::MAX {
                        dx.data[r * d + e % d] += g.data[e];
                    }
                }
            }
            Op::EdgeEnergy { y, edges, scale } => {
                let yv = self.value(*y);
                let k = scale * g.item();
                let dy = slot(slots, *y, shapes[y.0]);
                for &(i, j) in edges.iter() {
                    for c in 0..yv.cols {
                        dy.data[i * yv.cols + c] += k * yv.data[j * yv.cols + c];
                        dy.data[j * yv.cols + c] += k * yv.data[i * yv.cols + c];
                    }
                }
            }
            Op::NegEntropy { y, scale } => {
                let yv = self.value(*y);
                let k = scale * g.item();
                let dy = slot(slots, *y, shapes[y.0]);
                for (d, &p) in dy.data.iter_mut().zip(&yv.data) {
                    *d += k * dxlog2x(p);
                }
            }
            Op::Overlap { y, target, scale } => {
                let k = scale * g.item();
                let dy = slot(slots, *y, shapes[y.0]);
                dy.add_scaled(target, k);
            }
            Op::Sum(x) => {
                let k = g.item();
                let dx = slot(slots, *x, shapes[x.0]);
                dx.data.iter_mut().for_each(|d| *d += k);
            }
            Op::LinComb(terms) => {
                for &(w, v) in terms {
                    if self.wants(v) {
                        slot(slots, v, shapes[v.0]).add_scaled(g, w);
                    }
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn xlog2x(p: f64) -> f64 {
    p * p.max(LOG_CLAMP).log2()
}

fn dxlog2x(p: f64) -> f64 {
    if p > LOG_CLAMP {
        p.log2() + std::f64::consts::LOG2_E
    } else {
        LOG_CLAMP.log2()
    }
}

/// Row-wise softmax outside any tape.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut y = x.clone();
    for r in 0..y.rows {
        let row = y.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    y
}
