//! Potts energies and the semi-supervised loss.
//!
//! With anti-ferromagnetic couplings the Potts Hamiltonian counts
//! monochromatic edges. Its relaxation replaces the delta function by the
//! inner product of per-node color distributions, giving the normalized soft
//! energy `h` in `[0, 1]`. The training loss combines `h` with a
//! negative-entropy term `S = Σ y log2 y` and the overlap `O` with a planted
//! coloring.

use std::sync::Arc;

use crate::diffcore::{dot, xlog2x, Tape, Tensor2, Var};
use crate::error::{Error, Result};
use crate::graph_core::Graph;

/// Row-stochastic `N x q` matrix of color probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment(Tensor2);

impl SoftAssignment {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    pub fn new(t: Tensor2) -> Result<Self> {
        if t.cols() == 0 {
            return Err(Error::shape("SoftAssignment", "zero colors"));
        }
        for (i, row) in t.iter_rows().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidArgument(format!("row {i} has a negative or NaN entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self(t))
    }

    /// Wrap a tensor already known to be row-stochastic (softmax output).
    pub(crate) fn from_softmax(t: Tensor2) -> Self {
        debug_assert!(Self::new(t.clone()).is_ok());
        Self(t)
    }

    pub fn one_hot(colors: &[usize], q: usize) -> Result<Self> {
        let mut t = Tensor2::zeros(colors.len(), q);
        for (i, &c) in colors.iter().enumerate() {
            if c >= q {
                return Err(Error::IndexOutOfRange { index: c, len: q });
            }
            t.set(i, c, 1.0);
        }
        Ok(Self(t))
    }

    /// Paramagnetic state: every color with probability `1/q`.
    pub fn uniform(n: usize, q: usize) -> Self {
        Self(Tensor2::filled(n, q, 1.0 / q as f64))
    }

    pub fn n_nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn q(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor2 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor2 {
        self.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Model input: `q` unconstrained color channels followed by one degree
/// channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeatures(Tensor2);

impl RawFeatures {
    pub fn from_parts(colors: &Tensor2, degree: &[f64]) -> Result<Self> {
        if colors.rows() != degree.len() {
            return Err(Error::shape(
                "RawFeatures",
                format!("{} color rows, {} degree entries", colors.rows(), degree.len()),
            ));
        }
        let q = colors.cols();
        let mut t = Tensor2::zeros(colors.rows(), q + 1);
        for (i, &d) in degree.iter().enumerate() {
            let row = t.row_mut(i);
            row[..q].copy_from_slice(colors.row(i));
            row[q] = d;
        }
        Ok(Self(t))
    }

    pub fn from_tensor(t: Tensor2) -> Result<Self> {
        if t.cols() < 2 {
            return Err(Error::shape(
                "RawFeatures",
                "need at least one color and the degree channel",
            ));
        }
        Ok(Self(t))
    }

    pub fn q(&self) -> usize {
        self.0.cols() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn tensor(&self) -> &Tensor2 {
        &self.0
    }
}

/// Relative weights of the loss terms.
///
/// The total is `h + entropy_sign * eta1 * S - eta2 * O`, where `S` is
/// optionally divided by `N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub eta1: f64,
    pub eta2: f64,
    pub entropy_sign: f64,
    pub normalize_entropy: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta1: 0.5,
            eta2: 0.05,
            entropy_sign: 1.0,
            normalize_entropy: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        if self.entropy_sign != 1.0 && self.entropy_sign != -1.0 {
            return Err(Error::InvalidArgument("entropy_sign must be +1 or -1".into()));
        }
        Ok(())
    }

    fn entropy_scale(&self, n: usize) -> f64 {
        let norm = if self.normalize_entropy {
            1.0 / n.max(1) as f64
        } else {
            1.0
        };
        self.entropy_sign * self.eta1 * norm
    }

    /// Smallest value the total can take for `n` nodes and `q` colors.
    pub fn lower_bound(&self, n: usize, q: usize) -> f64 {
        let s_min = -(n as f64) * (q as f64).log2();
        let s_max = 0.0;
        let scale = self.entropy_scale(n);
        let entropy_min = (scale * s_min).min(scale * s_max);
        entropy_min - self.eta2
    }
}

/// The three loss terms and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub h: f64,
    pub s: f64,
    pub o: f64,
}

/// Number of monochromatic edges.
pub fn conflict_count(g: &Graph, colors: &[usize]) -> Result<usize> {
    if colors.len() != g.n_nodes() {
        return Err(Error::shape(
            "conflict_count",
            format!("{} colors for {} nodes", colors.len(), g.n_nodes()),
        ));
    }
    Ok(g.edges().iter().filter(|&&(i, j)| colors[i] == colors[j]).count())
}

/// Conflict count divided by `M` (0 on an edgeless graph).
pub fn conflict_fraction(g: &Graph, colors: &[usize]) -> Result<f64> {
    let k = conflict_count(g, colors)?;
    Ok(if g.n_edges() == 0 {
        0.0
    } else {
        k as f64 / g.n_edges() as f64
    })
}

fn check_rows(g: &Graph, y: &SoftAssignment) -> Result<()> {
    if y.n_nodes() != g.n_nodes() {
        return Err(Error::shape(
            "potts",
            format!("{} rows for {} nodes", y.n_nodes(), g.n_nodes()),
        ));
    }
    Ok(())
}

/// Soft energy `h = Σ_(i,j) <y_i, y_j> / M`.
pub fn continuous_energy(g: &Graph, y: &SoftAssignment) -> Result<f64> {
    check_rows(g, y)?;
    if g.n_edges() == 0 {
        return Ok(0.0);
    }
    let total: f64 = g.edges().iter().map(|&(i, j)| dot(y.row(i), y.row(j))).sum();
    Ok(total / g.n_edges() as f64)
}

/// `S = Σ_i Σ_a y_ia log2 y_ia`, non-positive.
pub fn entropy_term(y: &SoftAssignment) -> Result<f64> {
    let data = y.tensor().as_slice();
    if data.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidArgument("entropy of a negative probability".into()));
    }
    Ok(data.iter().map(|&p| xlog2x(p)).sum())
}

/// `O = (1/N) Σ_i <y_i, xi_i>`.
pub fn overlap_term(y: &SoftAssignment, xi: &SoftAssignment) -> Result<f64> {
    if y.tensor().shape() != xi.tensor().shape() {
        return Err(Error::shape(
            "overlap_term",
            format!("{:?} vs {:?}", y.tensor().shape(), xi.tensor().shape()),
        ));
    }
    if y.n_nodes() == 0 {
        return Ok(0.0);
    }
    Ok(dot(y.tensor().as_slice(), xi.tensor().as_slice()) / y.n_nodes() as f64)
}

pub fn loss(g: &Graph, y: &SoftAssignment, xi: &SoftAssignment, w: &LossWeights) -> Result<LossTerms> {
    let h = continuous_energy(g, y)?;
    let s = entropy_term(y)?;
    let o = overlap_term(y, xi)?;
    let total = h + w.entropy_scale(g.n_nodes()) * s - w.eta2 * o;
    Ok(LossTerms { total, h, s, o })
}

/// Tape handles of a recorded loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub h: Var,
    pub s: Var,
    pub o: Var,
}

/// Record the loss of the row-stochastic output `y` on `tape`.
pub fn record_loss(tape: &mut Tape, g: &Graph, y: Var, xi: &SoftAssignment, w: &LossWeights) -> Result<LossVars> {
    let (n, m) = (g.n_nodes(), g.n_edges());
    if tape.value(y).rows() != n {
        return Err(Error::shape("record_loss", "output rows differ from N"));
    }
    let edges: Arc<[(usize, usize)]> = g.edges_shared();
    let h = tape.edge_energy(y, edges, if m == 0 { 0.0 } else { 1.0 / m as f64 })?;
    let s = tape.neg_entropy(y, 1.0);
    let o = tape.overlap(y, xi.tensor(), 1.0 / n as f64)?;
    let total = tape.lincomb(&[(1.0, h), (w.entropy_scale(n), s), (-w.eta2, o)])?;
    Ok(LossVars { total, h, s, o })
}
