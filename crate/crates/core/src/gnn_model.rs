//! Message-passing network mapping noisy color features to color
//! probabilities.
//!
//! Each of the `L` layers computes a message `φ(x_i ∥ x_j)` for every
//! directed edge `j → i`, aggregates the messages arriving at each node and
//! updates the node state with `γ(x_i ∥ agg_i)`. The readout `Γ` sees the
//! input features and every layer's output at once, and a row-wise softmax
//! turns its `q` outputs into a distribution over colors.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::diffcore::{Aggregation, Tape, Tensor2, Var};
use crate::error::{Error, Result};
use crate::graph_core::Graph;
use crate::potts::{RawFeatures, SoftAssignment};
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGC1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-MLP parameter counts of the published 5-layer, 32-dimensional model.
/// Kept for the `info` report; the widths that produce them are unknown.
pub mod reference_table {
    pub const PHI: [usize; 5] = [2673, 4455, 4455, 4455, 4455];
    pub const GAMMA: [usize; 5] = [3564, 4455, 4455, 4455, 4455];
    pub const READOUT: usize = 6968;
    pub const TOTAL: usize = 48845;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn id(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Hidden widths of the message, update and readout MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HiddenWidths {
    pub phi: usize,
    pub gamma: usize,
    pub readout: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub n_layers: usize,
    pub latent_dim: usize,
    pub q: usize,
    pub input_dim: usize,
    pub hidden: HiddenWidths,
    pub aggregation: Aggregation,
    pub activation: Activation,
    /// Append a constant channel to every message input.
    pub edge_feature: bool,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::new(5, 32, 5)
    }
}

impl ArchSpec {
    /// `n_layers` layers of width `latent_dim`, all hidden widths equal to
    /// `latent_dim`, degree channel included.
    pub fn new(n_layers: usize, latent_dim: usize, q: usize) -> Self {
        Self {
            n_layers,
            latent_dim,
            q,
            input_dim: q + 1,
            hidden: HiddenWidths {
                phi: latent_dim,
                gamma: latent_dim,
                readout: latent_dim,
            },
            aggregation: Aggregation::Sum,
            activation: Activation::Relu,
            edge_feature: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.n_layers,
            self.latent_dim,
            self.q,
            self.input_dim,
            self.hidden.phi,
            self.hidden.gamma,
            self.hidden.readout,
        ];
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "architecture has a zero dimension: {self:?}"
            )));
        }
        if self.input_dim != self.q + 1 {
            return Err(Error::InvalidArgument(format!(
                "input_dim {} must be q + 1 = {}",
                self.input_dim,
                self.q + 1
            )));
        }
        Ok(())
    }

    fn feature_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.latent_dim
        }
    }

    /// `(out, in)` of every affine map, in parameter order.
    pub fn affine_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for l in 0..self.n_layers {
            let d = self.feature_dim(l);
            let phi_in = 2 * d + usize::from(self.edge_feature);
            shapes.push((self.hidden.phi, phi_in));
            shapes.push((self.latent_dim, self.hidden.phi));
            shapes.push((self.hidden.gamma, d + self.latent_dim));
            shapes.push((self.latent_dim, self.hidden.gamma));
        }
        let readout_in = self.input_dim + self.n_layers * self.latent_dim;
        shapes.push((self.hidden.readout, readout_in));
        shapes.push((self.q, self.hidden.readout));
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    /// `[out, in]`
    pub weight: Tensor2,
    /// `[1, out]`
    pub bias: Tensor2,
}

impl Affine {
    pub fn n_params(&self) -> usize {
        self.weight.rows() * (self.weight.cols() + 1)
    }
}

/// Two affine maps with the activation in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Affine::n_params).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchSpec,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub phi: Vec<Mlp>,
    pub gamma: Vec<Mlp>,
    pub readout: Mlp,
}

/// Tape handles of every parameter tensor, in [`ModelParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct BoundParams(pub Vec<Var>);

impl ModelParams {
    fn from_affines(arch: ArchSpec, seed: u64, affines: Vec<Affine>) -> Self {
        let mut it = affines.into_iter();
        let mut take2 = || Mlp {
            layers: vec![it.next().unwrap(), it.next().unwrap()],
        };
        let mut phi = Vec::with_capacity(arch.n_layers);
        let mut gamma = Vec::with_capacity(arch.n_layers);
        for _ in 0..arch.n_layers {
            phi.push(take2());
            gamma.push(take2());
        }
        let readout = take2();
        Self {
            arch,
            seed,
            phi,
            gamma,
            readout,
        }
    }

    fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        self.phi
            .iter()
            .zip(&self.gamma)
            .flat_map(|(p, g)| [p, g])
            .chain(std::iter::once(&self.readout))
    }

    pub fn affines(&self) -> impl Iterator<Item = &Affine> {
        self.mlps().flat_map(|m| m.layers.iter())
    }

    /// Weight and bias of every affine map, in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor2> {
        self.affines().flat_map(|a| [&a.weight, &a.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = Vec::new();
        for (p, g) in self.phi.iter_mut().zip(self.gamma.iter_mut()) {
            for a in p.layers.iter_mut().chain(g.layers.iter_mut()) {
                out.push(&mut a.weight);
                out.push(&mut a.bias);
            }
        }
        for a in self.readout.layers.iter_mut() {
            out.push(&mut a.weight);
            out.push(&mut a.bias);
        }
        out
    }

    pub fn total_params(&self) -> usize {
        self.affines().map(Affine::n_params).sum()
    }

    /// Put every parameter on `tape`, as differentiable leaves when
    /// `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        BoundParams(
            self.tensors()
                .into_iter()
                .map(|t| {
                    if trainable {
                        tape.param(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        )
    }
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(arch: &ArchSpec, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = rng::seeded(seed);
    let affines = arch
        .affine_shapes()
        .into_iter()
        .map(|(out, inp)| {
            let bound = 1.0 / (inp as f64).sqrt();
            let data = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
            Affine {
                weight: Tensor2::from_vec(out, inp, data).expect("shape from arch"),
                bias: Tensor2::zeros(1, out),
            }
        })
        .collect();
    Ok(ModelParams::from_affines(arch.clone(), seed, affines))
}

/// Parameter counts grouped per MLP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamTable {
    pub phi: Vec<usize>,
    pub gamma: Vec<usize>,
    pub readout: usize,
    pub total: usize,
}

pub fn count_params(p: &ModelParams) -> ParamTable {
    let phi: Vec<usize> = p.phi.iter().map(Mlp::n_params).collect();
    let gamma: Vec<usize> = p.gamma.iter().map(Mlp::n_params).collect();
    let readout = p.readout.n_params();
    let total = phi.iter().sum::<usize>() + gamma.iter().sum::<usize>() + readout;
    ParamTable {
        phi,
        gamma,
        readout,
        total,
    }
}

/// Parameter count computed from the architecture alone.
pub fn count_params_analytic(arch: &ArchSpec) -> usize {
    arch.affine_shapes().iter().map(|&(out, inp)| out * (inp + 1)).sum()
}

impl fmt::Display for ParamTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>10}   {:<12} {:>10}",
            "Layer", "Parameters", "Layer", "Parameters"
        )?;
        for (l, (p, g)) in self.phi.iter().zip(&self.gamma).enumerate() {
            writeln!(
                f,
                "{:<12} {:>10}   {:<12} {:>10}",
                format!("phi({})", l + 1),
                p,
                format!("gamma({})", l + 1),
                g
            )?;
        }
        writeln!(f, "{:<12} {:>10}", "Gamma", self.readout)?;
        write!(f, "{:<12} {:>10}", "Total", self.total)
    }
}

/// Record a forward pass on `tape`. `x0` must be `[N, input_dim]`.
pub fn forward_recorded(tape: &mut Tape, g: &Graph, x0: Var, p: &ModelParams, bound: &BoundParams) -> Result<Var> {
    let arch = &p.arch;
    let (rows, cols) = tape.value(x0).shape();
    if rows != g.n_nodes() || cols != arch.input_dim {
        return Err(Error::shape(
            "forward",
            format!("features {rows}x{cols}, expected {}x{}", g.n_nodes(), arch.input_dim),
        ));
    }
    if bound.0.len() != 2 * arch.affine_shapes().len() {
        return Err(Error::shape(
            "forward",
            "bound parameter count differs from architecture",
        ));
    }

    let mut vars = bound.0.iter().copied();
    let mut mlp = |tape: &mut Tape, x: Var| -> Result<Var> {
        let (w1, b1, w2, b2) = (
            vars.next().unwrap(),
            vars.next().unwrap(),
            vars.next().unwrap(),
            vars.next().unwrap(),
        );
        let h = tape.affine(x, w1, b1)?;
        let h = match arch.activation {
            Activation::Relu => tape.relu(h),
            Activation::Tanh => tape.tanh(h),
        };
        tape.affine(h, w2, b2)
    };

    let receivers = g.csr_rows();
    let senders = g.csr_neighbors();
    let n_directed = receivers.len();
    let constant = arch
        .edge_feature
        .then(|| tape.constant(Tensor2::filled(n_directed, 1, 1.0)));

    let mut layers = vec![x0];
    let mut x = x0;
    for _ in 0..arch.n_layers {
        let xi = tape.gather_rows(x, receivers.clone())?;
        let xj = tape.gather_rows(x, senders.clone())?;
        let mut parts = vec![xi, xj];
        parts.extend(constant);
        let pair = tape.concat_cols(&parts)?;
        let messages = mlp(tape, pair)?;
        let agg = tape.segment_reduce(messages, receivers.clone(), g.n_nodes(), arch.aggregation)?;
        let update_in = tape.concat_cols(&[x, agg])?;
        x = mlp(tape, update_in)?;
        layers.push(x);
    }
    let all = tape.concat_cols(&layers)?;
    let logits = mlp(tape, all)?;
    Ok(tape.softmax_rows(logits))
}

/// Inference-only forward pass.
pub fn forward(g: &Graph, x0: &RawFeatures, p: &ModelParams) -> Result<SoftAssignment> {
    if x0.q() != p.arch.q {
        return Err(Error::shape(
            "forward",
            format!("features carry q = {}, model q = {}", x0.q(), p.arch.q),
        ));
    }
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, false);
    let x = tape.constant(x0.tensor().clone());
    let y = forward_recorded(&mut tape, g, x, p, &bound)?;
    let out = tape.value(y).clone();
    Ok(SoftAssignment::from_softmax(out))
}

pub fn checkpoint_bytes(p: &ModelParams) -> Vec<u8> {
    let a = &p.arch;
    let mut out = Vec::with_capacity(64 + 8 * p.total_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    for v in [
        a.n_layers,
        a.latent_dim,
        a.q,
        a.input_dim,
        3,
        a.hidden.phi,
        a.hidden.gamma,
        a.hidden.readout,
        a.aggregation.id() as usize,
        a.activation.id() as usize,
        usize::from(a.edge_feature),
    ] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&p.seed.to_le_bytes());
    let affines: Vec<&Affine> = p.affines().collect();
    put_u32(&mut out, affines.len());
    for af in affines {
        put_u32(&mut out, af.weight.rows());
        put_u32(&mut out, af.weight.cols());
        for v in af.weight.as_slice().iter().chain(af.bias.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?
        != CHECKPOINT_MAGIC
    {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_layers = r.u32()? as usize;
    let latent_dim = r.u32()? as usize;
    let q = r.u32()? as usize;
    let input_dim = r.u32()? as usize;
    let n_widths = r.u32()?;
    if n_widths != 3 {
        return Err(Error::Checkpoint(format!("expected 3 hidden widths, found {n_widths}")));
    }
    let hidden = HiddenWidths {
        phi: r.u32()? as usize,
        gamma: r.u32()? as usize,
        readout: r.u32()? as usize,
    };
    let agg_id = r.u32()?;
    let aggregation =
        Aggregation::from_id(agg_id).ok_or_else(|| Error::Checkpoint(format!("unknown aggregation id {agg_id}")))?;
    let act_id = r.u32()?;
    let activation =
        Activation::from_id(act_id).ok_or_else(|| Error::Checkpoint(format!("unknown activation id {act_id}")))?;
    let edge_feature = match r.u32()? {
        0 => false,
        1 => true,
        other => return Err(Error::Checkpoint(format!("bad edge-feature flag {other}"))),
    };
    let seed = r.u64()?;
    let arch = ArchSpec {
        n_layers,
        latent_dim,
        q,
        input_dim,
        hidden,
        aggregation,
        activation,
        edge_feature,
    };
    arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let shapes = arch.affine_shapes();
    let count = r.u32()? as usize;
    if count != shapes.len() {
        return Err(Error::Checkpoint(format!(
            "architecture needs {} affine maps, file has {count}",
            shapes.len()
        )));
    }
    let mut affines = Vec::with_capacity(count);
    for (k, &(out, inp)) in shapes.iter().enumerate() {
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        if (rows, cols) != (out, inp) {
            return Err(Error::Checkpoint(format!(
                "affine {k} is {rows}x{cols}, architecture expects {out}x{inp}"
            )));
        }
        let weight = Tensor2::from_vec(rows, cols, r.f64s(rows * cols)?)?;
        let bias = Tensor2::from_vec(1, rows, r.f64s(rows)?)?;
        affines.push(Affine { weight, bias });
    }
    if r.at != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.at)));
    }
    Ok(ModelParams::from_affines(arch, seed, affines))
}

pub fn save_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&buf)
}
