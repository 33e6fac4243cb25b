//! Semi-supervised training on quiet-planted graphs.
//!
//! Each step corrupts a planted coloring with Gaussian noise at a random
//! mixing weight α, runs the network, and descends the Potts loss with Adam.
//! Gradients of a batch are averaged; per-graph work runs on independent
//! tapes and RNG streams, so results do not depend on thread scheduling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffcore::{Tape, Tensor2};
use crate::error::{Error, Result};
use crate::gnn_model::{forward_recorded, init_params, ArchSpec, ModelParams};
use crate::graph_core::{degree_feature, read_graph, Graph};
use crate::potts::{record_loss, LossTerms, LossWeights, RawFeatures, SoftAssignment};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub weights: LossWeights,
    /// The overlap weight is zeroed from this epoch index on.
    pub warmup_epochs_eta2: usize,
    /// The entropy weight is zeroed from this epoch index on; `None` keeps it.
    pub warmup_epochs_eta1: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine decay of the learning rate down to this fraction of it at the
    /// last epoch; 1 keeps it constant.
    pub lr_final_fraction: f64,
    /// Rescale each batch gradient to at most this global norm.
    pub clip_grad_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    /// Fraction of the dataset used for training; the rest validates.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_min: 0.4,
            alpha_max: 0.9,
            weights: LossWeights {
                eta1: 0.5,
                eta2: 0.05,
                entropy_sign: -1.0,
                normalize_entropy: true,
            },
            warmup_epochs_eta2: 1,
            warmup_epochs_eta1: Some(1),
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_final_fraction: 1.0,
            clip_grad_norm: None,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            train_fraction: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha_min && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= alpha_min <= alpha_max <= 1, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidArgument("train_fraction must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::InvalidArgument("lr_final_fraction must lie in [0, 1]".into()));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidArgument("clip_grad_norm must be > 0".into()));
        }
        self.weights.validate()
    }

    /// Loss weights in effect during `epoch` (0-based).
    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        let mut w = self.weights;
        if epoch >= self.warmup_epochs_eta2 {
            w.eta2 = 0.0;
        }
        if self.warmup_epochs_eta1.is_some_and(|k| epoch >= k) {
            w.eta1 = 0.0;
        }
        w
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let progress = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        let floor = self.lr_final_fraction;
        self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

/// Noisy model input: `sqrt(α) ξ + sqrt(1 - α) ε` on the color channels,
/// the degree channel appended untouched.
pub fn corrupt(xi: &Tensor2, degree: &[f64], alpha: f64, seed: u64) -> Result<RawFeatures> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    let noisy = xi.map(|v| a * v + b * rng.sample::<f64, _>(StandardNormal));
    RawFeatures::from_parts(&noisy, degree)
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
    pub t: u64,
}

impl AdamState {
    pub fn new(p: &ModelParams) -> Self {
        let zeros: Vec<Tensor2> = p.tensors().iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps_adam,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor2], grads: &[Tensor2], st: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || grads.len() != st.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), st.m.len()),
        ));
    }
    for (k, g) in grads.iter().enumerate() {
        if g.shape() != params[k].shape() {
            return Err(Error::shape("adam_step", format!("tensor {k} shape differs")));
        }
        if !g.is_finite() {
            let bad = g.as_slice().iter().position(|v| !v.is_finite()).unwrap();
            return Err(Error::NonFinite(format!(
                "gradient of parameter tensor {k} at element {bad} at step {}",
                st.t + 1
            )));
        }
    }
    st.t += 1;
    let t = st.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (st.m[k].as_mut_slice(), st.v[k].as_mut_slice());
        for (((w, &g), m), v) in p.as_mut_slice().iter_mut().zip(grads[k].as_slice()).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// A planted graph prepared for training.
#[derive(Clone, Debug)]
pub struct Sample {
    pub graph: Graph,
    pub planted: SoftAssignment,
    pub degree: Vec<f64>,
}

impl Sample {
    pub fn new(graph: Graph) -> Result<Self> {
        let p = graph
            .planted()
            .ok_or_else(|| Error::InvalidArgument("training graph has no planted coloring".into()))?;
        let planted = SoftAssignment::one_hot(&p.colors, p.q)?;
        let degree = degree_feature(&graph);
        Ok(Self { graph, planted, degree })
    }
}

/// Loss terms and parameter gradients of one corrupted forward pass.
pub fn loss_and_grad(
    p: &ModelParams,
    sample: &Sample,
    alpha: f64,
    weights: &LossWeights,
    noise_seed: u64,
) -> Result<(LossTerms, Vec<Tensor2>)> {
    if sample.planted.q() != p.arch.q {
        return Err(Error::shape("train", "planted q differs from model q"));
    }
    let x = corrupt(sample.planted.tensor(), &sample.degree, alpha, noise_seed)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, true);
    let x0 = tape.constant(x.tensor().clone());
    let y = forward_recorded(&mut tape, &sample.graph, x0, p, &bound)?;
    let vars = record_loss(&mut tape, &sample.graph, y, &sample.planted, weights)?;
    let terms = LossTerms {
        total: tape.value(vars.total).item(),
        h: tape.value(vars.h).item(),
        s: tape.value(vars.s).item(),
        o: tape.value(vars.o).item(),
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!("loss diverged: {terms:?}")));
    }
    let mut grads = tape.backward(vars.total)?;
    Ok((terms, bound.0.iter().map(|&v| grads.take(v)).collect()))
}

/// Loss only, without a gradient.
pub fn evaluate_loss(
    p: &ModelParams,
    sample: &Sample,
    alpha: f64,
    weights: &LossWeights,
    noise_seed: u64,
) -> Result<LossTerms> {
    let x = corrupt(sample.planted.tensor(), &sample.degree, alpha, noise_seed)?;
    let y = crate::gnn_model::forward(&sample.graph, &x, p)?;
    crate::potts::loss(&sample.graph, &y, &sample.planted, weights)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

/// One evaluation line: `epoch,split,loss,h,S,O`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub h: f64,
    pub s: f64,
    pub o: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,h,S,O\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.split.as_str(),
                e.loss,
                e.h,
                e.s,
                e.o
            );
        }
        out
    }

    pub fn last(&self, split: Split) -> Option<&LogEntry> {
        self.entries.iter().rev().find(|e| e.split == split)
    }
}

/// Deterministic split of `n` items: shuffled indices, first part trains.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, &[0x5911])));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1.min(n), n);
    let val = idx.split_off(n_train);
    (idx, val)
}

fn mean_terms(terms: &[LossTerms]) -> LossTerms {
    let k = terms.len().max(1) as f64;
    LossTerms {
        total: terms.iter().map(|t| t.total).sum::<f64>() / k,
        h: terms.iter().map(|t| t.h).sum::<f64>() / k,
        s: terms.iter().map(|t| t.s).sum::<f64>() / k,
        o: terms.iter().map(|t| t.o).sum::<f64>() / k,
    }
}

/// Optional per-epoch observer, e.g. for progress output.
pub type EpochHook<'a> = &'a mut dyn FnMut(&[LogEntry]);

/// Train from scratch on `dataset`.
pub fn train(
    cfg: &TrainConfig,
    arch: &ArchSpec,
    dataset: &[Sample],
    hook: Option<EpochHook<'_>>,
) -> Result<(ModelParams, TrainingLog)> {
    let params = init_params(arch, rng::derive_seed(cfg.seed, &[0x1417]))?;
    train_from(cfg, params, dataset, hook)
}

/// Continue training `params` on `dataset`.
pub fn train_from(
    cfg: &TrainConfig,
    mut params: ModelParams,
    dataset: &[Sample],
    mut hook: Option<EpochHook<'_>>,
) -> Result<(ModelParams, TrainingLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.train_fraction, cfg.seed);
    let mut adam = AdamConfig::from(cfg);
    let mut state = AdamState::new(&params);
    let mut log = TrainingLog::default();
    let val_alpha = 0.5 * (cfg.alpha_min + cfg.alpha_max);

    for epoch in 0..cfg.epochs {
        let weights = cfg.weights_at(epoch);
        adam.learning_rate = cfg.learning_rate_at(epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng::seeded(rng::derive_seed(cfg.seed, &[1, epoch as u64])));

        let mut epoch_terms = Vec::with_capacity(order.len());
        let mut grad_norm_sum = 0.0;
        let mut n_batches = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(LossTerms, Vec<Tensor2>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &gi)| {
                    let stream = rng::derive_seed(cfg.seed, &[2, epoch as u64, b as u64, k as u64]);
                    let mut r = rng::seeded(stream);
                    let alpha = if cfg.alpha_max > cfg.alpha_min {
                        r.random_range(cfg.alpha_min..=cfg.alpha_max)
                    } else {
                        cfg.alpha_min
                    };
                    loss_and_grad(&params, &dataset[gi], alpha, &weights, r.random())
                })
                .collect();

            let mut sum: Option<Vec<Tensor2>> = None;
            for (res, &gi) in results.into_iter().zip(batch) {
                let (terms, grads) = res?;
                let bound = weights.lower_bound(dataset[gi].graph.n_nodes(), params.arch.q);
                if terms.total < bound - 1e-9 {
                    return Err(Error::NonFinite(format!(
                        "loss {} below its lower bound {bound} at epoch {epoch}",
                        terms.total
                    )));
                }
                epoch_terms.push(terms);
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_scaled(g, 1.0)),
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads
                .iter_mut()
                .for_each(|g| g.as_mut_slice().iter_mut().for_each(|v| *v *= inv));
            let norm = grads
                .iter()
                .flat_map(|g| g.as_slice())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            grad_norm_sum += norm;
            if let Some(clip) = cfg.clip_grad_norm.filter(|&c| norm > c) {
                let scale = clip / norm;
                grads
                    .iter_mut()
                    .for_each(|g| g.as_mut_slice().iter_mut().for_each(|v| *v *= scale));
            }
            n_batches += 1;
            let mut tensors = params.tensors_mut();
            adam_step(&mut tensors, &grads, &mut state, &adam)?;
        }

        let t = mean_terms(&epoch_terms);
        let mut entries = vec![LogEntry {
            epoch,
            split: Split::Train,
            loss: t.total,
            h: t.h,
            s: t.s,
            o: t.o,
            grad_norm: grad_norm_sum / n_batches.max(1) as f64,
        }];
        if !val_idx.is_empty() {
            let val: Vec<LossTerms> = val_idx
                .par_iter()
                .map(|&gi| {
                    let seed = rng::derive_seed(cfg.seed, &[3, gi as u64]);
                    evaluate_loss(&params, &dataset[gi], val_alpha, &weights, seed)
                })
                .collect::<Result<_>>()?;
            let t = mean_terms(&val);
            entries.push(LogEntry {
                epoch,
                split: Split::Validation,
                loss: t.total,
                h: t.h,
                s: t.s,
                o: t.o,
                grad_norm: 0.0,
            });
        }
        if let Some(h) = hook.as_mut() {
            h(&entries);
        }
        log.entries.extend(entries);
    }
    Ok((params, log))
}

/// Read a manifest listing one graph path per line. Relative paths resolve
/// against the manifest's directory; blank lines and `#` comments are
/// skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Vec<Sample>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|p| read_graph(&p).and_then(Sample::new))
        .collect()
}
