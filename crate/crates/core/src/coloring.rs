//! Noise-scheduled iterative coloring and fixed-point iteration.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gnn_model::{forward, ModelParams};
use crate::graph_core::{degree_feature, Graph};
use crate::potts::{conflict_count, continuous_energy, RawFeatures, SoftAssignment};
use crate::rng;
use crate::training::corrupt;

#[derive(Clone, Debug, PartialEq)]
pub struct ColorConfig {
    pub iterations: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub noise_enabled: bool,
    pub seed: u64,
    pub record_trajectory: bool,
}

impl Default for ColorConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            alpha_min: 0.4,
            alpha_max: 0.9,
            noise_enabled: true,
            seed: 0,
            record_trajectory: true,
        }
    }
}

impl ColorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(0.0 <= self.alpha_min && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= alpha_min <= alpha_max <= 1, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        Ok(())
    }
}

/// `T` evenly spaced values from `alpha_min` to `alpha_max`, endpoints
/// included. A single step uses `alpha_min`.
pub fn alpha_schedule(cfg: &ColorConfig) -> Vec<f64> {
    let t = cfg.iterations;
    if t <= 1 {
        return vec![cfg.alpha_min; t];
    }
    let step = (cfg.alpha_max - cfg.alpha_min) / (t - 1) as f64;
    (0..t)
        .map(|k| {
            if k == t - 1 {
                cfg.alpha_max
            } else {
                cfg.alpha_min + step * k as f64
            }
        })
        .collect()
}

/// Row-wise argmax; ties go to the lowest color.
pub fn decode(y: &SoftAssignment) -> Vec<usize> {
    y.tensor()
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (a, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    pub alpha: f64,
    pub h_soft: f64,
    pub conflicts_hard: usize,
    /// `conflicts_hard / M`, zero on an edgeless graph.
    pub conflict_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Coloring {
    pub soft: SoftAssignment,
    pub colors: Vec<usize>,
    pub conflicts: usize,
    pub trajectory: Vec<TrajectoryStep>,
}

impl Coloring {
    pub fn conflict_fraction(&self, g: &Graph) -> f64 {
        if g.n_edges() == 0 {
            0.0
        } else {
            self.conflicts as f64 / g.n_edges() as f64
        }
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("t,alpha,h_soft,conflicts_hard\n");
        for s in &self.trajectory {
            let _ = writeln!(out, "{},{},{},{}", s.t, s.alpha, s.h_soft, s.conflicts_hard);
        }
        out
    }
}

fn random_one_hot(n: usize, q: usize, seed: u64) -> Result<SoftAssignment> {
    let mut r = rng::seeded(seed);
    let colors: Vec<usize> = (0..n).map(|_| r.random_range(0..q)).collect();
    SoftAssignment::one_hot(&colors, q)
}

fn check_model(g: &Graph, p: &ModelParams) -> Result<()> {
    if p.arch.input_dim != p.arch.q + 1 {
        return Err(Error::shape(
            "color",
            format!("model input width {} is not q + 1 = {}", p.arch.input_dim, p.arch.q + 1),
        ));
    }
    if g.n_nodes() == 0 {
        return Err(Error::InvalidArgument("graph has no nodes".into()));
    }
    Ok(())
}

/// Run the noise-scheduled coloring loop from a random one-hot start.
pub fn color(g: &Graph, p: &ModelParams, cfg: &ColorConfig) -> Result<Coloring> {
    cfg.validate()?;
    check_model(g, p)?;
    let q = p.arch.q;
    let degree = degree_feature(g);
    let mut y = random_one_hot(g.n_nodes(), q, rng::derive_seed(cfg.seed, &[0]))?;
    let m = g.n_edges();
    let mut trajectory = Vec::with_capacity(if cfg.record_trajectory { cfg.iterations } else { 0 });

    for (t, &alpha) in alpha_schedule(cfg).iter().enumerate() {
        let x = if cfg.noise_enabled {
            corrupt(y.tensor(), &degree, alpha, rng::derive_seed(cfg.seed, &[1, t as u64]))?
        } else {
            RawFeatures::from_parts(y.tensor(), &degree)?
        };
        y = forward(g, &x, p)?;
        if cfg.record_trajectory {
            let conflicts = conflict_count(g, &decode(&y))?;
            trajectory.push(TrajectoryStep {
                t,
                alpha,
                h_soft: continuous_energy(g, &y)?,
                conflicts_hard: conflicts,
                conflict_fraction: if m == 0 { 0.0 } else { conflicts as f64 / m as f64 },
            });
        }
    }
    let colors = decode(&y);
    let conflicts = conflict_count(g, &colors)?;
    Ok(Coloring {
        soft: y,
        colors,
        conflicts,
        trajectory,
    })
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub y: SoftAssignment,
    pub converged: bool,
    pub iterations: usize,
    /// `h` of the returned iterate.
    pub h: f64,
}

const FIXED_POINT_STREAK: usize = 3;

/// Iterate the noiseless map `y -> f(y || degree)` from `x_init` until the
/// energy changes by less than `tol` on three consecutive steps.
pub fn find_fixed_point(
    g: &Graph,
    p: &ModelParams,
    x_init: &SoftAssignment,
    max_iter: usize,
    tol: f64,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be > 0".into()));
    }
    check_model(g, p)?;
    if x_init.q() != p.arch.q || x_init.n_nodes() != g.n_nodes() {
        return Err(Error::shape(
            "find_fixed_point",
            "initial state does not match graph and model",
        ));
    }
    let degree = degree_feature(g);
    let mut y = x_init.clone();
    let mut h = continuous_energy(g, &y)?;
    let mut streak = 0;
    for it in 1..=max_iter {
        y = forward(g, &RawFeatures::from_parts(y.tensor(), &degree)?, p)?;
        let h_next = continuous_energy(g, &y)?;
        streak = if (h_next - h).abs() < tol { streak + 1 } else { 0 };
        h = h_next;
        if streak >= FIXED_POINT_STREAK {
            return Ok(FixedPoint {
                y,
                converged: true,
                iterations: it,
                h,
            });
        }
    }
    Ok(FixedPoint {
        y,
        converged: false,
        iterations: max_iter,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor2;
    use crate::gnn_model::{init_params, ArchSpec};
    use crate::graph_core::generate_planted;

    fn cfg(iterations: usize, lo: f64, hi: f64) -> ColorConfig {
        ColorConfig {
            iterations,
            alpha_min: lo,
            alpha_max: hi,
            ..Default::default()
        }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn schedule_examples() {
        assert!(close(&alpha_schedule(&cfg(3, 0.4, 0.9)), &[0.4, 0.65, 0.9]));
        assert_eq!(alpha_schedule(&cfg(1, 0.4, 0.9)), vec![0.4]);
        assert_eq!(alpha_schedule(&cfg(4, 0.5, 0.5)), vec![0.5; 4]);
        let s = alpha_schedule(&cfg(500, 0.4, 0.9));
        assert_eq!((s[0], s[499]), (0.4, 0.9));
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn decode_examples() {
        let y = SoftAssignment::one_hot(&[2, 0, 1], 3).unwrap();
        assert_eq!(decode(&y), vec![2, 0, 1]);
        assert_eq!(decode(&SoftAssignment::uniform(2, 4)), vec![0, 0]);
        let tied = SoftAssignment::new(Tensor2::from_rows(&[vec![0.1, 0.45, 0.45]]).unwrap()).unwrap();
        assert_eq!(decode(&tied), vec![1]);
    }

    #[test]
    fn decode_is_stable_within_margin() {
        // Row 0 leads by 0.4 at color 1; row 1 leads by 0.2 at color 2.
        let base = Tensor2::from_rows(&[vec![0.2, 0.6, 0.2], vec![0.1, 0.35, 0.55]]).unwrap();
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let mut t = base.clone();
            for v in t.as_mut_slice() {
                *v += r.random_range(-0.0999..0.0999);
            }
            let sum: Vec<f64> = t.iter_rows().map(|row| row.iter().sum()).collect();
            for i in 0..2 {
                t.row_mut(i).iter_mut().for_each(|v| *v = v.max(0.0) / sum[i]);
            }
            let y = SoftAssignment::new(crate::diffcore::softmax_rows(&t.map(f64::ln))).unwrap();
            assert_eq!(decode(&y), vec![1, 2]);
        }
    }

    fn setup(seed: u64) -> (Graph, ModelParams) {
        let (g, _) = generate_planted(40, 4.0, 3, seed).unwrap();
        (g, init_params(&ArchSpec::new(2, 6, 3), seed).unwrap())
    }

    #[test]
    fn trajectory_fraction_matches_recount() {
        let (g, p) = setup(1);
        let c = color(&g, &p, &cfg(20, 0.4, 0.9)).unwrap();
        assert_eq!(c.trajectory.len(), 20);
        for s in &c.trajectory {
            assert_eq!(s.conflict_fraction, s.conflicts_hard as f64 / g.n_edges() as f64);
        }
        assert_eq!(c.trajectory.last().unwrap().conflicts_hard, c.conflicts);
        assert_eq!(conflict_count(&g, &c.colors).unwrap(), c.conflicts);
        let csv = c.trajectory_csv();
        assert_eq!(csv.lines().next(), Some("t,alpha,h_soft,conflicts_hard"));
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn coloring_is_deterministic() {
        let (g, p) = setup(2);
        let a = color(&g, &p, &cfg(15, 0.4, 0.9)).unwrap();
        let b = color(&g, &p, &cfg(15, 0.4, 0.9)).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.colors, b.colors);
    }

    #[test]
    fn single_step_is_one_forward_pass() {
        let (g, p) = setup(3);
        let c = ColorConfig {
            seed: 11,
            ..cfg(1, 0.4, 0.9)
        };
        let got = color(&g, &p, &c).unwrap();
        let y0 = random_one_hot(g.n_nodes(), 3, rng::derive_seed(11, &[0])).unwrap();
        let x = corrupt(y0.tensor(), &degree_feature(&g), 0.4, rng::derive_seed(11, &[1, 0])).unwrap();
        let y = forward(&g, &x, &p).unwrap();
        assert_eq!(got.soft, y);
        assert_eq!(got.colors, decode(&y));
    }

    #[test]
    fn model_q_mismatch_is_rejected() {
        let (g, _) = setup(4);
        let mut p = init_params(&ArchSpec::new(1, 4, 3), 0).unwrap();
        p.arch.input_dim = 7;
        assert!(color(&g, &p, &cfg(2, 0.4, 0.9)).is_err());
        assert!(color(&g, &init_params(&ArchSpec::new(1, 4, 3), 0).unwrap(), &cfg(0, 0.4, 0.9)).is_err());
    }

    #[test]
    fn fixed_point_with_infinite_tol_stops_after_three() {
        let (g, p) = setup(5);
        let y0 = SoftAssignment::uniform(g.n_nodes(), 3);
        let fp = find_fixed_point(&g, &p, &y0, 100, f64::INFINITY).unwrap();
        assert!(fp.converged);
        assert_eq!(fp.iterations, 3);
        assert!(find_fixed_point(&g, &p, &y0, 10, 0.0).is_err());
    }

    #[test]
    fn fixed_point_satisfies_stopping_rule() {
        let (g, p) = setup(6);
        let y0 = random_one_hot(g.n_nodes(), 3, 6).unwrap();
        let tol = 1e-6;
        let fp = find_fixed_point(&g, &p, &y0, 500, tol).unwrap();
        assert!(fp.converged, "no convergence in 500 steps");
        let degree = degree_feature(&g);
        let next = forward(&g, &RawFeatures::from_parts(fp.y.tensor(), &degree).unwrap(), &p).unwrap();
        assert!((continuous_energy(&g, &next).unwrap() - fp.h).abs() < tol);
    }

    #[test]
    fn noiseless_run_from_fixed_point_keeps_energy() {
        let (g, p) = setup(7);
        let tol = 1e-9;
        let fp = find_fixed_point(&g, &p, &random_one_hot(g.n_nodes(), 3, 1).unwrap(), 2000, tol).unwrap();
        assert!(fp.converged);
        let degree = degree_feature(&g);
        let mut y = fp.y.clone();
        for _ in 0..5 {
            y = forward(&g, &RawFeatures::from_parts(y.tensor(), &degree).unwrap(), &p).unwrap();
            assert!((continuous_energy(&g, &y).unwrap() - fp.h).abs() < 10.0 * tol);
        }
    }

    #[test]
    fn untrained_model_fixed_points_are_common() {
        let mut hits = 0;
        for seed in 0..10 {
            let (g, p) = setup(100 + seed);
            let y0 = random_one_hot(g.n_nodes(), 3, seed).unwrap();
            hits += find_fixed_point(&g, &p, &y0, 200, 1e-6).unwrap().converged as usize;
        }
        eprintln!("untrained fixed points within 200 steps: {hits}/10");
    }
}
