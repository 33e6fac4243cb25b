//! Simulated annealing on the Potts energy with single-spin Metropolis moves.
//!
//! One sweep is `N` proposals. Energy is the number of monochromatic edges
//! and is updated incrementally from the recolored node's neighborhood.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph_core::Graph;
use crate::potts::conflict_count;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Geometric,
    Linear,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Self::Geometric),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule {other:?}, expected geometric or linear"
            ))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Geometric => "geometric",
            Self::Linear => "linear",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaConfig {
    pub n_sweeps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub q: usize,
    /// Stop as soon as a proper coloring is found.
    pub stop_at_zero: bool,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            n_sweeps: 2000,
            beta_start: 0.5,
            beta_end: 20.0,
            schedule: Schedule::Geometric,
            seed: 0,
            q: 5,
            stop_at_zero: true,
        }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps == 0 {
            return Err(Error::InvalidArgument("n_sweeps must be >= 1".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_end >= self.beta_start) {
            return Err(Error::InvalidArgument(format!(
                "need beta_end >= beta_start > 0, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.q < 2 {
            return Err(Error::InvalidArgument("annealing needs q >= 2".into()));
        }
        Ok(())
    }

    /// Inverse temperature during sweep `k` of `n_sweeps`.
    pub fn beta(&self, k: usize) -> f64 {
        if self.n_sweeps == 1 {
            return self.beta_start;
        }
        let frac = k as f64 / (self.n_sweeps - 1) as f64;
        match self.schedule {
            Schedule::Geometric => self.beta_start * (self.beta_end / self.beta_start).powf(frac),
            Schedule::Linear => self.beta_start + (self.beta_end - self.beta_start) * frac,
        }
    }
}

/// Change in conflict count when `node` is recolored to `new_color`.
pub fn delta_energy(g: &Graph, colors: &[usize], node: usize, new_color: usize) -> i64 {
    let old = colors[node];
    if old == new_color {
        return 0;
    }
    g.neighbors(node).iter().fold(0i64, |acc, &j| {
        acc + (colors[j] == new_color) as i64 - (colors[j] == old) as i64
    })
}

/// Metropolis rule `min(1, exp(-beta * delta))`.
pub fn metropolis_accept(delta: i64, beta: f64, rng: &mut Rng) -> bool {
    delta <= 0 || rng.random::<f64>() < (-beta * delta as f64).exp()
}

/// A coloring with its conflict count kept current under single-node moves.
#[derive(Clone, Debug)]
pub struct PottsState<'g> {
    graph: &'g Graph,
    colors: Vec<usize>,
    q: usize,
    energy: usize,
}

impl<'g> PottsState<'g> {
    pub fn new(graph: &'g Graph, colors: Vec<usize>, q: usize) -> Result<Self> {
        if let Some(&c) = colors.iter().find(|&&c| c >= q) {
            return Err(Error::IndexOutOfRange { index: c, len: q });
        }
        let energy = conflict_count(graph, &colors)?;
        Ok(Self {
            graph,
            colors,
            q,
            energy,
        })
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn energy(&self) -> usize {
        self.energy
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn delta(&self, node: usize, new_color: usize) -> i64 {
        delta_energy(self.graph, &self.colors, node, new_color)
    }

    /// Recolor `node` given its precomputed `delta`.
    pub fn apply(&mut self, node: usize, new_color: usize, delta: i64) {
        debug_assert_eq!(delta, self.delta(node, new_color));
        self.colors[node] = new_color;
        self.energy = (self.energy as i64 + delta) as usize;
    }

    pub fn into_colors(self) -> Vec<usize> {
        self.colors
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    pub beta: f64,
    pub conflicts: usize,
    pub best_conflicts: usize,
}

#[derive(Clone, Debug)]
pub struct AnnealResult {
    /// Lowest-energy coloring seen.
    pub colors: Vec<usize>,
    pub conflicts: usize,
    pub sweeps_run: usize,
    pub trajectory: Vec<SweepRecord>,
}

impl AnnealResult {
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("sweep,beta,conflicts,best_conflicts\n");
        for r in &self.trajectory {
            let _ = writeln!(out, "{},{},{},{}", r.sweep, r.beta, r.conflicts, r.best_conflicts);
        }
        out
    }
}

pub fn anneal(g: &Graph, cfg: &SaConfig) -> Result<AnnealResult> {
    cfg.validate()?;
    let n = g.n_nodes();
    let mut rng = rng::seeded(cfg.seed);
    let init: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.q)).collect();
    let mut state = PottsState::new(g, init, cfg.q)?;
    let mut best = state.colors().to_vec();
    let mut best_energy = state.energy();
    let mut trajectory = Vec::with_capacity(cfg.n_sweeps);

    for sweep in 0..cfg.n_sweeps {
        if cfg.stop_at_zero && best_energy == 0 {
            break;
        }
        let beta = cfg.beta(sweep);
        for _ in 0..n {
            let node = rng.random_range(0..n);
            let shift = rng.random_range(1..cfg.q);
            let new_color = (state.colors()[node] + shift) % cfg.q;
            let delta = state.delta(node, new_color);
            if metropolis_accept(delta, beta, &mut rng) {
                state.apply(node, new_color, delta);
                if state.energy() < best_energy {
                    best_energy = state.energy();
                    best.copy_from_slice(state.colors());
                }
            }
        }
        trajectory.push(SweepRecord {
            sweep,
            beta,
            conflicts: state.energy(),
            best_conflicts: best_energy,
        });
    }
    Ok(AnnealResult {
        colors: best,
        conflicts: best_energy,
        sweeps_run: trajectory.len(),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_core::{generate_er, generate_planted};

    fn k3() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn delta_examples() {
        let g = k3();
        assert_eq!(delta_energy(&g, &[0, 0, 1], 0, 0), 0);
        assert_eq!(delta_energy(&g, &[0, 0, 1], 0, 2), -1);
        assert_eq!(delta_energy(&g, &[0, 1, 2], 0, 1), 1);
        let lonely = Graph::from_edges(3, [(0, 1)]).unwrap();
        for c in 0..4 {
            assert_eq!(delta_energy(&lonely, &[0, 0, 0], 2, c), 0);
        }
    }

    #[test]
    fn delta_matches_full_recount() {
        let g = generate_er(60, 6.0, 3).unwrap();
        let mut r = rng::seeded(9);
        for _ in 0..500 {
            let colors: Vec<usize> = (0..60).map(|_| r.random_range(0..4)).collect();
            let node = r.random_range(0..60);
            let c = r.random_range(0..4);
            let mut after = colors.clone();
            after[node] = c;
            let expect = conflict_count(&g, &after).unwrap() as i64 - conflict_count(&g, &colors).unwrap() as i64;
            assert_eq!(delta_energy(&g, &colors, node, c), expect);
        }
    }

    #[test]
    fn incremental_energy_survives_fuzz() {
        let g = generate_er(500, 8.0, 17).unwrap();
        let mut r = rng::seeded(18);
        let init = (0..500).map(|_| r.random_range(0..5)).collect();
        let mut st = PottsState::new(&g, init, 5).unwrap();
        for _ in 0..10_000 {
            let node = r.random_range(0..500);
            let c = r.random_range(0..5);
            let d = st.delta(node, c);
            st.apply(node, c, d);
            assert_eq!(st.energy(), conflict_count(&g, st.colors()).unwrap());
        }
    }

    #[test]
    fn acceptance_rate_of_uphill_move() {
        let mut r = rng::seeded(5);
        let trials = 100_000;
        let hits = (0..trials).filter(|_| metropolis_accept(1, 1.0, &mut r)).count();
        let p = (-1.0f64).exp();
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let freq = hits as f64 / trials as f64;
        assert!((freq - p).abs() < 3.0 * sigma, "{freq} vs {p}");
        assert!((0..100).all(|_| metropolis_accept(0, 1.0, &mut r) && metropolis_accept(-2, 0.1, &mut r)));
    }

    #[test]
    fn zero_temperature_never_goes_uphill() {
        let g = generate_er(200, 6.0, 2).unwrap();
        let cfg = SaConfig {
            n_sweeps: 50,
            beta_start: 1e9,
            beta_end: 1e9,
            seed: 3,
            stop_at_zero: false,
            ..Default::default()
        };
        let res = anneal(&g, &cfg).unwrap();
        assert!(res.trajectory.windows(2).all(|w| w[1].conflicts <= w[0].conflicts));
    }

    #[test]
    fn triangle_is_solved() {
        for seed in 0..10 {
            let cfg = SaConfig {
                n_sweeps: 100,
                q: 3,
                seed,
                ..Default::default()
            };
            let res = anneal(&k3(), &cfg).unwrap();
            assert_eq!(res.conflicts, 0, "seed {seed}");
            assert_eq!(conflict_count(&k3(), &res.colors).unwrap(), 0);
        }
    }

    #[test]
    fn best_seen_is_monotone_and_consistent() {
        let (g, _) = generate_planted(300, 10.0, 5, 4).unwrap();
        let cfg = SaConfig {
            n_sweeps: 200,
            seed: 1,
            stop_at_zero: false,
            ..Default::default()
        };
        let res = anneal(&g, &cfg).unwrap();
        assert_eq!(res.trajectory.len(), 200);
        assert!(res
            .trajectory
            .windows(2)
            .all(|w| w[1].best_conflicts <= w[0].best_conflicts));
        assert!(res.trajectory.iter().all(|r| r.best_conflicts <= r.conflicts));
        assert_eq!(conflict_count(&g, &res.colors).unwrap(), res.conflicts);
        assert_eq!(res.conflicts, res.trajectory.last().unwrap().best_conflicts);
        let csv = res.trajectory_csv();
        assert_eq!(csv.lines().next(), Some("sweep,beta,conflicts,best_conflicts"));
    }

    #[test]
    fn annealing_is_deterministic() {
        let (g, _) = generate_planted(100, 5.0, 5, 2).unwrap();
        let cfg = SaConfig {
            n_sweeps: 30,
            seed: 4,
            ..Default::default()
        };
        let a = anneal(&g, &cfg).unwrap();
        let b = anneal(&g, &cfg).unwrap();
        assert_eq!(a.colors, b.colors);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn schedules_hit_endpoints() {
        for schedule in [Schedule::Geometric, Schedule::Linear] {
            let cfg = SaConfig {
                n_sweeps: 11,
                beta_start: 0.5,
                beta_end: 20.0,
                schedule,
                ..Default::default()
            };
            assert!((cfg.beta(0) - 0.5).abs() < 1e-12);
            assert!((cfg.beta(10) - 20.0).abs() < 1e-12);
            assert!((1..11).all(|k| cfg.beta(k) > cfg.beta(k - 1)));
        }
        let geo = SaConfig {
            n_sweeps: 3,
            beta_start: 1.0,
            beta_end: 4.0,
            ..Default::default()
        };
        assert!((geo.beta(1) - 2.0).abs() < 1e-12);
        assert_eq!("linear".parse::<Schedule>().unwrap(), Schedule::Linear);
        assert!("cosine".parse::<Schedule>().is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = k3();
        for cfg in [
            SaConfig {
                n_sweeps: 0,
                ..Default::default()
            },
            SaConfig {
                beta_start: 0.0,
                ..Default::default()
            },
            SaConfig {
                beta_start: 2.0,
                beta_end: 1.0,
                ..Default::default()
            },
            SaConfig {
                q: 1,
                ..Default::default()
            },
        ] {
            assert!(anneal(&g, &cfg).is_err());
        }
    }
}
