//! Experiment harness: iteration sweeps, power-law fits, noise studies,
//! throughput tables and SVG plots.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;

use crate::annealing::{anneal, SaConfig};
use crate::coloring::{color, find_fixed_point, ColorConfig};
use crate::error::{Error, Result};
use crate::gnn_model::{forward, ModelParams};
use crate::graph_core::{degree_feature, generate_er, generate_planted, Graph};
use crate::potts::{conflict_fraction, continuous_energy, overlap_term, SoftAssignment};
use crate::rng;
use crate::training::corrupt;

/// Clustering threshold for planted 5-colorings at this model's scale.
pub const C_D: f64 = 12.837;
/// Connectivity range of the reference training set.
pub const TRAINING_RANGE: (f64, f64) = (12.5, 15.0);
/// Connectivities of the reference scaling study.
pub const REFERENCE_CONNECTIVITIES: [f64; 10] = [11.0, 11.5, 12.0, 12.5, 13.0, 13.5, 14.0, 14.5, 15.0, 15.5];

/// `100 * 2^k` for `k = 0..=10`.
pub fn default_iteration_grid() -> Vec<usize> {
    (0..=10).map(|k| 100 << k).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Gnn,
    Sa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GraphKind {
    Planted,
    Random,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidArgument(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

text_enum!(Method, "method", Method::Gnn => "gnn", Method::Sa => "sa");
text_enum!(GraphKind, "graph kind", GraphKind::Planted => "planted", GraphKind::Random => "random");

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub kind: GraphKind,
    pub n: usize,
    pub c: f64,
    pub q: usize,
    /// Coloring steps for the network, sweeps for annealing.
    pub iterations: usize,
    pub seed: u64,
    pub conflict_fraction: f64,
    pub wall_seconds: f64,
}

pub const RUN_RECORD_HEADER: [&str; 9] = [
    "method",
    "kind",
    "n",
    "c",
    "q",
    "iterations",
    "seed",
    "conflict_fraction",
    "wall_seconds",
];

pub fn write_records<W: std::io::Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.kind.to_string(),
            r.n.to_string(),
            r.c.to_string(),
            r.q.to_string(),
            r.iterations.to_string(),
            r.seed.to_string(),
            r.conflict_fraction.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_records(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: u64, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg: format!("bad {} value {raw:?}", RUN_RECORD_HEADER.get(i).unwrap_or(&"field")),
    })
}

pub fn read_records<R: Read>(input: R, path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RUN_RECORD_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header {}", RUN_RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let method: String = field(&rec, 0, line, path)?;
        let kind: String = field(&rec, 1, line, path)?;
        out.push(RunRecord {
            method: method.parse()?,
            kind: kind.parse()?,
            n: field(&rec, 2, line, path)?,
            c: field(&rec, 3, line, path)?,
            q: field(&rec, 4, line, path)?,
            iterations: field(&rec, 5, line, path)?,
            seed: field(&rec, 6, line, path)?,
            conflict_fraction: field(&rec, 7, line, path)?,
            wall_seconds: field(&rec, 8, line, path)?,
        });
    }
    Ok(out)
}

pub fn read_records_file(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(f, path)
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub kinds: Vec<GraphKind>,
    pub n_values: Vec<usize>,
    pub c_values: Vec<f64>,
    pub iterations: Vec<usize>,
    pub graphs_per_point: usize,
    pub q: usize,
    pub seed: u64,
    pub workers: usize,
    pub color: ColorConfig,
    pub anneal: SaConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            methods: vec![Method::Gnn, Method::Sa],
            kinds: vec![GraphKind::Planted],
            n_values: vec![1000],
            c_values: REFERENCE_CONNECTIVITIES.to_vec(),
            iterations: default_iteration_grid(),
            graphs_per_point: 10,
            q: 5,
            seed: 0,
            workers: 1,
            color: ColorConfig {
                record_trajectory: false,
                ..Default::default()
            },
            anneal: SaConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Job {
    method: Method,
    kind: GraphKind,
    n: usize,
    c: f64,
    iterations: usize,
    graph_index: usize,
}

/// Seed of the `k`-th graph of a sweep cell. Methods and iteration counts
/// share graphs so their results are paired.
pub fn sweep_graph_seed(seed: u64, kind: GraphKind, n: usize, c: f64, k: usize) -> u64 {
    rng::derive_seed(seed, &[kind as u64, n as u64, c.to_bits(), k as u64])
}

fn sweep_graph(spec: &SweepSpec, kind: GraphKind, n: usize, c: f64, k: usize) -> Result<Graph> {
    let seed = sweep_graph_seed(spec.seed, kind, n, c, k);
    match kind {
        GraphKind::Planted => Ok(generate_planted(n, c, spec.q, seed)?.0),
        GraphKind::Random => generate_er(n, c, seed),
    }
}

/// Run every `(method, kind, n, c, iterations)` cell on
/// `graphs_per_point` graphs. Records come back in grid order.
pub fn sweep(spec: &SweepSpec, model: Option<&ModelParams>) -> Result<Vec<RunRecord>> {
    let grids = [
        spec.methods.is_empty(),
        spec.kinds.is_empty(),
        spec.n_values.is_empty(),
        spec.c_values.is_empty(),
        spec.iterations.is_empty(),
    ];
    if grids.iter().any(|&e| e) || spec.graphs_per_point == 0 {
        return Err(Error::InvalidArgument("every sweep grid must be nonempty".into()));
    }
    if spec.iterations.contains(&0) {
        return Err(Error::InvalidArgument("iteration counts must be >= 1".into()));
    }
    if spec.methods.contains(&Method::Gnn) {
        match model {
            None => return Err(Error::InvalidArgument("gnn sweeps need a model checkpoint".into())),
            Some(p) if p.arch.q != spec.q => {
                return Err(Error::shape(
                    "sweep",
                    format!("model q {} but sweep q {}", p.arch.q, spec.q),
                ))
            }
            _ => {}
        }
    }

    let mut jobs = Vec::new();
    for &method in &spec.methods {
        for &kind in &spec.kinds {
            for &n in &spec.n_values {
                for &c in &spec.c_values {
                    for &iterations in &spec.iterations {
                        for graph_index in 0..spec.graphs_per_point {
                            jobs.push(Job {
                                method,
                                kind,
                                n,
                                c,
                                iterations,
                                graph_index,
                            });
                        }
                    }
                }
            }
        }
    }

    let run = |job: &Job| -> Result<RunRecord> {
        let g = sweep_graph(spec, job.kind, job.n, job.c, job.graph_index)?;
        let seed = rng::derive_seed(spec.seed, &[0xC0, job.graph_index as u64, job.iterations as u64]);
        let start = Instant::now();
        let colors = match job.method {
            Method::Gnn => {
                let cfg = ColorConfig {
                    iterations: job.iterations,
                    seed,
                    record_trajectory: false,
                    ..spec.color.clone()
                };
                color(&g, model.expect("checked above"), &cfg)?.colors
            }
            Method::Sa => {
                let cfg = SaConfig {
                    n_sweeps: job.iterations,
                    q: spec.q,
                    seed,
                    ..spec.anneal.clone()
                };
                anneal(&g, &cfg)?.colors
            }
        };
        let wall_seconds = start.elapsed().as_secs_f64();
        Ok(RunRecord {
            method: job.method,
            kind: job.kind,
            n: job.n,
            c: job.c,
            q: spec.q,
            iterations: job.iterations,
            seed,
            conflict_fraction: conflict_fraction(&g, &colors)?,
            wall_seconds,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

/// Mean and sample standard deviation of one sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatePoint {
    pub method: Method,
    pub kind: GraphKind,
    pub n: usize,
    pub c: f64,
    pub iterations: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n - 1) standard deviation; zero spread for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

type CellKey = (Method, GraphKind, usize, u64, usize);

/// Group records over graphs, sorted by method, kind, n, c and iterations.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregatePoint> {
    let mut cells: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        // Non-negative floats order like their bit patterns.
        cells
            .entry((r.method, r.kind, r.n, r.c.to_bits(), r.iterations))
            .or_default()
            .push(r.conflict_fraction);
    }
    cells
        .into_iter()
        .map(|((method, kind, n, c, iterations), v)| {
            let (mean, std) = mean_std(&v);
            AggregatePoint {
                method,
                kind,
                n,
                c: f64::from_bits(c),
                iterations,
                count: v.len(),
                mean,
                std,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_err: f64,
    pub b_err: f64,
    pub c_err: f64,
    /// Sum of squared residuals.
    pub residual: f64,
    pub converged: bool,
    /// The power-law term vanished, so `B` is not identifiable.
    pub degenerate: bool,
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x.powf(-self.b) + self.c
    }
}

/// Residual weighting of the least-squares objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// Plain sum of squared residuals.
    Uniform,
    /// Residuals divided by the observed value; suited to noise that scales
    /// with the signal. Needs nonzero observations.
    Relative,
}

text_enum!(Weighting, "weighting", Weighting::Uniform => "uniform", Weighting::Relative => "relative");

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub grid_points: usize,
    pub b_range: (f64, f64),
    pub max_iter: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Uniform,
            grid_points: 200,
            b_range: (0.01, 3.0),
            max_iter: 200,
            bootstrap: 200,
            seed: 0,
        }
    }
}

/// Weighted least-squares `(A, C)` for fixed `B`, and the weighted
/// residual sum of squares.
fn linear_ac(x: &[f64], y: &[f64], w: &[f64], b: f64) -> Option<(f64, f64, f64)> {
    let (mut sw, mut su, mut sy, mut suu, mut suy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let u = xi.powf(-b);
        sw += wi;
        su += wi * u;
        sy += wi * yi;
        suu += wi * u * u;
        suy += wi * u * yi;
    }
    let det = sw * suu - su * su;
    if !(det.abs() > 1e-300) || !det.is_finite() {
        return None;
    }
    let a = (sw * suy - su * sy) / det;
    let c = (sy - a * su) / sw;
    Some((a, c, sse(x, y, w, a, b, c)))
}

fn sse(x: &[f64], y: &[f64], w: &[f64], a: f64, b: f64, c: f64) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| wi * (a * xi.powf(-b) + c - yi).powi(2))
        .sum()
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if !(d.abs() > 0.0) || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for row in 0..3 {
            mk[row][k] = r[row];
        }
        *o = det(&mk) / d;
    }
    Some(out)
}

/// Grid search over `B` followed by damped Gauss-Newton on `(A, B, C)`.
fn fit_point(x: &[f64], y: &[f64], w: &[f64], opts: &FitOptions) -> (f64, f64, f64, f64, bool) {
    let (lo, hi) = opts.b_range;
    let steps = opts.grid_points.max(2);
    let mut best = (f64::INFINITY, 0.0, lo, 0.0);
    for k in 0..steps {
        let b = lo * (hi / lo).powf(k as f64 / (steps - 1) as f64);
        if let Some((a, c, s)) = linear_ac(x, y, w, b) {
            if s < best.0 {
                best = (s, a, b, c);
            }
        }
    }
    let (mut s, mut a, mut b, mut c) = best;
    if !s.is_finite() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN, false);
    }
    let mut lambda = 1e-6;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
            let u = xi.powf(-b);
            let r = a * u + c - yi;
            let j = [u, -a * xi.ln() * u, 1.0];
            for p in 0..3 {
                jtr[p] += wi * j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += wi * j[p] * j[q];
                }
            }
        }
        let mut stepped = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for (p, row) in damped.iter_mut().enumerate() {
                row[p] += lambda * jtj[p][p].max(1e-300);
            }
            let Some(d) = solve3(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let (na, nb, nc) = (a - d[0], b - d[1], c - d[2]);
            let ns = sse(x, y, w, na, nb, nc);
            if ns.is_finite() && ns <= s {
                let small = d[0].abs() <= 1e-12 * (a.abs() + 1e-12)
                    && d[1].abs() <= 1e-12 * (b.abs() + 1e-12)
                    && d[2].abs() <= 1e-12 * (c.abs() + 1e-12);
                let flat = s - ns <= 1e-15 * s.max(1e-300);
                (a, b, c, s) = (na, nb, nc, ns);
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                converged = small || flat;
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // No descent direction left: at a minimum up to rounding.
            converged = true;
        }
        if converged {
            break;
        }
    }
    (a, b, c, s, converged)
}

/// Fit `y = A x^-B + C` by least squares, with residual-bootstrap errors.
pub fn fit_power_law(points: &[(f64, f64)], opts: &FitOptions) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", points.len())));
    }
    if points
        .iter()
        .any(|&(x, y)| !(x > 0.0) || !x.is_finite() || !y.is_finite())
    {
        return Err(Error::Fit("x must be positive and all values finite".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Fit("all x values are equal".into()));
    }
    let w: Vec<f64> = match opts.weighting {
        Weighting::Uniform => vec![1.0; y.len()],
        Weighting::Relative => {
            if y.contains(&0.0) {
                return Err(Error::Fit("relative weighting needs nonzero observations".into()));
            }
            y.iter().map(|v| 1.0 / (v * v)).collect()
        }
    };

    let (a, b, c, residual, mut converged) = fit_point(&x, &y, &w, opts);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let amplitude = x.iter().map(|&v| (a * v.powf(-b)).abs()).fold(0.0, f64::max);
    let degenerate = !(amplitude > 1e-9 * scale);
    if degenerate || !(b >= 0.0) {
        converged = false;
    }

    let fitted: Vec<f64> = x.iter().map(|&v| a * v.powf(-b) + c).collect();
    // Standardized residuals, so weighted fits resample exchangeable errors.
    let resid: Vec<f64> = y
        .iter()
        .zip(&fitted)
        .zip(&w)
        .map(|((o, f), wi)| (o - f) * wi.sqrt())
        .collect();
    let (mut a_err, mut b_err, mut c_err) = (0.0, 0.0, 0.0);
    if opts.bootstrap >= 2 && !degenerate {
        let mut r = rng::seeded(opts.seed);
        let boot_opts = FitOptions {
            bootstrap: 0,
            ..opts.clone()
        };
        let mut samples = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..opts.bootstrap {
            let yb: Vec<f64> = fitted
                .iter()
                .zip(&w)
                .map(|(f, wi)| f + resid[r.random_range(0..resid.len())] / wi.sqrt())
                .collect();
            let (ba, bb, bc, _, _) = fit_point(&x, &yb, &w, &boot_opts);
            if ba.is_finite() && bb.is_finite() && bc.is_finite() {
                samples.0.push(ba);
                samples.1.push(bb);
                samples.2.push(bc);
            }
        }
        a_err = mean_std(&samples.0).1;
        b_err = mean_std(&samples.1).1;
        c_err = mean_std(&samples.2).1;
    }
    Ok(FitResult {
        a,
        b,
        c,
        a_err,
        b_err,
        c_err,
        residual,
        converged,
        degenerate,
    })
}

pub const FIT_HEADER: [&str; 9] = ["c", "A", "A_err", "B", "B_err", "C", "C_err", "residual", "converged"];

pub fn fits_to_csv(fits: &[(f64, FitResult)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FIT_HEADER).expect("in-memory write");
    for (conn, f) in fits {
        w.write_record([
            conn.to_string(),
            f.a.to_string(),
            f.a_err.to_string(),
            f.b.to_string(),
            f.b_err.to_string(),
            f.c.to_string(),
            f.c_err.to_string(),
            f.residual.to_string(),
            f.converged.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn fits_from_csv(text: &str) -> Result<Vec<(f64, FitResult)>> {
    let path = Path::new("<fit csv>");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    if rdr.headers()?.iter().collect::<Vec<_>>() != FIT_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header {}", FIT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) as usize;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                msg: format!("bad {} value", FIT_HEADER[i]),
            })
        };
        let converged: bool = rec.get(8).unwrap_or("").parse().map_err(|_| Error::Parse {
            path: path.into(),
            line,
            msg: "bad converged value".into(),
        })?;
        let a = num(1)?;
        out.push((
            num(0)?,
            FitResult {
                a,
                a_err: num(2)?,
                b: num(3)?,
                b_err: num(4)?,
                c: num(5)?,
                c_err: num(6)?,
                residual: num(7)?,
                converged,
                degenerate: a == 0.0,
            },
        ));
    }
    Ok(out)
}

/// Fit every `(method, kind, n, c)` curve of aggregated sweep data.
pub fn fit_sweep(points: &[AggregatePoint], opts: &FitOptions) -> Vec<(AggregatePoint, Result<FitResult>)> {
    let mut curves: BTreeMap<(Method, GraphKind, usize, u64), Vec<&AggregatePoint>> = BTreeMap::new();
    for p in points {
        curves
            .entry((p.method, p.kind, p.n, p.c.to_bits()))
            .or_default()
            .push(p);
    }
    curves
        .into_values()
        .map(|curve| {
            let xy: Vec<(f64, f64)> = curve.iter().map(|p| (p.iterations as f64, p.mean)).collect();
            (curve[0].clone(), fit_power_law(&xy, opts))
        })
        .collect()
}

/// Per-`alpha` statistics of the denoising map around a planted solution and
/// around a fixed point.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRow {
    pub alpha: f64,
    pub dh_planted_mean: f64,
    pub dh_planted_std: f64,
    pub dh_fp_mean: f64,
    pub dh_fp_std: f64,
    pub overlap_planted_mean: f64,
    pub overlap_planted_std: f64,
    pub overlap_fp_mean: f64,
    pub overlap_fp_std: f64,
    pub d_overlap_mean: f64,
    pub d_overlap_std: f64,
}

#[derive(Clone, Debug)]
pub struct NoiseStudy {
    pub rows: Vec<NoiseRow>,
    pub fixed_point_h: f64,
    pub fixed_point_converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStudyConfig {
    pub alphas: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub fp_max_iter: usize,
    pub fp_tol: f64,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            alphas: (0..=10).map(|k| k as f64 / 10.0).collect(),
            samples: 10,
            seed: 0,
            fp_max_iter: 500,
            fp_tol: 1e-6,
        }
    }
}

/// Apply the model once to a corrupted copy of `x`.
fn denoise(
    g: &Graph,
    p: &ModelParams,
    x: &SoftAssignment,
    deg: &[f64],
    alpha: f64,
    seed: u64,
) -> Result<SoftAssignment> {
    forward(g, &corrupt(x.tensor(), deg, alpha, seed)?, p)
}

pub fn noise_study(g: &Graph, p: &ModelParams, cfg: &NoiseStudyConfig) -> Result<NoiseStudy> {
    let planted = g
        .planted()
        .ok_or_else(|| Error::InvalidArgument("noise study needs a planted coloring".into()))?;
    if planted.q != p.arch.q {
        return Err(Error::shape("noise_study", "planted q differs from model q"));
    }
    if cfg.samples == 0 || cfg.alphas.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample and one alpha".into()));
    }
    let xi = SoftAssignment::one_hot(&planted.colors, planted.q)?;
    let deg = degree_feature(g);
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, &[0xF9]));
    let start_colors: Vec<usize> = (0..g.n_nodes()).map(|_| r.random_range(0..planted.q)).collect();
    let start = SoftAssignment::one_hot(&start_colors, planted.q)?;
    let fp = find_fixed_point(g, p, &start, cfg.fp_max_iter, cfg.fp_tol)?;
    let h_xi = continuous_energy(g, &xi)?;
    let h_fp = fp.h;

    let mut rows = Vec::with_capacity(cfg.alphas.len());
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let mut cols: [Vec<f64>; 5] = Default::default();
        for s in 0..cfg.samples {
            let seed = rng::derive_seed(cfg.seed, &[ai as u64, s as u64]);
            let xi_t = denoise(g, p, &xi, &deg, alpha, rng::derive_seed(seed, &[0]))?;
            let fp_t = denoise(g, p, &fp.y, &deg, alpha, rng::derive_seed(seed, &[1]))?;
            let o_xi = overlap_term(&xi_t, &xi)?;
            let o_fp = overlap_term(&fp_t, &fp.y)?;
            cols[0].push(continuous_energy(g, &xi_t)? - h_xi);
            cols[1].push(continuous_energy(g, &fp_t)? - h_fp);
            cols[2].push(o_xi);
            cols[3].push(o_fp);
            cols[4].push(o_fp - o_xi);
        }
        let st: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
        rows.push(NoiseRow {
            alpha,
            dh_planted_mean: st[0].0,
            dh_planted_std: st[0].1,
            dh_fp_mean: st[1].0,
            dh_fp_std: st[1].1,
            overlap_planted_mean: st[2].0,
            overlap_planted_std: st[2].1,
            overlap_fp_mean: st[3].0,
            overlap_fp_std: st[3].1,
            d_overlap_mean: st[4].0,
            d_overlap_std: st[4].1,
        });
    }
    Ok(NoiseStudy {
        rows,
        fixed_point_h: h_fp,
        fixed_point_converged: fp.converged,
    })
}

pub const NOISE_HEADER: &str = "alpha,dh_planted_mean,dh_planted_std,dh_fp_mean,dh_fp_std,\
overlap_planted_mean,overlap_planted_std,overlap_fp_mean,overlap_fp_std,d_overlap_mean,d_overlap_std";

pub fn noise_rows_to_csv(rows: &[NoiseRow]) -> String {
    let mut out = format!("{NOISE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.alpha,
            r.dh_planted_mean,
            r.dh_planted_std,
            r.dh_fp_mean,
            r.dh_fp_std,
            r.overlap_planted_mean,
            r.overlap_planted_std,
            r.overlap_fp_mean,
            r.overlap_fp_std,
            r.d_overlap_mean,
            r.d_overlap_std
        );
    }
    out
}

/// Iterations per second measured on reference hardware, indexed like
/// [`REFERENCE_THROUGHPUT_NODES`] x [`REFERENCE_THROUGHPUT_CONNECTIVITIES`].
/// Hardware dependent; kept for comparison only.
pub const REFERENCE_THROUGHPUT_GNN: [[f64; 4]; 5] = [
    [173.0, 231.0, 229.0, 227.0],
    [211.0, 217.0, 219.0, 218.0],
    [172.0, 212.0, 215.0, 185.0],
    [132.0, 120.0, 117.0, 104.0],
    [37.0, 33.0, 32.0, 28.0],
];
/// Annealing sweeps per second at 10k nodes on the same reference setup.
pub const REFERENCE_THROUGHPUT_SA_10K: [f64; 4] = [469.0, 441.0, 429.0, 384.0];
pub const REFERENCE_THROUGHPUT_NODES: [usize; 5] = [1_000, 3_000, 10_000, 30_000, 100_000];
pub const REFERENCE_THROUGHPUT_CONNECTIVITIES: [f64; 4] = [11.5, 13.0, 13.5, 15.5];

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputRow {
    pub n: usize,
    pub c: f64,
    pub method: Method,
    pub iterations_per_second: f64,
    pub runs: usize,
}

/// Mean iterations per second per `(n, c, method)`. Records without a
/// positive wall time are skipped; cells left empty are omitted.
pub fn throughput_report(records: &[RunRecord]) -> Vec<ThroughputRow> {
    let mut cells: BTreeMap<(usize, u64, Method), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.wall_seconds > 0.0) {
        cells
            .entry((r.n, r.c.to_bits(), r.method))
            .or_default()
            .push(r.iterations as f64 / r.wall_seconds);
    }
    cells
        .into_iter()
        .map(|((n, c, method), v)| ThroughputRow {
            n,
            c: f64::from_bits(c),
            method,
            iterations_per_second: v.iter().sum::<f64>() / v.len() as f64,
            runs: v.len(),
        })
        .collect()
}

pub fn throughput_to_csv(rows: &[ThroughputRow]) -> String {
    let mut out = String::from("n,c,method,iterations_per_second,runs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{}",
            r.n, r.c, r.method, r.iterations_per_second, r.runs
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Conflict fraction against iterations on a log axis, ±1σ bars.
    Scaling,
    /// A fit parameter against connectivity, with the clustering threshold
    /// and the training range marked.
    FitParams,
    /// A noise-study statistic against α, ±2σ bars.
    Noise,
}

text_enum!(PlotKind, "plot kind", PlotKind::Scaling => "scaling", PlotKind::FitParams => "fitparams", PlotKind::Noise => "noise");

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, mean, std)` triples.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub y_label: Option<String>,
    /// Extra labelled vertical lines, e.g. other phase thresholds.
    pub markers: Vec<(String, f64)>,
}

pub const PLOT_WIDTH: f64 = 720.0;
pub const PLOT_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Data-to-pixel mapping of a plot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axes {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub log_x: bool,
}

impl Axes {
    pub fn px(&self, x: f64) -> f64 {
        let (lo, hi, v) = if self.log_x {
            (self.x_range.0.log10(), self.x_range.1.log10(), x.log10())
        } else {
            (self.x_range.0, self.x_range.1, x)
        };
        MARGIN_LEFT + (v - lo) / (hi - lo) * (PLOT_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        PLOT_HEIGHT - MARGIN_BOTTOM - (y - lo) / (hi - lo) * (PLOT_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Axes that fit every point, error bar and reference line of a plot.
pub fn plot_axes(series: &[Series], kind: PlotKind, opts: &PlotOptions) -> Result<Axes> {
    let pts: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    if pts
        .iter()
        .any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite()))
    {
        return Err(Error::InvalidArgument("plot data must be finite".into()));
    }
    let log_x = kind == PlotKind::Scaling;
    if log_x && pts.iter().any(|p| p.0 <= 0.0) {
        return Err(Error::InvalidArgument("log axis needs positive x".into()));
    }
    let k = sigma_factor(kind);
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    if kind == PlotKind::FitParams {
        xs.extend([C_D, TRAINING_RANGE.0, TRAINING_RANGE.1]);
    }
    xs.extend(opts.markers.iter().map(|m| m.1));
    let x_lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_lo = pts.iter().map(|p| p.1 - k * p.2).fold(f64::INFINITY, f64::min);
    let y_hi = pts.iter().map(|p| p.1 + k * p.2).fold(f64::NEG_INFINITY, f64::max);
    let x_range = if log_x {
        let (lo, hi) = (x_lo.log10(), x_hi.log10());
        let (lo, hi) = if hi > lo {
            (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
        } else {
            (lo - 0.5, hi + 0.5)
        };
        (10f64.powf(lo), 10f64.powf(hi))
    } else {
        padded(x_lo, x_hi)
    };
    Ok(Axes {
        x_range,
        y_range: padded(y_lo, y_hi),
        log_x,
    })
}

/// Error bars span this many standard deviations.
pub fn sigma_factor(kind: PlotKind) -> f64 {
    if kind == PlotKind::Noise {
        2.0
    } else {
        1.0
    }
}

fn ticks(axes: &Axes, x_axis: bool) -> Vec<f64> {
    if x_axis && axes.log_x {
        let (lo, hi) = (
            axes.x_range.0.log10().ceil() as i32,
            axes.x_range.1.log10().floor() as i32,
        );
        return (lo..=hi).map(|e| 10f64.powi(e)).collect();
    }
    let (lo, hi) = if x_axis { axes.x_range } else { axes.y_range };
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn plot_svg(series: &[Series], kind: PlotKind, opts: &PlotOptions) -> Result<String> {
    let axes = plot_axes(series, kind, opts)?;
    let k = sigma_factor(kind);
    let (x0, x1) = (MARGIN_LEFT, PLOT_WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (MARGIN_TOP, PLOT_HEIGHT - MARGIN_BOTTOM);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_WIDTH}" height="{PLOT_HEIGHT}" viewBox="0 0 {PLOT_WIDTH} {PLOT_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{PLOT_WIDTH}" height="{PLOT_HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (x0 + x1) / 2.0,
        xml_escape(&opts.title)
    );

    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(s, "</g>");
    for t in ticks(&axes, true) {
        let x = axes.px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y1}" x2="{x}" y2="{}" stroke="black"/>"#,
            y1 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            y1 + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(&axes, false) {
        let y = axes.py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let (x_label, y_label) = match kind {
        PlotKind::Scaling => ("iterations", "conflicting edges (fraction)"),
        PlotKind::FitParams => ("connectivity c", "fit parameter"),
        PlotKind::Noise => ("alpha", "value"),
    };
    let y_label = opts.y_label.as_deref().unwrap_or(y_label);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        PLOT_HEIGHT - 15.0,
        x_label
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    );

    let mut markers: Vec<(String, f64)> = Vec::new();
    if kind == PlotKind::FitParams {
        let (lo, hi) = TRAINING_RANGE;
        let _ = writeln!(
            s,
            r##"<rect class="training-range" x="{}" y="{y0}" width="{}" height="{}" fill="#cccccc" fill-opacity="0.35"/>"##,
            axes.px(lo),
            axes.px(hi) - axes.px(lo),
            y1 - y0
        );
        markers.push(("c_d".to_string(), C_D));
    }
    markers.extend(opts.markers.iter().cloned());
    for (label, at) in &markers {
        let x = axes.px(*at);
        let _ = writeln!(
            s,
            r#"<line class="marker" x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="gray" stroke-dasharray="5,4"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="gray">{}</text>"#,
            x + 3.0,
            y0 + 12.0,
            xml_escape(label)
        );
    }

    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut pts = ser.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let _ = writeln!(s, r#"<g class="series" stroke="{colour}" fill="{colour}">"#);
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.3},{:.3}", axes.px(p.0), axes.py(p.1)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" points="{}"/>"#, path.join(" "));
        for p in &pts {
            let (x, y) = (axes.px(p.0), axes.py(p.1));
            let (top, bottom) = (axes.py(p.1 + k * p.2), axes.py(p.1 - k * p.2));
            let _ = writeln!(
                s,
                r#"<line class="errorbar" x1="{x:.3}" y1="{top:.3}" x2="{x:.3}" y2="{bottom:.3}"/>"#
            );
            let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="3"/>"#);
        }
        let _ = writeln!(s, "</g>");
        let ly = y0 + 10.0 + 18.0 * i as f64;
        let lx = x1 + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 25.0,
            ly + 4.0,
            xml_escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot(series: &[Series], kind: PlotKind, opts: &PlotOptions, path: impl AsRef<Path>) -> Result<()> {
    let svg = plot_svg(series, kind, opts)?;
    let path = path.as_ref();
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Scaling-plot series, one per `(method, kind, n, c)` curve.
pub fn scaling_series(points: &[AggregatePoint]) -> Vec<Series> {
    let mut curves: BTreeMap<(Method, GraphKind, usize, u64), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for p in points {
        curves
            .entry((p.method, p.kind, p.n, p.c.to_bits()))
            .or_default()
            .push((p.iterations as f64, p.mean, p.std));
    }
    curves
        .into_iter()
        .map(|((m, k, n, c), points)| Series {
            label: format!("{m} {k} N={n} c={}", f64::from_bits(c)),
            points,
        })
        .collect()
}
