mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pottscolor::annealing::{anneal, SaConfig, Schedule};
use pottscolor::coloring::{color, ColorConfig};
use pottscolor::diffcore::Aggregation;
use pottscolor::experiments::{
    aggregate, fit_power_law, fits_to_csv, noise_rows_to_csv, noise_study, plot, read_records_file, records_to_csv,
    scaling_series, sweep, throughput_report, throughput_to_csv, FitOptions, FitResult, GraphKind, Method,
    NoiseStudyConfig, PlotKind, PlotOptions, Series, SweepSpec, Weighting,
};
use pottscolor::gnn_model::{count_params, load_checkpoint, reference_table, save_checkpoint, Activation, ArchSpec};
use pottscolor::graph_core::{generate_er, generate_planted, read_graph, write_graph};
use pottscolor::potts::{conflict_count, LossWeights};
use pottscolor::rng;
use pottscolor::training::{load_dataset, train, LogEntry, Sample, Split, TrainConfig};

use config::{parse_list, print_resolved, Settings};

#[derive(Parser, Debug)]
#[command(
    name = "pottscolor",
    version,
    about = "Graph coloring with a Potts-loss message-passing network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate planted or Erdos-Renyi graphs.
    Generate(GenerateArgs),
    /// Train a model from a `key = value` config file.
    Train(TrainArgs),
    /// Color a graph with a trained model.
    Color(ColorArgs),
    /// Color a graph with simulated annealing.
    Anneal(AnnealArgs),
    /// Run an iterations-versus-conflicts sweep.
    Sweep(SweepArgs),
    /// Fit `A x^-B + C` to sweep results.
    Fit(FitArgs),
    /// Measure how the model responds to noise near planted solutions and fixed points.
    NoiseStudy(NoiseStudyArgs),
    /// Show a checkpoint's architecture and parameter counts.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Random seed.
    #[arg(long, env = "POTTSCOLOR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Mean connectivity 2M/N.
    #[arg(long, default_value_t = 13.0)]
    c: f64,
    #[arg(long, default_value_t = 5)]
    q: usize,
    /// `planted` or `er`.
    #[arg(long, default_value = "planted")]
    kind: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

const TRAIN_KEYS: &[&str] = &[
    "manifest",
    "planted_count",
    "planted_n",
    "planted_c_min",
    "planted_c_max",
    "n_layers",
    "latent_dim",
    "hidden_phi",
    "hidden_gamma",
    "hidden_readout",
    "q",
    "aggregation",
    "activation",
    "edge_feature",
    "epochs",
    "batch_size",
    "learning_rate",
    "lr_final_fraction",
    "clip_grad_norm",
    "beta1",
    "beta2",
    "eps_adam",
    "alpha_min",
    "alpha_max",
    "eta1",
    "eta2",
    "entropy_sign",
    "normalize_entropy",
    "warmup_epochs_eta1",
    "warmup_epochs_eta2",
    "train_fraction",
    "seed",
    "log_out",
];

#[derive(Args, Debug)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Override a config key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed; overrides the config file.
    #[arg(long, env = "POTTSCOLOR_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ColorArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha_min: f64,
    #[arg(long, default_value_t = 0.9)]
    alpha_max: f64,
    /// Apply the model without corrupting its input.
    #[arg(long)]
    no_noise: bool,
    /// Write `t,alpha,h_soft,conflicts_hard` here.
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
    /// Write one color per line here.
    #[arg(long)]
    colors_out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct AnnealArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 2000)]
    sweeps: usize,
    #[arg(long, default_value_t = 0.5)]
    beta_start: f64,
    #[arg(long, default_value_t = 20.0)]
    beta_end: f64,
    /// `geometric` or `linear`.
    #[arg(long, default_value = "geometric")]
    schedule: String,
    /// Number of colors; defaults to the graph's planted q, else 5.
    #[arg(long)]
    q: Option<usize>,
    /// Keep annealing after a proper coloring is found.
    #[arg(long)]
    no_early_stop: bool,
    /// Write `sweep,beta,conflicts,best_conflicts` here.
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
    #[arg(long)]
    colors_out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

const SWEEP_KEYS: &[&str] = &[
    "methods",
    "kinds",
    "n",
    "c",
    "iterations",
    "graphs_per_point",
    "q",
    "seed",
    "workers",
    "checkpoint",
    "alpha_min",
    "alpha_max",
    "noise",
    "beta_start",
    "beta_end",
    "schedule",
];

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_csv: PathBuf,
    /// Model for `gnn` runs; overrides the config file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads; overrides the config file.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write a scaling plot.
    #[arg(long)]
    plot_out: Option<PathBuf>,
    /// Also write iterations per second per cell.
    #[arg(long)]
    throughput_out: Option<PathBuf>,
    #[arg(long, env = "POTTSCOLOR_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Sweep records, or a plain `x,y` / `c,x,y` table.
    #[arg(long)]
    in_csv: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    /// `uniform` or `relative`.
    #[arg(long, default_value = "uniform")]
    weighting: String,
    /// Bootstrap resamples for parameter errors.
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    /// Keep only sweep records of this method (`gnn` or `sa`).
    #[arg(long)]
    method: Option<String>,
    /// Keep only sweep records of this graph kind (`planted` or `random`).
    #[arg(long)]
    kind: Option<String>,
    /// Keep only sweep records with this many nodes.
    #[arg(long)]
    n: Option<usize>,
    /// Also plot the fitted parameters against connectivity.
    #[arg(long)]
    plot_out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct NoiseStudyArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated mixing weights.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    alphas: String,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    plot_out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Bad input from the user, as opposed to a failure while running.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| Usage(e).into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Color(a) => cmd_color(a),
        Command::Anneal(a) => cmd_anneal(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Fit(a) => cmd_fit(a),
        Command::NoiseStudy(a) => cmd_noise_study(a),
        Command::Info(a) => cmd_info(a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_colors(path: &Path, colors: &[usize]) -> Result<()> {
    let text: String = colors.iter().map(|c| format!("{c}\n")).collect();
    write_file(path, &text)
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let planted = match a.kind.as_str() {
        "planted" => true,
        "er" => false,
        other => return usage(Err(anyhow::anyhow!("--kind must be planted or er, got {other:?}"))),
    };
    print_resolved(
        "generate",
        &[
            ("n", a.n.to_string()),
            ("c", a.c.to_string()),
            ("q", a.q.to_string()),
            ("kind", a.kind.clone()),
            ("count", a.count.to_string()),
            ("out_dir", a.out_dir.display().to_string()),
            ("seed", a.seed.seed.to_string()),
        ],
    );
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut manifest = String::new();
    for k in 0..a.count {
        let seed = rng::derive_seed(a.seed.seed, &[k as u64]);
        let g = if planted {
            generate_planted(a.n, a.c, a.q, seed)?.0
        } else {
            generate_er(a.n, a.c, seed)?
        };
        let name = format!("graph_{k:04}.txt");
        let path = a.out_dir.join(&name);
        write_graph(&g, &path)?;
        manifest.push_str(&name);
        manifest.push('\n');
        println!("{}\tN={} M={}", path.display(), g.n_nodes(), g.n_edges());
    }
    write_file(&a.out_dir.join("manifest.txt"), &manifest)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut s = match &a.config {
        Some(p) => usage(Settings::load(p, TRAIN_KEYS))?,
        None => Settings::default(),
    };
    usage(s.apply_overrides(&a.overrides, TRAIN_KEYS))?;
    if let Some(seed) = a.seed {
        s.set("seed", seed);
    }
    let (cfg, arch, source) = usage(train_settings(&s))?;

    let mut entries = vec![
        ("source", source.describe()),
        ("n_layers", arch.n_layers.to_string()),
        ("latent_dim", arch.latent_dim.to_string()),
        ("hidden_phi", arch.hidden.phi.to_string()),
        ("hidden_gamma", arch.hidden.gamma.to_string()),
        ("hidden_readout", arch.hidden.readout.to_string()),
        ("q", arch.q.to_string()),
        ("aggregation", arch.aggregation.to_string()),
        ("activation", arch.activation.to_string()),
        ("edge_feature", arch.edge_feature.to_string()),
    ];
    entries.extend(train_config_entries(&cfg));
    entries.push(("out_checkpoint", a.out_checkpoint.display().to_string()));
    print_resolved("train", &entries);

    let data = source.load(arch.q, cfg.seed)?;
    let start = Instant::now();
    let mut hook = |es: &[LogEntry]| {
        let tr = es.iter().find(|e| e.split == Split::Train);
        let va = es.iter().find(|e| e.split == Split::Validation);
        if let Some(t) = tr {
            let val = va.map_or(String::new(), |v| format!(" val_loss {:.5} val_h {:.5}", v.loss, v.h));
            eprintln!(
                "epoch {:>5} loss {:.5} h {:.5}{val} ({:.0}s)",
                t.epoch,
                t.loss,
                t.h,
                start.elapsed().as_secs_f64()
            );
        }
    };
    let (params, log) = train(&cfg, &arch, &data, Some(&mut hook))?;
    save_checkpoint(&params, &a.out_checkpoint)?;
    if let Some(p) = s.get_opt::<PathBuf>("log_out")? {
        write_file(&p, &log.to_csv())?;
    }
    println!("wrote {}", a.out_checkpoint.display());
    Ok(())
}

enum DataSource {
    Manifest(PathBuf),
    Planted {
        count: usize,
        n: usize,
        c_min: f64,
        c_max: f64,
    },
}

impl DataSource {
    fn describe(&self) -> String {
        match self {
            Self::Manifest(p) => format!("manifest {}", p.display()),
            Self::Planted { count, n, c_min, c_max } => {
                format!("{count} planted graphs, N={n}, c uniform in [{c_min}, {c_max}]")
            }
        }
    }

    fn load(&self, q: usize, seed: u64) -> Result<Vec<Sample>> {
        match self {
            Self::Manifest(p) => Ok(load_dataset(p)?),
            &Self::Planted { count, n, c_min, c_max } => (0..count)
                .map(|k| {
                    let s = rng::derive_seed(seed, &[0xDA7A, k as u64]);
                    let t = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
                    let c = c_min + (c_max - c_min) * t;
                    Ok(Sample::new(generate_planted(n, c, q, s)?.0)?)
                })
                .collect(),
        }
    }
}

fn train_settings(s: &Settings) -> Result<(TrainConfig, ArchSpec, DataSource)> {
    let d = TrainConfig::default();
    let dw = d.weights;
    let q = s.get("q", 5usize)?;
    let mut arch = ArchSpec::new(s.get("n_layers", 5usize)?, s.get("latent_dim", 32usize)?, q);
    arch.hidden.phi = s.get("hidden_phi", arch.hidden.phi)?;
    arch.hidden.gamma = s.get("hidden_gamma", arch.hidden.gamma)?;
    arch.hidden.readout = s.get("hidden_readout", arch.hidden.readout)?;
    arch.aggregation = s.get("aggregation", Aggregation::Sum)?;
    arch.activation = s.get("activation", Activation::Relu)?;
    arch.edge_feature = s.get("edge_feature", false)?;
    arch.validate()?;
    let cfg = TrainConfig {
        alpha_min: s.get("alpha_min", d.alpha_min)?,
        alpha_max: s.get("alpha_max", d.alpha_max)?,
        weights: LossWeights {
            eta1: s.get("eta1", dw.eta1)?,
            eta2: s.get("eta2", dw.eta2)?,
            entropy_sign: s.get("entropy_sign", dw.entropy_sign)?,
            normalize_entropy: s.get("normalize_entropy", dw.normalize_entropy)?,
        },
        warmup_epochs_eta2: s.get("warmup_epochs_eta2", d.warmup_epochs_eta2)?,
        warmup_epochs_eta1: s.get_or_none("warmup_epochs_eta1", d.warmup_epochs_eta1)?,
        epochs: s.get("epochs", d.epochs)?,
        batch_size: s.get("batch_size", d.batch_size)?,
        learning_rate: s.get("learning_rate", d.learning_rate)?,
        lr_final_fraction: s.get("lr_final_fraction", d.lr_final_fraction)?,
        clip_grad_norm: s.get_or_none("clip_grad_norm", d.clip_grad_norm)?,
        beta1: s.get("beta1", d.beta1)?,
        beta2: s.get("beta2", d.beta2)?,
        eps_adam: s.get("eps_adam", d.eps_adam)?,
        seed: s.get("seed", d.seed)?,
        train_fraction: s.get("train_fraction", d.train_fraction)?,
    };
    cfg.validate()?;
    let source = match s.get_opt::<PathBuf>("manifest")? {
        Some(p) => DataSource::Manifest(p),
        None => {
            let count = s.get("planted_count", 0usize)?;
            if count == 0 {
                bail!("set either `manifest` or `planted_count` in the config");
            }
            DataSource::Planted {
                count,
                n: s.get("planted_n", 1000usize)?,
                c_min: s.get("planted_c_min", 12.5)?,
                c_max: s.get("planted_c_max", 15.0)?,
            }
        }
    };
    Ok((cfg, arch, source))
}

fn train_config_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("lr_final_fraction", cfg.lr_final_fraction.to_string()),
        (
            "clip_grad_norm",
            cfg.clip_grad_norm.map_or("none".into(), |v| v.to_string()),
        ),
        ("beta1", cfg.beta1.to_string()),
        ("beta2", cfg.beta2.to_string()),
        ("eps_adam", cfg.eps_adam.to_string()),
        ("alpha_min", cfg.alpha_min.to_string()),
        ("alpha_max", cfg.alpha_max.to_string()),
        ("eta1", cfg.weights.eta1.to_string()),
        ("eta2", cfg.weights.eta2.to_string()),
        ("entropy_sign", cfg.weights.entropy_sign.to_string()),
        ("normalize_entropy", cfg.weights.normalize_entropy.to_string()),
        (
            "warmup_epochs_eta1",
            cfg.warmup_epochs_eta1.map_or("none".into(), |v| v.to_string()),
        ),
        ("warmup_epochs_eta2", cfg.warmup_epochs_eta2.to_string()),
        ("train_fraction", cfg.train_fraction.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
}

fn cmd_color(a: ColorArgs) -> Result<()> {
    let cfg = ColorConfig {
        iterations: a.iters,
        alpha_min: a.alpha_min,
        alpha_max: a.alpha_max,
        noise_enabled: !a.no_noise,
        seed: a.seed.seed,
        record_trajectory: a.trajectory_out.is_some(),
    };
    usage(cfg.validate().map_err(Into::into))?;
    print_resolved(
        "color",
        &[
            ("graph", a.graph.display().to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
            ("iters", cfg.iterations.to_string()),
            ("alpha_min", cfg.alpha_min.to_string()),
            ("alpha_max", cfg.alpha_max.to_string()),
            ("noise", cfg.noise_enabled.to_string()),
            ("seed", cfg.seed.to_string()),
        ],
    );
    let g = read_graph(&a.graph)?;
    let p = load_checkpoint(&a.checkpoint)?;
    let start = Instant::now();
    let res = color(&g, &p, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "conflicts {} of {} edges (fraction {:.6}) in {:.3}s",
        res.conflicts,
        g.n_edges(),
        res.conflict_fraction(&g),
        secs
    );
    if let Some(path) = &a.trajectory_out {
        write_file(path, &res.trajectory_csv())?;
    }
    if let Some(path) = &a.colors_out {
        write_colors(path, &res.colors)?;
    }
    Ok(())
}

fn cmd_anneal(a: AnnealArgs) -> Result<()> {
    let schedule: Schedule = usage(a.schedule.parse().map_err(Into::into))?;
    let g = read_graph(&a.graph)?;
    let q = a.q.or(g.planted().map(|p| p.q)).unwrap_or(5);
    let cfg = SaConfig {
        n_sweeps: a.sweeps,
        beta_start: a.beta_start,
        beta_end: a.beta_end,
        schedule,
        seed: a.seed.seed,
        q,
        stop_at_zero: !a.no_early_stop,
    };
    usage(cfg.validate().map_err(Into::into))?;
    print_resolved(
        "anneal",
        &[
            ("graph", a.graph.display().to_string()),
            ("sweeps", cfg.n_sweeps.to_string()),
            ("beta_start", cfg.beta_start.to_string()),
            ("beta_end", cfg.beta_end.to_string()),
            ("schedule", cfg.schedule.to_string()),
            ("q", cfg.q.to_string()),
            ("early_stop", cfg.stop_at_zero.to_string()),
            ("seed", cfg.seed.to_string()),
        ],
    );
    let start = Instant::now();
    let res = anneal(&g, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    debug_assert_eq!(conflict_count(&g, &res.colors)?, res.conflicts);
    println!(
        "conflicts {} of {} edges after {} sweeps in {:.3}s",
        res.conflicts,
        g.n_edges(),
        res.sweeps_run,
        secs
    );
    if let Some(path) = &a.trajectory_out {
        write_file(path, &res.trajectory_csv())?;
    }
    if let Some(path) = &a.colors_out {
        write_colors(path, &res.colors)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut s = match &a.config {
        Some(p) => usage(Settings::load(p, SWEEP_KEYS))?,
        None => Settings::default(),
    };
    usage(s.apply_overrides(&a.overrides, SWEEP_KEYS))?;
    if let Some(seed) = a.seed {
        s.set("seed", seed);
    }
    if let Some(w) = a.workers {
        s.set("workers", w);
    }
    if let Some(c) = &a.checkpoint {
        s.set("checkpoint", c.display());
    }
    let (spec, checkpoint) = usage(sweep_settings(&s))?;
    let list = |v: Vec<String>| v.join(",");
    print_resolved(
        "sweep",
        &[
            ("methods", list(spec.methods.iter().map(ToString::to_string).collect())),
            ("kinds", list(spec.kinds.iter().map(ToString::to_string).collect())),
            ("n", list(spec.n_values.iter().map(ToString::to_string).collect())),
            ("c", list(spec.c_values.iter().map(ToString::to_string).collect())),
            (
                "iterations",
                list(spec.iterations.iter().map(ToString::to_string).collect()),
            ),
            ("graphs_per_point", spec.graphs_per_point.to_string()),
            ("q", spec.q.to_string()),
            ("workers", spec.workers.to_string()),
            (
                "checkpoint",
                checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()),
            ),
            ("alpha_min", spec.color.alpha_min.to_string()),
            ("alpha_max", spec.color.alpha_max.to_string()),
            ("noise", spec.color.noise_enabled.to_string()),
            ("beta_start", spec.anneal.beta_start.to_string()),
            ("beta_end", spec.anneal.beta_end.to_string()),
            ("schedule", spec.anneal.schedule.to_string()),
            (
                "iteration_unit",
                "gnn: coloring steps; sa: sweeps of N proposals".into(),
            ),
            ("seed", spec.seed.to_string()),
        ],
    );
    let model = checkpoint.map(load_checkpoint).transpose()?;
    if spec.methods.contains(&Method::Gnn) && model.is_none() {
        return usage(Err(anyhow::anyhow!(
            "gnn sweeps need --checkpoint or `checkpoint` in the config"
        )));
    }
    let records = sweep(&spec, model.as_ref())?;
    write_file(&a.out_csv, &records_to_csv(&records))?;
    println!("wrote {} records to {}", records.len(), a.out_csv.display());
    if let Some(path) = &a.plot_out {
        let opts = PlotOptions {
            title: "Conflicts against iterations".into(),
            ..Default::default()
        };
        plot(&scaling_series(&aggregate(&records)), PlotKind::Scaling, &opts, path)?;
    }
    if let Some(path) = &a.throughput_out {
        write_file(path, &throughput_to_csv(&throughput_report(&records)))?;
    }
    Ok(())
}

fn sweep_settings(s: &Settings) -> Result<(SweepSpec, Option<PathBuf>)> {
    let d = SweepSpec::default();
    let spec = SweepSpec {
        methods: s.get_list("methods", d.methods)?,
        kinds: s.get_list("kinds", d.kinds)?,
        n_values: s.get_list("n", d.n_values)?,
        c_values: s.get_list("c", d.c_values)?,
        iterations: s.get_list("iterations", d.iterations)?,
        graphs_per_point: s.get("graphs_per_point", d.graphs_per_point)?,
        q: s.get("q", d.q)?,
        seed: s.get("seed", d.seed)?,
        workers: s.get("workers", d.workers)?,
        color: ColorConfig {
            alpha_min: s.get("alpha_min", d.color.alpha_min)?,
            alpha_max: s.get("alpha_max", d.color.alpha_max)?,
            noise_enabled: s.get("noise", d.color.noise_enabled)?,
            ..d.color
        },
        anneal: SaConfig {
            beta_start: s.get("beta_start", d.anneal.beta_start)?,
            beta_end: s.get("beta_end", d.anneal.beta_end)?,
            schedule: s.get("schedule", d.anneal.schedule)?,
            ..d.anneal
        },
    };
    Ok((spec, s.get_opt("checkpoint")?))
}

/// Curves to fit: `(connectivity, points)`.
fn read_fit_input(path: &Path, filter: &FitFilter) -> Result<Vec<(f64, Vec<(f64, f64)>)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or("").trim();
    if header.starts_with("method,") {
        let records: Vec<_> = read_records_file(path)?
            .into_iter()
            .filter(|r| filter.method.is_none_or(|m| r.method == m))
            .filter(|r| filter.kind.is_none_or(|k| r.kind == k))
            .filter(|r| filter.n.is_none_or(|n| r.n == n))
            .collect();
        let agg = aggregate(&records);
        let mut curves: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
        let mut seen: Vec<(Method, GraphKind, usize)> = Vec::new();
        for p in &agg {
            if !seen.contains(&(p.method, p.kind, p.n)) {
                seen.push((p.method, p.kind, p.n));
            }
            match curves.iter_mut().find(|(c, _)| c.to_bits() == p.c.to_bits()) {
                Some((_, pts)) => pts.push((p.iterations as f64, p.mean)),
                None => curves.push((p.c, vec![(p.iterations as f64, p.mean)])),
            }
        }
        if seen.len() > 1 {
            bail!(
                "{} holds {} (method, kind, n) groups; select one with --method, --kind and --n",
                path.display(),
                seen.len()
            );
        }
        return Ok(curves);
    }
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_c = match cols.as_slice() {
        ["x", "y"] => false,
        ["c", "x", "y"] => true,
        _ => bail!(
            "{}: expected sweep records or an `x,y` / `c,x,y` header",
            path.display()
        ),
    };
    let mut curves: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = parse_list(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        let (c, x, y) = match (with_c, v.as_slice()) {
            (false, [x, y]) => (f64::NAN, *x, *y),
            (true, [c, x, y]) => (*c, *x, *y),
            _ => bail!("{}:{}: wrong number of columns", path.display(), n + 1),
        };
        match curves.iter_mut().find(|(k, _)| k.to_bits() == c.to_bits()) {
            Some((_, pts)) => pts.push((x, y)),
            None => curves.push((c, vec![(x, y)])),
        }
    }
    Ok(curves)
}

struct FitFilter {
    method: Option<Method>,
    kind: Option<GraphKind>,
    n: Option<usize>,
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let weighting: Weighting = usage(a.weighting.parse().map_err(Into::into))?;
    let opts = FitOptions {
        weighting,
        bootstrap: a.bootstrap,
        seed: a.seed.seed,
        ..Default::default()
    };
    print_resolved(
        "fit",
        &[
            ("in_csv", a.in_csv.display().to_string()),
            ("weighting", weighting.to_string()),
            ("grid_points", opts.grid_points.to_string()),
            ("b_range", format!("{},{}", opts.b_range.0, opts.b_range.1)),
            ("bootstrap", opts.bootstrap.to_string()),
            ("seed", opts.seed.to_string()),
        ],
    );
    let filter = FitFilter {
        method: usage(a.method.as_deref().map(str::parse).transpose().map_err(Into::into))?,
        kind: usage(a.kind.as_deref().map(str::parse).transpose().map_err(Into::into))?,
        n: a.n,
    };
    let curves = usage(read_fit_input(&a.in_csv, &filter))?;
    let mut fits: Vec<(f64, FitResult)> = Vec::new();
    for (c, pts) in curves {
        match fit_power_law(&pts, &opts) {
            Ok(f) => {
                println!(
                    "c={c}: A={:.6} B={:.6} C={:.6} residual={:.3e} converged={}",
                    f.a, f.b, f.c, f.residual, f.converged
                );
                fits.push((c, f));
            }
            Err(e) => eprintln!("c={c}: skipped ({e})"),
        }
    }
    if fits.is_empty() {
        bail!("no curve could be fitted");
    }
    write_file(&a.out_csv, &fits_to_csv(&fits))?;
    if let Some(path) = &a.plot_out {
        let param = |label: &str, f: fn(&FitResult) -> (f64, f64)| Series {
            label: label.into(),
            points: fits
                .iter()
                .filter(|(c, _)| c.is_finite())
                .map(|(c, r)| {
                    let (v, e) = f(r);
                    (*c, v, e)
                })
                .collect(),
        };
        let series = vec![
            param("C (plateau)", |r| (r.c, r.c_err)),
            param("B (exponent)", |r| (r.b, r.b_err)),
        ];
        let opts = PlotOptions {
            title: "Power-law fit parameters".into(),
            ..Default::default()
        };
        plot(&series, PlotKind::FitParams, &opts, path)?;
    }
    Ok(())
}

fn cmd_noise_study(a: NoiseStudyArgs) -> Result<()> {
    let alphas: Vec<f64> = usage(parse_list(&a.alphas))?;
    let cfg = NoiseStudyConfig {
        alphas,
        samples: a.samples,
        seed: a.seed.seed,
        ..Default::default()
    };
    print_resolved(
        "noise-study",
        &[
            ("graph", a.graph.display().to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
            ("alphas", a.alphas.clone()),
            ("samples", cfg.samples.to_string()),
            ("fp_max_iter", cfg.fp_max_iter.to_string()),
            ("fp_tol", cfg.fp_tol.to_string()),
            ("seed", cfg.seed.to_string()),
        ],
    );
    let g = read_graph(&a.graph)?;
    let p = load_checkpoint(&a.checkpoint)?;
    let study = noise_study(&g, &p, &cfg)?;
    println!(
        "fixed point h = {:.6} (converged: {})",
        study.fixed_point_h, study.fixed_point_converged
    );
    write_file(&a.out_csv, &noise_rows_to_csv(&study.rows))?;
    if let Some(path) = &a.plot_out {
        let col = |label: &str, f: fn(&pottscolor::experiments::NoiseRow) -> (f64, f64)| Series {
            label: label.into(),
            points: study
                .rows
                .iter()
                .map(|r| {
                    let (m, s) = f(r);
                    (r.alpha, m, s)
                })
                .collect(),
        };
        let series = vec![
            col("dh planted", |r| (r.dh_planted_mean, r.dh_planted_std)),
            col("dh fixed point", |r| (r.dh_fp_mean, r.dh_fp_std)),
            col("overlap planted", |r| (r.overlap_planted_mean, r.overlap_planted_std)),
            col("overlap fixed point", |r| (r.overlap_fp_mean, r.overlap_fp_std)),
        ];
        let opts = PlotOptions {
            title: "Response to noise".into(),
            ..Default::default()
        };
        plot(&series, PlotKind::Noise, &opts, path)?;
    }
    Ok(())
}

fn cmd_info(a: InfoArgs) -> Result<()> {
    let p = load_checkpoint(&a.checkpoint)?;
    let arch = &p.arch;
    println!("checkpoint    {}", a.checkpoint.display());
    println!("layers        {}", arch.n_layers);
    println!("latent_dim    {}", arch.latent_dim);
    println!("q             {}", arch.q);
    println!("input_dim     {}", arch.input_dim);
    println!(
        "hidden        phi {} gamma {} readout {}",
        arch.hidden.phi, arch.hidden.gamma, arch.hidden.readout
    );
    println!("aggregation   {}", arch.aggregation);
    println!("activation    {}", arch.activation);
    println!("edge_feature  {}", arch.edge_feature);
    println!("init_seed     {}", p.seed);
    println!();
    println!("{}", count_params(&p));
    println!(
        "Reference    {:>10}   (published 5-layer, 32-dim model)",
        reference_table::TOTAL
    );
    Ok(())
}
