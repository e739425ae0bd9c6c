//! Command-line driver: data generation, training, anchor sweeps, theory
//! checks and plots.
//!
//! Exit codes: `0` success, `1` usage error, `2` runtime or verification
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qdsb_core::datasets::{gen_eight_gaussians, gen_gaussian, gen_moons, load_csv, save_csv, PointCloud};
use qdsb_core::rng::derive_seed;
use qdsb_core::trainer::{train_with, MmdEvaluator, TrainConfig};
use qdsb_core::verify::{run_suite, SuiteScale};

pub mod plot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const SOURCE_TRAIN: &str = "source_train.csv";
pub const TARGET_TRAIN: &str = "target_train.csv";
pub const SOURCE_EVAL: &str = "source_eval.csv";
pub const TARGET_EVAL: &str = "target_eval.csv";

#[derive(Debug, Parser)]
#[command(name = "qdsb", version, about = "Quantized diffusion Schrödinger bridges on toy benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write training and evaluation point clouds for a task.
    Gen(GenArgs),
    /// Train one model per seed and report the final MMD.
    Train(TrainArgs),
    /// Train across anchor counts and tabulate MMD and coverage radius.
    Sweep(SweepArgs),
    /// Check the quantization bounds on randomized small instances.
    Verify(VerifyArgs),
    /// Render metrics or sweep CSV files as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Eight Gaussians to two moons.
    #[value(name = "8g-moons")]
    EightGaussiansMoons,
    /// Standard Gaussian to two moons.
    #[value(name = "g-moons")]
    GaussianMoons,
    /// Standard Gaussian to eight Gaussians.
    #[value(name = "g-8g")]
    GaussianEightGaussians,
    /// Clouds read from `--source` and `--target`.
    #[value(name = "csv")]
    Csv,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::EightGaussiansMoons => "8g-moons",
            Self::GaussianMoons => "g-moons",
            Self::GaussianEightGaussians => "g-8g",
            Self::Csv => "csv",
        }
    }
}

/// Training and evaluation clouds of one task.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub source_train: PointCloud,
    pub target_train: PointCloud,
    pub source_eval: PointCloud,
    pub target_eval: PointCloud,
}

/// Generates the four clouds of a synthetic task from independent streams.
pub fn generate_task(task: Task, n: usize, n_eval: usize, seed: u64) -> Result<TaskData> {
    let gen_side = |source: bool, count: usize, stream: u64| -> Result<PointCloud> {
        let s = derive_seed(seed, stream);
        Ok(match (task, source) {
            (Task::EightGaussiansMoons, true) => gen_eight_gaussians(count, s),
            (Task::GaussianMoons | Task::GaussianEightGaussians, true) => gen_gaussian(count, s, 2)?,
            (Task::EightGaussiansMoons | Task::GaussianMoons, false) => gen_moons(count, s),
            (Task::GaussianEightGaussians, false) => gen_eight_gaussians(count, s),
            (Task::Csv, _) => bail!("the csv task reads existing files; nothing to generate"),
        })
    };
    Ok(TaskData {
        source_train: gen_side(true, n, 0)?,
        target_train: gen_side(false, n, 1)?,
        source_eval: gen_side(true, n_eval, 2)?,
        target_eval: gen_side(false, n_eval, 3)?,
    })
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub task: Task,
    /// Training points per side.
    #[arg(long, default_value_t = 16384)]
    pub n: usize,
    /// Evaluation points per side.
    #[arg(long, default_value_t = 4096)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes the four CSV files and returns their paths.
pub fn cmd_gen(args: &GenArgs) -> Result<Vec<PathBuf>> {
    let data = generate_task(args.task, args.n, args.n_eval, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let files = [
        (SOURCE_TRAIN, &data.source_train),
        (TARGET_TRAIN, &data.target_train),
        (SOURCE_EVAL, &data.source_eval),
        (TARGET_EVAL, &data.target_eval),
    ];
    let mut paths = Vec::new();
    for (name, cloud) in files {
        let path = args.out.join(name);
        save_csv(cloud, &path).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Options shared by `train` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub anchors_k: Option<usize>,
    #[arg(long)]
    pub refresh_epochs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// qdsb, minibatch-ot or independent.
    #[arg(long)]
    pub coupling: Option<String>,
    /// entropic or exact.
    #[arg(long)]
    pub ot_mode: Option<String>,
    /// sqeuclidean or euclidean.
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_points: Option<usize>,
    #[arg(long)]
    pub em_steps: Option<usize>,
    #[arg(long)]
    pub rollout_batch: Option<usize>,
    /// sde or ode.
    #[arg(long)]
    pub sim_mode: Option<String>,
}

impl ConfigArgs {
    fn flag_entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("sigma", self.sigma.map(|v| v.to_string()));
        push("tau", self.tau.map(|v| v.to_string()));
        push("anchors_k", self.anchors_k.map(|v| v.to_string()));
        push("refresh_epochs", self.refresh_epochs.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("weight_decay", self.weight_decay.map(|v| v.to_string()));
        push("coupling", self.coupling.clone());
        push("ot_mode", self.ot_mode.clone());
        push("cost", self.cost.clone());
        push("eval_every", self.eval_every.map(|v| v.to_string()));
        push("eval_points", self.eval_points.map(|v| v.to_string()));
        push("em_steps", self.em_steps.map(|v| v.to_string()));
        push("rollout_batch", self.rollout_batch.map(|v| v.to_string()));
        push("sim_mode", self.sim_mode.clone());
        out
    }

    /// Defaults, then the config file, then flags. `sigma` is applied before
    /// everything else so an explicit `tau` always wins over `2σ²`.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut merged = BTreeMap::new();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_key_values(&text)? {
                merged.insert(k, v);
            }
        }
        for (k, v) in self.flag_entries() {
            merged.insert(k.to_string(), v);
        }
        let mut config = TrainConfig::default();
        if let Some(sigma) = merged.remove("sigma") {
            config.set("sigma", &sigma)?;
        }
        for (k, v) in &merged {
            config.set(k, v)?;
        }
        Ok(config)
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`, found {raw:?}", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            bail!("config line {}: empty key or value", i + 1);
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = text
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| anyhow!("invalid {what} {s:?}")))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("{what} list is empty");
    }
    Ok(items)
}

/// Where the point clouds of a run come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(value_enum)]
    pub task: Task,
    /// Directory written by `gen`; generated in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Source cloud for the csv task.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target cloud for the csv task.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Training points per side when generating.
    #[arg(long, default_value_t = 16384)]
    pub n: usize,
    /// Evaluation points per side when generating.
    #[arg(long, default_value_t = 4096)]
    pub n_eval: usize,
    /// Seed of generated data.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl DataArgs {
    pub fn load(&self) -> Result<TaskData> {
        if self.task == Task::Csv {
            let (Some(s), Some(t)) = (&self.source, &self.target) else {
                bail!("the csv task needs --source and --target");
            };
            let source = load_csv(s).with_context(|| format!("loading {}", s.display()))?;
            let target = load_csv(t).with_context(|| format!("loading {}", t.display()))?;
            return Ok(TaskData {
                source_eval: source.clone(),
                target_eval: target.clone(),
                source_train: source,
                target_train: target,
            });
        }
        if let Some(dir) = &self.data {
            let load = |name: &str| {
                let p = dir.join(name);
                load_csv(&p).with_context(|| format!("loading {}", p.display()))
            };
            return Ok(TaskData {
                source_train: load(SOURCE_TRAIN)?,
                target_train: load(TARGET_TRAIN)?,
                source_eval: load(SOURCE_EVAL)?,
                target_eval: load(TARGET_EVAL)?,
            });
        }
        generate_task(self.task, self.n, self.n_eval, self.data_seed)
    }

    fn describe(&self) -> String {
        let mut out = format!("task = {}\n", self.task.name());
        match (&self.data, &self.source, &self.target) {
            (_, Some(s), Some(t)) if self.task == Task::Csv => {
                out += &format!("source = {}\ntarget = {}\n", s.display(), t.display());
            }
            (Some(d), _, _) => out += &format!("data = {}\n", d.display()),
            _ => {
                out += &format!("n = {}\nn_eval = {}\ndata_seed = {}\n", self.n, self.n_eval, self.data_seed);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Result of one seed of `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_mmd: f64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<(u64, String)>,
    pub summary: String,
}

/// Sample mean and standard deviation (`n − 1` denominator; zero for one
/// value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn train_seed(config: &TrainConfig, data: &TaskData, dir: &Path) -> Result<SeedResult> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut evaluator = MmdEvaluator::new(&data.source_eval, &data.target_eval, config)?;
    let outcome = train_with(config, &data.source_train, &data.target_train, &mut evaluator)?;
    let final_mmd = match outcome.metrics.last_mmd() {
        Some(m) => m,
        None => evaluator.score(&outcome.bundle)?,
    };
    let metrics_path = dir.join("metrics.csv");
    outcome.metrics.write_csv(&metrics_path)?;
    let checkpoint_path = dir.join("checkpoint.txt");
    outcome.bundle.save(&checkpoint_path)?;
    let radius = outcome
        .anchor_radii
        .first()
        .map(|&(r0, r1)| r0.max(r1))
        .unwrap_or(f64::NAN);
    Ok(SeedResult {
        seed: config.seed,
        final_mmd,
        metrics_path,
        checkpoint_path,
        radius,
    })
}

/// Trains every seed, writing `seed_<s>/metrics.csv`,
/// `seed_<s>/checkpoint.txt`, `config.txt` and `summary.txt` under `out`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport> {
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let config = args.config.resolve()?;
    let data = args.data.load()?;
    config.validate(data.source_train.len(), data.target_train.len())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let seed_list: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    let mut echo = args.data.describe();
    echo += &format!("seeds = {}\n", seed_list.join(","));
    let mut resolved = config.to_key_values();
    resolved = resolved
        .lines()
        .filter(|l| !l.starts_with("seed ="))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(args.out.join("config.txt"), echo + &resolved)?;

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for &seed in &seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        match train_seed(&cfg, &data, &args.out.join(format!("seed_{seed}"))) {
            Ok(r) => {
                eprintln!("seed {seed}: final mmd {:.6}", r.final_mmd);
                results.push(r);
            }
            Err(e) => {
                eprintln!("seed {seed}: failed: {e:#}");
                failures.push((seed, format!("{e:#}")));
            }
        }
    }
    let mmds: Vec<f64> = results.iter().map(|r| r.final_mmd).collect();
    let summary = if mmds.is_empty() {
        "final mmd: no successful seeds".to_string()
    } else {
        let (m, s) = mean_std(&mmds);
        format!("final mmd: {m:.4} ± {s:.4} over {} seeds", mmds.len())
    };
    fs::write(args.out.join("summary.txt"), format!("{summary}\n"))?;
    Ok(TrainReport {
        seeds: results,
        failures,
        summary,
    })
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated anchor counts.
    #[arg(long, default_value = "1,4,16,64,256,1024")]
    pub ks: String,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub mmd_mean: f64,
    pub mmd_std: f64,
    pub radius_median: f64,
}

pub const SWEEP_HEADER: &str = "k,mmd_mean,mmd_std,radius_median";

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One QDSB run per `(k, seed)`; the radius of a run is the larger initial
/// coverage radius of its two anchor sets. Defaults to 1000 epochs unless
/// the config says otherwise.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let ks: Vec<usize> = parse_list(&args.ks, "anchor count")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let mut config_args = args.config.clone();
    if config_args.epochs.is_none() {
        config_args.epochs = Some(1000);
    }
    let mut config = config_args.resolve()?;
    config.coupling_mode = qdsb_core::trainer::CouplingMode::Qdsb;
    let data = args.data.load()?;
    let n = data.source_train.len().min(data.target_train.len());
    let scratch = args.out.with_extension("runs");
    let mut rows = Vec::new();
    for &k in &ks {
        if k > n {
            eprintln!("warning: skipping k = {k}, larger than the {n} available points");
            continue;
        }
        let mut mmds = Vec::new();
        let mut radii = Vec::new();
        for &seed in &seeds {
            let cfg = TrainConfig {
                anchors_k: k,
                seed,
                ..config.clone()
            };
            let r = train_seed(&cfg, &data, &scratch.join(format!("k{k}_seed{seed}")))?;
            eprintln!("k {k} seed {seed}: final mmd {:.6}", r.final_mmd);
            mmds.push(r.final_mmd);
            radii.push(r.radius);
        }
        let (mean, std) = mean_std(&mmds);
        rows.push(SweepRow {
            k,
            mmd_mean: mean,
            mmd_std: std,
            radius_median: median(&mut radii),
        });
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        csv += &format!("{},{:.10e},{:.10e},{:.10e}\n", r.k, r.mmd_mean, r.mmd_std, r.radius_median);
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(rows)
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Randomized endpoint and radius instances.
    #[arg(long, default_value_t = 200)]
    pub endpoint_instances: usize,
    /// Points per cloud in the endpoint instances (at most 64).
    #[arg(long, default_value_t = 32)]
    pub endpoint_n: usize,
    /// Random k-center instances, in addition to the tight one.
    #[arg(long, default_value_t = 100)]
    pub kcenter_instances: usize,
    /// Points per cloud in the value-gap check (at most 256).
    #[arg(long, default_value_t = 256)]
    pub value_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Corrupt the recorded quantization errors to exercise the detector.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Runs the suite and writes the report; returns whether every bound held.
pub fn cmd_verify(args: &VerifyArgs) -> Result<(bool, usize)> {
    let scale = SuiteScale {
        endpoint_instances: args.endpoint_instances,
        endpoint_n: args.endpoint_n,
        kcenter_instances: args.kcenter_instances,
        value_n: args.value_n,
        seed: args.seed,
        corrupt_epsilon: args.inject_fault,
        ..SuiteScale::default()
    };
    let report = run_suite(&scale)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    report.write_csv(&args.out)?;
    for f in &report.sequence_failures {
        eprintln!("violation: {f}");
    }
    let violations = report.violations();
    eprintln!("{} records, {violations} violations", report.records.len());
    Ok((violations == 0, report.records.len()))
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Metrics or sweep CSV files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output SVG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let svg = plot::render_files(&args.inputs, args.title.as_deref())?;
    fs::write(&args.out, svg).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

/// Parses and runs a command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }),
        Command::Train(a) => cmd_train(a).map(|r| {
            println!("{}", r.summary);
            if r.failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|rows| {
            println!("{} rows written to {}", rows.len(), a.out.display());
            EXIT_OK
        }),
        Command::Verify(a) => cmd_verify(a).map(|(ok, _)| if ok { EXIT_OK } else { EXIT_FAILURE }),
        Command::Plot(a) => cmd_plot(a).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
