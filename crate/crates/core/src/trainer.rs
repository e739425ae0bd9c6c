//! The training loop: anchors, anchor plan, periodic refresh, pair sampling,
//! bridge regression, and metrics.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::anchors::{farthest_first_from, assign_cells, AnchorQuantization};
use crate::bridge::BridgeSample;
use crate::coupling::{build_anchor_coupling, independent_pairs, minibatch_ot_pairs, CouplingSampler, MinibatchMode, Pair};
use crate::datasets::PointCloud;
use crate::evaluate::MmdReference;
use crate::model::{AdamW, ModelBundle};
use crate::rng::{derive_seed, rng_from_seed, ChaCha8Rng};
use crate::simulate::{simulate, SimConfig, SimMode};
use crate::transport::{cost_matrix, sinkhorn, CostKind, SinkhornOptions};
use crate::{Error, Result};

const STREAM_INIT: u64 = 0;
const STREAM_STEPS: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_ANCHORS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingMode {
    /// Pairs drawn through the anchor plan.
    #[default]
    Qdsb,
    /// Pairs from an OT problem solved on each batch.
    MinibatchOt,
    /// Source and target drawn independently.
    Independent,
}

impl std::str::FromStr for CouplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qdsb" => Ok(Self::Qdsb),
            "minibatch-ot" | "minibatch_ot" => Ok(Self::MinibatchOt),
            "independent" => Ok(Self::Independent),
            other => Err(Error::Config(format!(
                "unknown coupling {other:?} (expected qdsb, minibatch-ot or independent)"
            ))),
        }
    }
}

impl std::fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Qdsb => "qdsb",
            Self::MinibatchOt => "minibatch-ot",
            Self::Independent => "independent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OtMode {
    #[default]
    Entropic,
    Exact,
}

impl std::str::FromStr for OtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropic" => Ok(Self::Entropic),
            "exact" => Ok(Self::Exact),
            other => Err(Error::Config(format!("unknown ot mode {other:?} (expected entropic or exact)"))),
        }
    }
}

impl std::fmt::Display for OtMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Entropic => "entropic",
            Self::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma: f64,
    pub tau: f64,
    pub anchors_k: usize,
    pub refresh_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub coupling_mode: CouplingMode,
    pub ot_mode: OtMode,
    pub cost_kind: CostKind,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_points: usize,
    pub em_steps: usize,
    pub rollout_batch: usize,
    pub sim_mode: SimMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sigma = 0.25;
        Self {
            sigma,
            tau: 2.0 * sigma * sigma,
            anchors_k: 256,
            refresh_epochs: 100,
            epochs: 500,
            batch_size: 256,
            lr: 1e-4,
            weight_decay: 1e-2,
            coupling_mode: CouplingMode::Qdsb,
            ot_mode: OtMode::Entropic,
            cost_kind: CostKind::SqEuclidean,
            seed: 0,
            eval_every: 25,
            eval_points: 4096,
            em_steps: 100,
            rollout_batch: 2048,
            sim_mode: SimMode::Sde,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n0: usize, n1: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        for (name, value) in [
            ("batch_size", self.batch_size),
            ("refresh_epochs", self.refresh_epochs),
            ("eval_every", self.eval_every),
            ("em_steps", self.em_steps),
            ("rollout_batch", self.rollout_batch),
            ("anchors_k", self.anchors_k),
        ] {
            if value == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.eval_points < 2 {
            return bad("eval_points must be at least 2".into());
        }
        if self.coupling_mode == CouplingMode::Qdsb {
            if self.ot_mode == OtMode::Exact {
                return bad("exact ot is only available for minibatch-ot; the anchor plan is entropic".into());
            }
            if self.anchors_k > n0.min(n1) {
                return bad(format!("anchors_k = {} exceeds the cloud size {}", self.anchors_k, n0.min(n1)));
            }
        }
        Ok(())
    }

    /// Every field as `key = value` lines, in declaration order.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let fields: [(&str, String); 17] = [
            ("sigma", self.sigma.to_string()),
            ("tau", self.tau.to_string()),
            ("anchors_k", self.anchors_k.to_string()),
            ("refresh_epochs", self.refresh_epochs.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("coupling", self.coupling_mode.to_string()),
            ("ot_mode", self.ot_mode.to_string()),
            ("cost", self.cost_kind.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_points", self.eval_points.to_string()),
            ("em_steps", self.em_steps.to_string()),
            ("rollout_batch", self.rollout_batch.to_string()),
            ("sim_mode", self.sim_mode.to_string()),
        ];
        for (k, v) in fields {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Applies one `key = value` setting. Setting `sigma` also resets `tau`
    /// to `2σ²`; set `tau` afterwards to override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "sigma" => {
                self.sigma = num(key, value)?;
                self.tau = 2.0 * self.sigma * self.sigma;
            }
            "tau" => self.tau = num(key, value)?,
            "anchors_k" => self.anchors_k = num(key, value)?,
            "refresh_epochs" => self.refresh_epochs = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "coupling" => self.coupling_mode = value.parse()?,
            "ot_mode" => self.ot_mode = value.parse()?,
            "cost" => self.cost_kind = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_points" => self.eval_points = num(key, value)?,
            "em_steps" => self.em_steps = num(key, value)?,
            "rollout_batch" => self.rollout_batch = num(key, value)?,
            "sim_mode" => self.sim_mode = value.parse()?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            steps: self.em_steps,
            sigma: self.sigma,
            mode: self.sim_mode,
            seed: derive_seed(self.seed, STREAM_EVAL),
            batch: self.rollout_batch,
        }
    }
}

/// Wall clock that can be paused.
#[derive(Debug, Clone)]
pub struct Stopwatch {
    elapsed: Duration,
    started: Option<Instant>,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            elapsed: Duration::ZERO,
            started: Some(Instant::now()),
        }
    }

    pub fn pause(&mut self) {
        if let Some(s) = self.started.take() {
            self.elapsed += s.elapsed();
        }
    }

    pub fn resume(&mut self) {
        if self.started.is_none() {
            self.started = Some(Instant::now());
        }
    }

    pub fn is_running(&self) -> bool {
        self.started.is_some()
    }

    pub fn seconds(&self) -> f64 {
        let live = self.started.map_or(Duration::ZERO, |s| s.elapsed());
        (self.elapsed + live).as_secs_f64()
    }
}

/// Scores the current model. Receives the training clock, which is paused
/// for the duration of the call.
pub trait Evaluator {
    fn evaluate(&mut self, bundle: &ModelBundle, clock: &Stopwatch) -> Result<f64>;
}

/// Simulates a fixed source sample and compares it to a fixed target sample.
#[derive(Debug, Clone)]
pub struct MmdEvaluator {
    pub source: PointCloud,
    pub reference: MmdReference,
    pub sim: SimConfig,
}

impl MmdEvaluator {
    /// Uses the first `eval_points` rows of each cloud.
    pub fn new(source: &PointCloud, target: &PointCloud, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            source: source.head(config.eval_points),
            reference: MmdReference::new(target.head(config.eval_points))?,
            sim: config.sim_config(),
        })
    }

    pub fn score(&self, bundle: &ModelBundle) -> Result<f64> {
        let predicted = simulate(bundle, &self.source, &self.sim)?;
        self.reference.score(&predicted)
    }
}

impl Evaluator for MmdEvaluator {
    fn evaluate(&mut self, bundle: &ModelBundle, _clock: &Stopwatch) -> Result<f64> {
        self.score(bundle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_seconds: f64,
    pub mmd: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "epoch,train_seconds,mmd,loss";

impl MetricsLog {
    pub fn last_mmd(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mmd)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.16e},{:.16e}", r.epoch, r.train_seconds, r.mmd, r.loss).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: MetricsLog,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Coverage radii `(r0, r1)` of every anchor set built.
    pub anchor_radii: Vec<(f64, f64)>,
}

/// Quantizes both clouds from the given initial points and solves the anchor
/// plan.
pub fn build_anchor_sampler(
    source: &PointCloud,
    target: &PointCloud,
    k: usize,
    tau: f64,
    cost: CostKind,
    inits: (usize, usize),
) -> Result<CouplingSampler> {
    let q0 = assign_cells(source, &farthest_first_from(source, k, inits.0)?)?;
    let q1 = assign_cells(target, &farthest_first_from(target, k, inits.1)?)?;
    let plan = solve_anchor_plan(&q0, &q1, tau, cost)?;
    build_anchor_coupling(q0, q1, plan)
}

fn solve_anchor_plan(
    q0: &AnchorQuantization,
    q1: &AnchorQuantization,
    tau: f64,
    cost: CostKind,
) -> Result<crate::transport::TransportPlan> {
    let c = cost_matrix(&q0.anchors, &q1.anchors, cost)?;
    sinkhorn(c.view(), &q0.masses, &q1.masses, tau, SinkhornOptions::default())
}

/// Stateful training run; [`train`] drives it to completion.
pub struct Trainer<'a> {
    config: TrainConfig,
    source: &'a PointCloud,
    target: &'a PointCloud,
    bundle: ModelBundle,
    sampler: Option<CouplingSampler>,
    rng: ChaCha8Rng,
    refreshes: u64,
    steps: usize,
    anchor_radii: Vec<(f64, f64)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, source: &'a PointCloud, target: &'a PointCloud) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptyInput("training needs nonempty source and target"));
        }
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                got: target.dim(),
            });
        }
        config.validate(source.len(), target.len())?;
        let bundle = ModelBundle::new(source.dim(), config.sigma, derive_seed(config.seed, STREAM_INIT))?;
        let rng = rng_from_seed(derive_seed(config.seed, STREAM_STEPS));
        Ok(Self {
            config,
            source,
            target,
            bundle,
            sampler: None,
            rng,
            refreshes: 0,
            steps: 0,
            anchor_radii: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn sampler(&self) -> Option<&CouplingSampler> {
        self.sampler.as_ref()
    }

    /// Rebuilds both anchor sets from fresh seeded initial points and
    /// re-solves the plan. Model parameters are not touched.
    pub fn refresh_anchors(&mut self) -> Result<()> {
        let inits = anchor_inits(self.config.seed, self.refreshes, self.source.len(), self.target.len());
        self.refresh_anchors_from(inits)
    }

    pub fn refresh_anchors_from(&mut self, inits: (usize, usize)) -> Result<()> {
        let cfg = &self.config;
        let sampler = build_anchor_sampler(self.source, self.target, cfg.anchors_k, cfg.tau, cfg.cost_kind, inits)?;
        self.anchor_radii
            .push((sampler.quant0.coverage_radius, sampler.quant1.coverage_radius));
        self.sampler = Some(sampler);
        self.refreshes += 1;
        Ok(())
    }

    /// `batch_size` index pairs under the configured coupling.
    pub fn sample_pairs(&mut self) -> Result<Vec<Pair>> {
        let b = self.config.batch_size;
        match self.config.coupling_mode {
            CouplingMode::Qdsb => {
                if self.sampler.is_none() {
                    self.refresh_anchors()?;
                }
                let sampler = self.sampler.as_ref().expect("anchor sampler");
                Ok(sampler.sample_pairs_with(b, &mut self.rng))
            }
            CouplingMode::Independent => independent_pairs(self.source.len(), self.target.len(), b, &mut self.rng),
            CouplingMode::MinibatchOt => {
                let i0: Vec<usize> = (0..b).map(|_| self.rng.random_range(0..self.source.len())).collect();
                let i1: Vec<usize> = (0..b).map(|_| self.rng.random_range(0..self.target.len())).collect();
                let mode = match self.config.ot_mode {
                    OtMode::Exact => MinibatchMode::Exact,
                    OtMode::Entropic => MinibatchMode::Entropic(self.config.tau),
                };
                let local = minibatch_ot_pairs(
                    &self.source.select(&i0),
                    &self.target.select(&i1),
                    mode,
                    self.config.cost_kind,
                    &mut self.rng,
                )?;
                Ok(local.into_iter().map(|(a, b)| (i0[a], i1[b])).collect())
            }
        }
    }

    /// One optimizer step on a fresh batch; returns the batch-mean loss.
    pub fn step(&mut self) -> Result<f64> {
        let pairs = self.sample_pairs()?;
        let d = self.source.dim();
        let b = pairs.len();
        let sigma = self.config.sigma;
        let mut ts = Vec::with_capacity(b);
        let mut xs = Vec::with_capacity(b * d);
        let mut samples = Vec::with_capacity(b);
        for &(i, j) in &pairs {
            let s = BridgeSample::draw(self.source.row(i), self.target.row(j), sigma, &mut self.rng)?;
            ts.push(s.t);
            xs.extend_from_slice(&s.x);
            samples.push(s);
        }
        let v_cache = self.bundle.drift.forward_cached(&ts, &xs)?;
        let s_cache = self.bundle.score.forward_cached(&ts, &xs)?;
        let mut v_up = vec![0.0; b * d];
        let mut s_up = vec![0.0; b * d];
        let mut loss = 0.0;
        for (n, s) in samples.iter().enumerate() {
            let w = s.lam * s.lam;
            for k in 0..d {
                let dv = v_cache.output[n * d + k] - s.u_target[k];
                let ds = s_cache.output[n * d + k] - s.s_target[k];
                loss += dv * dv + w * ds * ds;
                v_up[n * d + k] = 2.0 * dv;
                s_up[n * d + k] = 2.0 * w * ds;
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: self.steps });
        }
        let gv = self.bundle.drift.backward(&v_cache, &v_up)?;
        let gs = self.bundle.score.backward(&s_cache, &s_up)?;
        let opt = self.config.optimizer();
        opt.step(self.bundle.drift.params_mut(), &gv, &mut self.bundle.drift_opt);
        opt.step(self.bundle.score.params_mut(), &gs, &mut self.bundle.score_opt);
        self.steps += 1;
        Ok(loss)
    }

    /// `ceil(n / batch_size)` steps; returns the mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let steps = self.source.len().div_ceil(self.config.batch_size);
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.step()?;
        }
        Ok(total / steps as f64)
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }
}

/// Farthest-first starting points of refresh number `refresh` (from zero)
/// for a run with training seed `seed`.
pub fn anchor_inits(seed: u64, refresh: u64, n0: usize, n1: usize) -> (usize, usize) {
    let mut rng = rng_from_seed(derive_seed(seed, STREAM_ANCHORS + refresh));
    (rng.random_range(0..n0), rng.random_range(0..n1))
}

/// Runs the full schedule, evaluating on the training clouds.
pub fn train(config: &TrainConfig, source: &PointCloud, target: &PointCloud) -> Result<TrainOutcome> {
    config.validate(source.len(), target.len())?;
    let mut evaluator = MmdEvaluator::new(source, target, config)?;
    train_with(config, source, target, &mut evaluator)
}

/// Runs the full schedule with a caller-supplied evaluator. Anchor and plan
/// construction count as training time; evaluation does not.
pub fn train_with(
    config: &TrainConfig,
    source: &PointCloud,
    target: &PointCloud,
    evaluator: &mut dyn Evaluator,
) -> Result<TrainOutcome> {
    let mut clock = Stopwatch::start();
    let mut trainer = Trainer::new(config.clone(), source, target)?;
    let mut metrics = MetricsLog::default();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if config.coupling_mode == CouplingMode::Qdsb && (epoch - 1) % config.refresh_epochs == 0 {
            trainer.refresh_anchors()?;
        }
        let loss = trainer.run_epoch()?;
        epoch_losses.push(loss);
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            clock.pause();
            let mmd = evaluator.evaluate(trainer.bundle(), &clock)?;
            metrics.rows.push(MetricsRow {
                epoch,
                train_seconds: clock.seconds(),
                mmd,
                loss,
            });
            clock.resume();
        }
    }
    let anchor_radii = trainer.anchor_radii.clone();
    Ok(TrainOutcome {
        bundle: trainer.into_bundle(),
        metrics,
        epoch_losses,
        anchor_radii,
    })
}
