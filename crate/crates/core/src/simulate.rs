//! Forward integration of learned dynamics from source samples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::datasets::PointCloud;
use crate::model::ModelBundle;
use crate::rng::{derive_seed, rng_from_seed, ChaCha8Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    /// `dX = [v + (σ²/2) s] dt + σ dB` by Euler–Maruyama.
    #[default]
    Sde,
    /// `dX = v dt` by forward Euler.
    Ode,
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sde" => Ok(Self::Sde),
            "ode" => Ok(Self::Ode),
            other => Err(Error::InvalidArgument(format!("unknown simulation mode {other:?} (expected sde or ode)"))),
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sde => "sde",
            Self::Ode => "ode",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Steps per unit time.
    pub steps: usize,
    pub sigma: f64,
    pub mode: SimMode,
    pub seed: u64,
    /// Trajectories evaluated together per network call.
    pub batch: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            sigma: 0.25,
            mode: SimMode::Sde,
            seed: 0,
            batch: 2048,
        }
    }
}

/// Drift and score fields evaluated on a batch of states at a common time.
pub trait Dynamics {
    fn dim(&self) -> usize;

    /// Fills `v` and `s` (both `m × d`) for the `m × d` states `xs`.
    fn fields(&self, t: f64, xs: &[f64], v: &mut [f64], s: &mut [f64]);
}

impl Dynamics for ModelBundle {
    fn dim(&self) -> usize {
        ModelBundle::dim(self)
    }

    fn fields(&self, t: f64, xs: &[f64], v: &mut [f64], s: &mut [f64]) {
        let ts = vec![t; xs.len() / self.dim()];
        self.drift.forward_batch_into(&ts, xs, v);
        self.score.forward_batch_into(&ts, xs, s);
    }
}

/// Integrates every row of `x0` over `[0, 1]`. Trajectory `i` draws its noise
/// from its own stream derived from `(seed, i)`, so the result does not depend
/// on the batch size.
pub fn simulate<D: Dynamics + ?Sized>(dynamics: &D, x0: &PointCloud, cfg: &SimConfig) -> Result<PointCloud> {
    let d = x0.dim();
    if d != dynamics.dim() {
        return Err(Error::DimensionMismatch {
            expected: dynamics.dim(),
            got: d,
        });
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("simulation needs at least one step".into()));
    }
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::InvalidSigma(cfg.sigma));
    }
    let batch = cfg.batch.max(1);
    let mut out = Vec::with_capacity(x0.len() * d);
    for start in (0..x0.len()).step_by(batch) {
        let end = (start + batch).min(x0.len());
        let mut xs = x0.as_flat()[start * d..end * d].to_vec();
        let rngs: Vec<ChaCha8Rng> = (start..end)
            .map(|i| rng_from_seed(derive_seed(cfg.seed, i as u64)))
            .collect();
        integrate(dynamics, &mut xs, rngs, cfg)?;
        out.extend_from_slice(&xs);
    }
    PointCloud::from_flat(out, d)
}

fn integrate<D: Dynamics + ?Sized>(dynamics: &D, xs: &mut [f64], mut rngs: Vec<ChaCha8Rng>, cfg: &SimConfig) -> Result<()> {
    let d = dynamics.dim();
    let dt = 1.0 / cfg.steps as f64;
    let sqrt_dt = dt.sqrt();
    let half_var = 0.5 * cfg.sigma * cfg.sigma;
    let mut v = vec![0.0; xs.len()];
    let mut s = vec![0.0; xs.len()];
    for step in 0..cfg.steps {
        let t = step as f64 * dt;
        dynamics.fields(t, xs, &mut v, &mut s);
        match cfg.mode {
            SimMode::Ode => {
                for (x, vi) in xs.iter_mut().zip(&v) {
                    *x += vi * dt;
                }
            }
            SimMode::Sde => {
                for (row, rng) in rngs.iter_mut().enumerate() {
                    for k in row * d..(row + 1) * d {
                        let drift = v[k] + half_var * s[k];
                        xs[k] += drift * dt;
                        if cfg.sigma > 0.0 {
                            let z: f64 = rng.sample(StandardNormal);
                            xs[k] += cfg.sigma * sqrt_dt * z;
                        }
                    }
                }
            }
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step });
        }
    }
    Ok(())
}
