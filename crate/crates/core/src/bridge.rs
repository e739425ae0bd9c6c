//! Brownian-bridge supervision.
//!
//! Conditioned on endpoints `(x0, x1)`, the scaled Brownian bridge `σB` has
//! time-`t` marginal `N(μ_t, σ² t(1−t) I)` with `μ_t = t·x1 + (1−t)·x0`. The
//! regression targets are
//!
//! ```text
//! u_t(x | x0, x1) = (1 − 2t) / (t(1 − t)) · (x − μ_t) + (x1 − x0)
//! ∇ log p_t(x | x0, x1) = (μ_t − x) / (σ² t(1 − t))
//! ```
//!
//! and the per-sample loss is `‖v − u‖² + λ(t)² ‖s − ∇ log p‖²` with
//! `λ(t) = σ √(t(1−t))`, under which `λ · ∇ log p` is exactly the negated
//! standard normal draw that produced `x`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Sampled times are clamped to `[T_MIN, 1 − T_MIN]`.
pub const T_MIN: f64 = 1e-3;

fn check_open_time(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Uniform time in `[0, 1)` clamped to `[T_MIN, 1 − T_MIN]`.
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>().clamp(T_MIN, 1.0 - T_MIN)
}

/// `μ_t = t·x1 + (1−t)·x0`.
pub fn bridge_mean(x0: &[f64], x1: &[f64], t: f64) -> Vec<f64> {
    x0.iter().zip(x1).map(|(a, b)| t * b + (1.0 - t) * a).collect()
}

/// `μ_t + σ √(t(1−t)) ξ` for a given standard normal vector `xi`.
pub fn bridge_point_from_noise(x0: &[f64], x1: &[f64], t: f64, sigma: f64, xi: &[f64]) -> Result<Vec<f64>> {
    check_open_time(t)?;
    check_dims(x0, x1)?;
    check_dims(x0, xi)?;
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    let scale = sigma * (t * (1.0 - t)).sqrt();
    Ok(bridge_mean(x0, x1, t)
        .into_iter()
        .zip(xi)
        .map(|(m, z)| m + scale * z)
        .collect())
}

/// Draws `x ∼ p_t(x | x0, x1)`; `σ = 0` returns the mean exactly.
pub fn sample_bridge_point<R: Rng + ?Sized>(x0: &[f64], x1: &[f64], t: f64, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_open_time(t)?;
    if sigma == 0.0 {
        check_dims(x0, x1)?;
        return Ok(bridge_mean(x0, x1, t));
    }
    let xi: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    bridge_point_from_noise(x0, x1, t, sigma, &xi)
}

pub fn drift_target(x: &[f64], x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    check_open_time(t)?;
    check_dims(x0, x1)?;
    check_dims(x0, x)?;
    let coef = (1.0 - 2.0 * t) / (t * (1.0 - t));
    Ok((0..x.len())
        .map(|k| {
            let mean = t * x1[k] + (1.0 - t) * x0[k];
            coef * (x[k] - mean) + (x1[k] - x0[k])
        })
        .collect())
}

pub fn score_target(x: &[f64], x0: &[f64], x1: &[f64], t: f64, sigma: f64) -> Result<Vec<f64>> {
    check_open_time(t)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    check_dims(x0, x1)?;
    check_dims(x0, x)?;
    let denom = sigma * sigma * t * (1.0 - t);
    Ok((0..x.len())
        .map(|k| (t * x1[k] + (1.0 - t) * x0[k] - x[k]) / denom)
        .collect())
}

/// `λ(t) = σ √(t(1−t))`.
pub fn lambda_weight(t: f64, sigma: f64) -> Result<f64> {
    check_open_time(t)?;
    Ok(sigma * (t * (1.0 - t)).sqrt())
}

/// One supervised tuple for the bridge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample {
    pub t: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub x: Vec<f64>,
    pub u_target: Vec<f64>,
    pub s_target: Vec<f64>,
    pub lam: f64,
    pub sigma: f64,
}

impl BridgeSample {
    /// Builds the tuple at time `t` from the noise `xi` used for `x`.
    pub fn from_noise(x0: &[f64], x1: &[f64], t: f64, sigma: f64, xi: &[f64]) -> Result<Self> {
        let x = bridge_point_from_noise(x0, x1, t, sigma, xi)?;
        Self::at(x0, x1, x, t, sigma)
    }

    /// Samples `t` (clamped) and `x`, then the targets.
    pub fn draw<R: Rng + ?Sized>(x0: &[f64], x1: &[f64], sigma: f64, rng: &mut R) -> Result<Self> {
        let t = sample_time(rng);
        let xi: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
        Self::from_noise(x0, x1, t, sigma, &xi)
    }

    pub fn at(x0: &[f64], x1: &[f64], x: Vec<f64>, t: f64, sigma: f64) -> Result<Self> {
        let u_target = drift_target(&x, x0, x1, t)?;
        let s_target = score_target(&x, x0, x1, t, sigma)?;
        Ok(Self {
            t,
            x0: x0.to_vec(),
            x1: x1.to_vec(),
            x,
            u_target,
            s_target,
            lam: lambda_weight(t, sigma)?,
            sigma,
        })
    }
}

/// Loss terms of one sample against network predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub drift: f64,
    pub score: f64,
    pub total: f64,
}

pub fn loss_terms(v_pred: &[f64], s_pred: &[f64], sample: &BridgeSample) -> Result<LossTerms> {
    check_dims(&sample.u_target, v_pred)?;
    check_dims(&sample.s_target, s_pred)?;
    let drift: f64 = v_pred.iter().zip(&sample.u_target).map(|(a, b)| (a - b) * (a - b)).sum();
    let sq: f64 = s_pred.iter().zip(&sample.s_target).map(|(a, b)| (a - b) * (a - b)).sum();
    let score = sample.lam * sample.lam * sq;
    Ok(LossTerms {
        drift,
        score,
        total: drift + score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn log_density(x: &[f64], x0: &[f64], x1: &[f64], t: f64, sigma: f64) -> f64 {
        let var = sigma * sigma * t * (1.0 - t);
        let mean = bridge_mean(x0, x1, t);
        let sq: f64 = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * sq / var - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
    }

    fn fd_score(x: &[f64], x0: &[f64], x1: &[f64], t: f64, sigma: f64, h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[k] += h;
                m[k] -= h;
                (log_density(&p, x0, x1, t, sigma) - log_density(&m, x0, x1, t, sigma)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn noiseless_bridge_is_interpolant() {
        let mut rng = rng_from_seed(0);
        let x0 = [0.5, -1.0];
        let x1 = [2.0, 3.0];
        for t in [0.1, 0.5, 0.9] {
            assert_eq!(sample_bridge_point(&x0, &x1, t, 0.0, &mut rng).unwrap(), bridge_mean(&x0, &x1, t));
        }
        assert_eq!(sample_bridge_point(&[0.0], &[2.0], 0.5, 0.0, &mut rng).unwrap(), vec![1.0]);
        assert!(matches!(
            sample_bridge_point(&[0.0], &[2.0], 1.0, 0.0, &mut rng),
            Err(Error::TimeOutOfRange(_))
        ));
    }

    #[test]
    fn bridge_moments() {
        let mut rng = rng_from_seed(1);
        let n = 100_000;
        let x0 = [0.0, 1.0];
        let x1 = [2.0, -1.0];
        let t = 0.3;
        let sigma = 0.7;
        let var = sigma * sigma * t * (1.0 - t);
        let samples: Vec<Vec<f64>> = (0..n).map(|_| sample_bridge_point(&x0, &x1, t, sigma, &mut rng).unwrap()).collect();
        let mean = bridge_mean(&x0, &x1, t);
        for k in 0..2 {
            let m = samples.iter().map(|s| s[k]).sum::<f64>() / n as f64;
            assert!((m - mean[k]).abs() < 3.0 * (var / n as f64).sqrt());
            let v = samples.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            // Var of the sample variance is 2σ⁴/(n−1) for Gaussians.
            assert!((v - var).abs() < 3.0 * var * (2.0 / (n - 1) as f64).sqrt());
        }
        let cov = samples.iter().map(|s| (s[0] - mean[0]) * (s[1] - mean[1])).sum::<f64>() / n as f64;
        assert!(cov.abs() < 3.0 * var / (n as f64).sqrt());
    }

    #[test]
    fn midpoint_variance() {
        let mut rng = rng_from_seed(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_bridge_point(&[0.0], &[0.0], 0.5, 1.0, &mut rng).unwrap()[0]).collect();
        let v = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((v - 0.25).abs() < 0.03 * 0.25);
    }

    #[test]
    fn drift_examples() {
        let x0 = [0.3, -0.2];
        let x1 = [1.5, 2.0];
        for t in [0.1, 0.37, 0.8] {
            let mean = bridge_mean(&x0, &x1, t);
            let u = drift_target(&mean, &x0, &x1, t).unwrap();
            for k in 0..2 {
                assert!((u[k] - (x1[k] - x0[k])).abs() < 1e-12);
            }
        }
        let u = drift_target(&[9.0, -4.0], &x0, &x1, 0.5).unwrap();
        assert_eq!(u, vec![x1[0] - x0[0], x1[1] - x0[1]]);
        let u = drift_target(&[1.0], &[0.0], &[0.0], 0.25).unwrap();
        assert!((u[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!(drift_target(&[1.0], &[0.0], &[0.0], 0.0).is_err());
        assert!(drift_target(&[1.0], &[0.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn drift_transports_deviation() {
        // Along x(t) = μ_t + c·t(1−t) the ODE dx/dt = u_t(x) holds exactly,
        // which pins the deviation coefficient. Central differences confirm.
        let x0 = [0.4];
        let x1 = [-1.1];
        let c = 0.7;
        let path = |t: f64| bridge_mean(&x0, &x1, t)[0] + c * t * (1.0 - t);
        let h = 1e-6;
        for t in [0.2, 0.25, 0.6] {
            let fd = (path(t + h) - path(t - h)) / (2.0 * h);
            let u = drift_target(&[path(t)], &x0, &x1, t).unwrap()[0];
            assert!((fd - u).abs() < 1e-6, "t={t}: {fd} vs {u}");
        }
    }

    #[test]
    fn score_examples() {
        let x0 = [0.3, -0.2];
        let x1 = [1.5, 2.0];
        let mean = bridge_mean(&x0, &x1, 0.4);
        assert!(score_target(&mean, &x0, &x1, 0.4, 0.5).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(score_target(&[0.5], &[0.0], &[0.0], 0.5, 1.0).unwrap(), vec![-2.0]);
        assert!(matches!(score_target(&[0.5], &[0.0], &[0.0], 0.5, 0.0), Err(Error::InvalidSigma(_))));
        assert!(score_target(&[0.5], &[0.0], &[0.0], 0.0, 1.0).is_err());

        let x = [0.9, 0.1];
        let s = score_target(&x, &x0, &x1, 0.4, 0.5).unwrap();
        let fd = fd_score(&x, &x0, &x1, 0.4, 0.5, 1e-5);
        for k in 0..2 {
            assert!((s[k] - fd[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_weight(0.5, 0.25).unwrap(), 0.125);
        assert!((lambda_weight(T_MIN, 1.0).unwrap() - 0.031607).abs() < 1e-6);
        assert!(lambda_weight(0.0, 1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let s = BridgeSample::from_noise(&[0.0, 1.0], &[1.0, -1.0], 0.3, 0.25, &[0.4, -1.2]).unwrap();
        let zero = loss_terms(&s.u_target, &s.s_target, &s).unwrap();
        assert_eq!((zero.drift, zero.score, zero.total), (0.0, 0.0, 0.0));

        let mut v = s.u_target.clone();
        v[0] += 1.0;
        assert!((loss_terms(&v, &s.s_target, &s).unwrap().drift - 1.0).abs() < 1e-12);

        let mut sp = s.s_target.clone();
        sp[0] += 1.0 / s.lam;
        assert!((loss_terms(&s.u_target, &sp, &s).unwrap().score - 1.0).abs() < 1e-12);

        assert!(matches!(loss_terms(&[0.0], &s.s_target, &s), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn sample_identities(
            x0 in prop::collection::vec(-4.0f64..4.0, 3),
            x1 in prop::collection::vec(-4.0f64..4.0, 3),
            xi in prop::collection::vec(-3.0f64..3.0, 3),
            t in T_MIN..(1.0 - T_MIN),
            sigma in 0.05f64..2.0,
        ) {
            let s = BridgeSample::from_noise(&x0, &x1, t, sigma, &xi).unwrap();
            // Recomputed targets are bit-identical.
            prop_assert_eq!(&s.u_target, &drift_target(&s.x, &x0, &x1, t).unwrap());
            prop_assert_eq!(&s.s_target, &score_target(&s.x, &x0, &x1, t, sigma).unwrap());
            // λ·s recovers −ξ.
            let mut sq = 0.0;
            for k in 0..3 {
                prop_assert!((s.lam * s.s_target[k] + xi[k]).abs() < 1e-9);
                sq += (s.lam * s.s_target[k]).powi(2);
            }
            let xi_sq: f64 = xi.iter().map(|v| v * v).sum();
            prop_assert!((sq - xi_sq).abs() < 1e-6 * (1.0 + xi_sq));
        }

        #[test]
        fn score_matches_finite_differences(
            x0 in prop::collection::vec(-2.0f64..2.0, 2),
            x1 in prop::collection::vec(-2.0f64..2.0, 2),
            x in prop::collection::vec(-2.0f64..2.0, 2),
            t in 0.05f64..0.95,
            sigma in 0.3f64..2.0,
        ) {
            let s = score_target(&x, &x0, &x1, t, sigma).unwrap();
            let fd = fd_score(&x, &x0, &x1, t, sigma, 1e-5);
            for k in 0..2 {
                let rel = (s[k] - fd[k]).abs() / s[k].abs().max(1.0);
                prop_assert!(rel < 1e-4, "{} vs {}", s[k], fd[k]);
            }
        }
    }
}
