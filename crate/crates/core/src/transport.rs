//! Entropic optimal transport between weighted discrete measures, and an
//! exact assignment solver for uniform measures of equal size.
//!
//! The entropic problem is
//!
//! ```text
//! min_{π ∈ Π(μ, ν)}  Σ_ij π_ij C_ij + τ · KL(π ‖ μ ⊗ ν)
//! ```
//!
//! solved by Sinkhorn iterations on the dual potentials `(f, g)` in the log
//! domain, where `π_ij = μ_i ν_j exp((f_i + g_j − C_ij) / τ)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::anchors::{AnchorQuantization, QuantExponent};
use crate::datasets::{sq_dist, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    Euclidean,
    #[default]
    SqEuclidean,
}

impl CostKind {
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Self::Euclidean => sq_dist(a, b).sqrt(),
            Self::SqEuclidean => sq_dist(a, b),
        }
    }
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "sqeuclidean" => Ok(Self::SqEuclidean),
            other => Err(Error::InvalidArgument(format!("unknown cost kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::SqEuclidean => "sqeuclidean",
        })
    }
}

/// A coupling between `mu` (rows) and `nu` (columns).
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Zero for unregularized plans.
    pub tau: f64,
    /// `Σ π_ij C_ij`.
    pub cost_value: f64,
    /// `cost_value + τ · KL(π ‖ μ ⊗ ν)`.
    pub entropic_value: f64,
    /// Sinkhorn iterations used (0 for exact plans).
    pub iterations: usize,
}

impl TransportPlan {
    pub fn kl_to_product(&self) -> f64 {
        kl_to_product(self.plan.view(), &self.mu, &self.nu)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.plan.sum_axis(Axis(0)).to_vec()
    }

    /// `max(‖rowsum − μ‖₁, ‖colsum − ν‖₁)`.
    pub fn marginal_violation(&self) -> f64 {
        let rows = l1_diff(&self.row_sums(), &self.mu);
        let cols = l1_diff(&self.col_sums(), &self.nu);
        rows.max(cols)
    }

    /// `i<TAB>j<TAB>mass` for entries above `1e-15`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ((i, j), &m) in self.plan.indexed_iter() {
            if m > 1e-15 {
                writeln!(out, "{i}\t{j}\t{m:.16e}").expect("write to String");
            }
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `KL(π ‖ μ ⊗ ν)` with `0 log 0 = 0`.
pub fn kl_to_product(plan: ArrayView2<'_, f64>, mu: &[f64], nu: &[f64]) -> f64 {
    let mut kl = 0.0;
    for ((i, j), &p) in plan.indexed_iter() {
        if p > 0.0 {
            kl += p * (p / (mu[i] * nu[j])).ln();
        }
    }
    kl
}

/// Objective `Σ π C + τ KL(π ‖ μ ⊗ ν)` of an arbitrary plan.
pub fn entropic_objective(
    plan: ArrayView2<'_, f64>,
    cost: ArrayView2<'_, f64>,
    mu: &[f64],
    nu: &[f64],
    tau: f64,
) -> f64 {
    let c: f64 = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    c + tau * kl_to_product(plan, mu, nu)
}

/// Pairwise costs between the rows of `a` and `b`.
pub fn cost_matrix(a: &PointCloud, b: &PointCloud, kind: CostKind) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(Array2::from_shape_fn((a.len(), b.len()), |(i, j)| {
        kind.eval(a.row(i), b.row(j))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Stop once the L1 row-marginal violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

fn check_marginal(m: &[f64]) -> Result<()> {
    let sum: f64 = m.iter().sum();
    if m.is_empty() || m.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || (sum - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(sum));
    }
    Ok(())
}

/// Log-sum-exp of `values`, overwriting them with `exp(v - max)`.
fn log_sum_exp_in_place(values: &mut [f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    max + sum.ln()
}

/// Loose marginal tolerance for the intermediate annealing stages.
const STAGE_TOL: f64 = 1e-3;
/// Ratio between successive annealing temperatures.
const ANNEAL_FACTOR: f64 = 0.5;
const STAGE_ITERS: usize = 500;
/// Plain iterations at the target `τ` before switching to Newton steps.
const NEWTON_AFTER: usize = 500;

/// Entropic OT by log-domain Sinkhorn.
///
/// When the cost range exceeds `τ`, the regularization is annealed
/// geometrically from the cost range down to `τ`, each stage warm-starting
/// from the previous potentials and stopping at a loose tolerance; the final
/// stage runs at `τ` to `opts.tol`, finishing with Newton steps on the row
/// potentials if plain iterations stall, and with plain iterations again if
/// Newton stops making progress. `opts.max_iter` bounds the total
/// count of iterations and Newton steps.
///
/// Each iteration updates `f` (rows exact) then `g` (columns exact); the row
/// sums of the current plan fall out of the next `f` update, so convergence
/// is tested without an extra pass. The returned plan is rounded onto the
/// exact marginals.
pub fn sinkhorn(
    cost: ArrayView2<'_, f64>,
    mu: &[f64],
    nu: &[f64],
    tau: f64,
    opts: SinkhornOptions,
) -> Result<TransportPlan> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidRegularization(tau));
    }
    let (k0, k1) = cost.dim();
    if mu.len() != k0 || nu.len() != k1 {
        return Err(Error::SizeMismatch {
            left: mu.len() * nu.len(),
            right: k0 * k1,
        });
    }
    check_marginal(mu)?;
    check_marginal(nu)?;

    let mut solver = LogSinkhorn::new(cost, mu, nu);
    let range = cost.iter().copied().fold(f64::NEG_INFINITY, f64::max) - cost.iter().copied().fold(f64::INFINITY, f64::min);
    let mut stages = Vec::new();
    let mut t = range;
    while t > tau {
        stages.push(t);
        t *= ANNEAL_FACTOR;
    }
    let mut current = tau;
    let mut iterations = 0;
    for stage in stages {
        solver.rescale(current, stage);
        current = stage;
        solver.run(stage, STAGE_TOL.max(opts.tol), STAGE_ITERS, opts.max_iter, &mut iterations)?;
    }
    solver.rescale(current, tau);
    if !solver.run(tau, opts.tol, NEWTON_AFTER, opts.max_iter, &mut iterations)?
        && !solver.newton(tau, opts.tol, opts.max_iter, &mut iterations)?
    {
        solver.run(tau, opts.tol, usize::MAX, opts.max_iter, &mut iterations)?;
    }

    let scaled = &solver.cost;
    let (f, g) = (&solver.f, &solver.g);
    let mut plan = Array2::from_shape_fn((k0, k1), |(i, j)| {
        (solver.log_mu[i] + solver.log_nu[j] + f[i] + g[j] - scaled[i * k1 + j] / tau).exp()
    });
    round_to_marginals(&mut plan, mu, nu);
    Ok(finish_plan(plan, cost, mu, nu, tau, iterations))
}

/// Potentials (divided by the current `τ`) and cost buffers.
struct LogSinkhorn<'a> {
    mu: &'a [f64],
    log_mu: Vec<f64>,
    log_nu: Vec<f64>,
    /// Row-major costs and their transpose.
    cost: Vec<f64>,
    cost_t: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> LogSinkhorn<'a> {
    fn new(cost: ArrayView2<'_, f64>, mu: &'a [f64], nu: &[f64]) -> Self {
        let (k0, k1) = cost.dim();
        let flat: Vec<f64> = cost.iter().copied().collect();
        let mut cost_t = vec![0.0; k0 * k1];
        for i in 0..k0 {
            for j in 0..k1 {
                cost_t[j * k0 + i] = flat[i * k1 + j];
            }
        }
        Self {
            mu,
            log_mu: mu.iter().map(|m| m.ln()).collect(),
            log_nu: nu.iter().map(|m| m.ln()).collect(),
            cost: flat,
            cost_t,
            f: vec![0.0; k0],
            g: vec![0.0; k1],
        }
    }

    /// Keeps the unscaled potentials fixed while `τ` changes.
    fn rescale(&mut self, from: f64, to: f64) {
        let r = from / to;
        self.f.iter_mut().chain(self.g.iter_mut()).for_each(|v| *v *= r);
    }

    /// Plain iterations until `tol` (returns `true`) or `local_cap` (returns
    /// `false`). Exhausting the global budget is an error.
    fn run(&mut self, tau: f64, tol: f64, local_cap: usize, max_iter: usize, iterations: &mut usize) -> Result<bool> {
        let (k0, k1) = (self.f.len(), self.g.len());
        let inv = 1.0 / tau;
        let mut row_buf = vec![0.0; k1];
        let mut col_buf = vec![0.0; k0];
        let mut new_f = vec![0.0; k0];
        let mut local = 0;
        loop {
            let mut violation = 0.0;
            for i in 0..k0 {
                let c = &self.cost[i * k1..(i + 1) * k1];
                for j in 0..k1 {
                    row_buf[j] = self.log_nu[j] + self.g[j] - c[j] * inv;
                }
                let lse = log_sum_exp_in_place(&mut row_buf);
                violation += self.mu[i] * ((self.f[i] + lse).exp() - 1.0).abs();
                new_f[i] = -lse;
            }
            if violation.is_nan() {
                return Err(Error::NotConverged {
                    iterations: *iterations,
                    violation,
                });
            }
            // After a g update the columns are exact, so the row violation is
            // the full marginal violation of the current plan.
            if local > 0 && violation < tol {
                return Ok(true);
            }
            if local >= local_cap {
                return Ok(false);
            }
            if *iterations >= max_iter {
                return Err(Error::NotConverged {
                    iterations: *iterations,
                    violation,
                });
            }
            std::mem::swap(&mut self.f, &mut new_f);
            for j in 0..k1 {
                let c = &self.cost_t[j * k0..(j + 1) * k0];
                for i in 0..k0 {
                    col_buf[i] = self.log_mu[i] + self.f[i] - c[i] * inv;
                }
                self.g[j] = -log_sum_exp_in_place(&mut col_buf);
            }
            local += 1;
            *iterations += 1;
        }
    }

    /// Column-exact `g` for the current `f`.
    fn update_g(&mut self, inv: f64) {
        let k0 = self.f.len();
        let mut col_buf = vec![0.0; k0];
        for j in 0..self.g.len() {
            let c = &self.cost_t[j * k0..(j + 1) * k0];
            for i in 0..k0 {
                col_buf[i] = self.log_mu[i] + self.f[i] - c[i] * inv;
            }
            self.g[j] = -log_sum_exp_in_place(&mut col_buf);
        }
    }

    /// Current plan (row-major), its row sums, the row-marginal L1
    /// violation and the squared L2 residual.
    fn plan_and_violation(&self, inv: f64) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let (k0, k1) = (self.f.len(), self.g.len());
        let mut p = vec![0.0; k0 * k1];
        let mut rows = vec![0.0; k0];
        for i in 0..k0 {
            let base = self.log_mu[i] + self.f[i];
            let c = &self.cost[i * k1..(i + 1) * k1];
            let row = &mut p[i * k1..(i + 1) * k1];
            for j in 0..k1 {
                row[j] = (base + self.log_nu[j] + self.g[j] - c[j] * inv).exp();
            }
            rows[i] = row.iter().sum();
        }
        let violation = rows.iter().zip(self.mu).map(|(r, m)| (r - m).abs()).sum();
        let merit = rows.iter().zip(self.mu).map(|(r, m)| (r - m) * (r - m)).sum();
        (p, rows, violation, merit)
    }

    /// Newton steps on `f` with `g` eliminated (columns kept exact). The
    /// row-sum Jacobian is `diag(r) − P diag(1/ν) Pᵀ`, symmetric positive
    /// semidefinite with the constants as null space; each step solves it by
    /// conjugate gradients and backtracks until the squared residual drops.
    /// Returns `false` if no step makes progress.
    fn newton(&mut self, tau: f64, tol: f64, max_iter: usize, iterations: &mut usize) -> Result<bool> {
        let inv = 1.0 / tau;
        let (k0, k1) = (self.f.len(), self.g.len());
        let nu: Vec<f64> = self.log_nu.iter().map(|l| l.exp()).collect();
        self.update_g(inv);
        let (mut p, mut rows, mut violation, mut merit) = self.plan_and_violation(inv);
        loop {
            if violation < tol {
                return Ok(true);
            }
            if *iterations >= max_iter || violation.is_nan() {
                return Err(Error::NotConverged {
                    iterations: *iterations,
                    violation,
                });
            }
            let residual: Vec<f64> = rows.iter().zip(self.mu).map(|(r, m)| m - r).collect();
            let apply = |v: &[f64], out: &mut [f64]| {
                let mut pt = vec![0.0; k1];
                for i in 0..k0 {
                    let row = &p[i * k1..(i + 1) * k1];
                    for j in 0..k1 {
                        pt[j] += row[j] * v[i];
                    }
                }
                for (x, n) in pt.iter_mut().zip(&nu) {
                    *x /= n;
                }
                for i in 0..k0 {
                    let row = &p[i * k1..(i + 1) * k1];
                    let back: f64 = row.iter().zip(&pt).map(|(a, b)| a * b).sum();
                    out[i] = rows[i] * v[i] - back;
                }
            };
            let step = conjugate_gradient(apply, &residual, 4 * k0.max(1));
            let f0 = self.f.clone();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                for i in 0..k0 {
                    self.f[i] = f0[i] + alpha * step[i];
                }
                self.update_g(inv);
                let (np, nr, nv, nm) = self.plan_and_violation(inv);
                if nm < merit {
                    (p, rows, violation, merit) = (np, nr, nv, nm);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            *iterations += 1;
            if !accepted {
                self.f = f0;
                self.update_g(inv);
                return Ok(false);
            }
        }
    }
}

/// Solves `A x = b` for a symmetric positive semidefinite `A` given as a
/// product, with `b` in its range.
fn conjugate_gradient(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut ad = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let stop = rr * 1e-28;
    for _ in 0..max_iter {
        if rr <= stop || rr == 0.0 {
            break;
        }
        apply(&d, &mut ad);
        let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
        if !(dad > 0.0) {
            break;
        }
        let alpha = rr / dad;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
        rr = rr_new;
    }
    x
}

fn finish_plan(
    plan: Array2<f64>,
    cost: ArrayView2<'_, f64>,
    mu: &[f64],
    nu: &[f64],
    tau: f64,
    iterations: usize,
) -> TransportPlan {
    let cost_value: f64 = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    let kl = if tau > 0.0 {
        kl_to_product(plan.view(), mu, nu)
    } else {
        0.0
    };
    TransportPlan {
        plan,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        tau,
        cost_value,
        entropic_value: cost_value + tau * kl,
        iterations,
    }
}

/// Rounds a near-feasible nonnegative plan onto `Π(μ, ν)`: shrink rows that
/// exceed `μ`, shrink columns that exceed `ν`, then spread the remaining row
/// and column deficits as a rank-one correction.
pub fn round_to_marginals(plan: &mut Array2<f64>, mu: &[f64], nu: &[f64]) {
    for (mut row, &m) in plan.axis_iter_mut(Axis(0)).zip(mu) {
        let s = row.sum();
        if s > m {
            row.mapv_inplace(|v| v * (m / s));
        }
    }
    for (mut col, &m) in plan.axis_iter_mut(Axis(1)).zip(nu) {
        let s = col.sum();
        if s > m {
            col.mapv_inplace(|v| v * (m / s));
        }
    }
    let err_r: Vec<f64> = plan
        .sum_axis(Axis(1))
        .iter()
        .zip(mu)
        .map(|(s, m)| (m - s).max(0.0))
        .collect();
    let err_c: Vec<f64> = plan
        .sum_axis(Axis(0))
        .iter()
        .zip(nu)
        .map(|(s, m)| (m - s).max(0.0))
        .collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for ((i, j), v) in plan.indexed_iter_mut() {
            *v += err_r[i] * err_c[j] / total;
        }
    }
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns `perm` with row `i` matched to column
/// `perm[i]`.
pub fn min_cost_assignment(cost: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::SizeMismatch { left: n, right: m });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_v = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        min_v.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return Err(Error::InvalidArgument(
                    "assignment cost matrix contains non-finite entries".into(),
                ));
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Optimal assignment between two equal-size clouds, returning the matching
/// and its mean cost.
pub fn exact_assignment(x: &PointCloud, y: &PointCloud, kind: CostKind) -> Result<(Vec<usize>, f64)> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("assignment needs at least one point"));
    }
    let cost = cost_matrix(x, y, kind)?;
    let perm = min_cost_assignment(cost.view())?;
    let mean = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>() / x.len() as f64;
    Ok((perm, mean))
}

/// Unregularized OT between the uniform empirical measures on `x` and `y`;
/// the plan is the optimal permutation scaled by `1/n`.
pub fn exact_assignment_ot(x: &PointCloud, y: &PointCloud, kind: CostKind) -> Result<TransportPlan> {
    let (perm, _) = exact_assignment(x, y, kind)?;
    let n = x.len();
    let w = 1.0 / n as f64;
    let mut plan = Array2::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        plan[[i, j]] = w;
    }
    let cost = cost_matrix(x, y, kind)?;
    let uniform = vec![w; n];
    Ok(finish_plan(plan, cost.view(), &uniform, &uniform, 0.0, 0))
}

/// `W_a` between two uniform clouds of equal size, exactly, by assignment on
/// the cost `|x − y|^a`. `a = Max` is not supported.
pub fn wasserstein_uniform(x: &PointCloud, y: &PointCloud, exponent: QuantExponent) -> Result<f64> {
    let a = match exponent {
        QuantExponent::Finite(a) if a >= 1.0 => a,
        _ => {
            return Err(Error::InvalidArgument(
                "exact Wasserstein needs a finite exponent a >= 1".into(),
            ))
        }
    };
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("wasserstein needs at least one point"));
    }
    let cost = cost_matrix(x, y, CostKind::Euclidean)?.mapv(|c| c.powf(a));
    let perm = min_cost_assignment(cost.view())?;
    let mean = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>() / x.len() as f64;
    Ok(mean.powf(1.0 / a))
}

/// The anchor measure expanded to `n` unit atoms: anchor `α` repeated
/// `|C(α)|` times, i.e. `T(x_j)` for every sample `j`.
pub fn expand_quantized(quant: &AnchorQuantization) -> PointCloud {
    let n = quant.n();
    for &m in &quant.masses {
        let atoms = m * n as f64;
        assert!(
            (atoms - atoms.round()).abs() < 1e-9,
            "anchor mass {m} is not a multiple of 1/{n}"
        );
    }
    let idx: Vec<usize> = quant.assignment.clone();
    quant.anchors.select(&idx)
}

/// Exact `W_a(q, q̃)` between a cloud and its quantization (`a` taken from
/// the quantization's exponent).
pub fn wasserstein_via_expansion(cloud: &PointCloud, quant: &AnchorQuantization) -> Result<f64> {
    if cloud.len() != quant.n() {
        return Err(Error::SizeMismatch {
            left: cloud.len(),
            right: quant.n(),
        });
    }
    wasserstein_uniform(cloud, &expand_quantized(quant), quant.exponent)
}
