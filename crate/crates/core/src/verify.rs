//! Numerical certificates for the quantization guarantees on small instances:
//! endpoint perturbation and radius bounds, value-gap shrinkage under anchor
//! refinement, and the farthest-first 2-approximation.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::anchors::{assign_cells_with, farthest_first_from, AnchorQuantization, QuantExponent};
use crate::datasets::{dist, gen_eight_gaussians, gen_moons, PointCloud};
use crate::rng::{derive_seed, rng_from_seed};
use crate::transport::{cost_matrix, sinkhorn, wasserstein_via_expansion, CostKind, SinkhornOptions};
use crate::{Error, Result};

pub const ENDPOINT_LIMIT: usize = 64;
pub const VALUE_LIMIT: usize = 256;
pub const KCENTER_LIMIT: usize = 12;
pub const KCENTER_K_LIMIT: usize = 4;

const W_TOL: f64 = 1e-10;
const RADIUS_TOL: f64 = 1e-12;
const RATIO_TOL: f64 = 1e-12;
const SAME_PROBLEM_TOL: f64 = 1e-8;

fn value_solver() -> SinkhornOptions {
    SinkhornOptions {
        tol: 1e-10,
        max_iter: 200_000,
    }
}

/// One checked instance. Fields that a check does not compute are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilityRecord {
    pub check: &'static str,
    pub n: usize,
    pub k: usize,
    pub a: Option<QuantExponent>,
    pub epsilon0: Option<f64>,
    pub epsilon1: Option<f64>,
    pub delta_a: Option<f64>,
    pub r0: Option<f64>,
    pub r1: Option<f64>,
    pub w0: Option<f64>,
    pub w1: Option<f64>,
    pub value_full: Option<f64>,
    pub value_quant: Option<f64>,
    pub value_gap: Option<f64>,
    pub ratio: Option<f64>,
    /// `W_i ≤ ε_i + 1e-10` on every side present.
    pub w_bound: Option<bool>,
    /// `ε_i ≤ r_i + 1e-12` on every side present.
    pub radius_bound: Option<bool>,
    /// `Δ_a ≤ combine(r0, r1) + 1e-12`.
    pub delta_bound: Option<bool>,
    /// Ratio or value-gap conditions.
    pub trend: Option<bool>,
}

impl StabilityRecord {
    pub fn passed(&self) -> bool {
        [self.w_bound, self.radius_bound, self.delta_bound, self.trend]
            .iter()
            .all(|f| f.unwrap_or(true))
    }

    /// Re-derives every flag from the recorded numbers.
    pub fn recheck(&self) -> bool {
        let le = |x: Option<f64>, y: Option<f64>, tol: f64| match (x, y) {
            (Some(x), Some(y)) => Some(x <= y + tol),
            _ => None,
        };
        let both = |a: Option<bool>, b: Option<bool>| match (a, b) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(true) && b.unwrap_or(true)),
        };
        let w = both(le(self.w0, self.epsilon0, W_TOL), le(self.w1, self.epsilon1, W_TOL));
        let r = both(le(self.epsilon0, self.r0, RADIUS_TOL), le(self.epsilon1, self.r1, RADIUS_TOL));
        let delta = match (self.a, self.r0, self.r1) {
            (Some(a), Some(r0), Some(r1)) if self.delta_a.is_some() => le(self.delta_a, Some(a.combine(r0, r1)), RADIUS_TOL),
            _ => None,
        };
        w == self.w_bound && r == self.radius_bound && delta == self.delta_bound
    }
}

/// All records of one verification run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilityReport {
    pub records: Vec<StabilityRecord>,
    /// Failures of conditions spanning several records.
    pub sequence_failures: Vec<String>,
}

pub const REPORT_HEADER: &str = "check,n,k,a,epsilon0,epsilon1,delta_a,r0,r1,w0,w1,value_full,value_quant,value_gap,ratio,w_bound,radius_bound,delta_bound,trend,passed";

fn fmt_exponent(a: QuantExponent) -> String {
    match a {
        QuantExponent::Finite(v) => v.to_string(),
        QuantExponent::Max => "inf".into(),
    }
}

impl StabilityReport {
    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| !r.passed()).count() + self.sequence_failures.len()
    }

    pub fn all_passed(&self) -> bool {
        self.violations() == 0
    }

    pub fn extend(&mut self, other: StabilityReport) {
        self.records.extend(other.records);
        self.sequence_failures.extend(other.sequence_failures);
    }

    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        let flag = |v: Option<bool>| v.map(|b| b.to_string()).unwrap_or_default();
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.check,
                r.n,
                r.k,
                r.a.map(fmt_exponent).unwrap_or_default(),
                num(r.epsilon0),
                num(r.epsilon1),
                num(r.delta_a),
                num(r.r0),
                num(r.r1),
                num(r.w0),
                num(r.w1),
                num(r.value_full),
                num(r.value_quant),
                num(r.value_gap),
                num(r.ratio),
                flag(r.w_bound),
                flag(r.radius_bound),
                flag(r.delta_bound),
                flag(r.trend),
                r.passed(),
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn check_size(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        return Err(Error::OracleSize { size: n, limit });
    }
    Ok(())
}

fn quantize_from(cloud: &PointCloud, k: usize, a: QuantExponent, init: usize) -> Result<AnchorQuantization> {
    assign_cells_with(cloud, &farthest_first_from(cloud, k, init)?, a)
}

/// Exact `W_a` of the quantization when `a` is finite.
fn exact_w(cloud: &PointCloud, q: &AnchorQuantization) -> Result<Option<f64>> {
    match q.exponent {
        QuantExponent::Finite(_) => Ok(Some(wasserstein_via_expansion(cloud, q)?)),
        QuantExponent::Max => Ok(None),
    }
}

/// One side: `W_a(q, q̃) ≤ ε_a` and `ε_a ≤ r` for farthest-first anchors
/// grown from `init`.
pub fn check_endpoint_bound(cloud: &PointCloud, k: usize, a: QuantExponent, init: usize) -> Result<StabilityRecord> {
    check_size(cloud.len(), ENDPOINT_LIMIT)?;
    let q = quantize_from(cloud, k, a, init)?;
    let w = exact_w(cloud, &q)?;
    let mut rec = StabilityRecord {
        check: "endpoint",
        n: cloud.len(),
        k,
        a: Some(a),
        epsilon0: Some(q.quant_error),
        r0: Some(q.coverage_radius),
        w0: w,
        ..StabilityRecord::default()
    };
    finish_bounds(&mut rec);
    Ok(rec)
}

/// Both sides plus the composed bound `Δ_a ≤ (r0^a + r1^a)^(1/a)`.
pub fn check_endpoint_pair(
    cloud0: &PointCloud,
    cloud1: &PointCloud,
    k: usize,
    a: QuantExponent,
    inits: (usize, usize),
) -> Result<StabilityRecord> {
    check_size(cloud0.len().max(cloud1.len()), ENDPOINT_LIMIT)?;
    let q0 = quantize_from(cloud0, k, a, inits.0)?;
    let q1 = quantize_from(cloud1, k, a, inits.1)?;
    let mut rec = StabilityRecord {
        check: "endpoint_pair",
        n: cloud0.len(),
        k,
        a: Some(a),
        epsilon0: Some(q0.quant_error),
        epsilon1: Some(q1.quant_error),
        delta_a: Some(a.combine(q0.quant_error, q1.quant_error)),
        r0: Some(q0.coverage_radius),
        r1: Some(q1.coverage_radius),
        w0: exact_w(cloud0, &q0)?,
        w1: exact_w(cloud1, &q1)?,
        ..StabilityRecord::default()
    };
    finish_bounds(&mut rec);
    Ok(rec)
}

fn finish_bounds(rec: &mut StabilityRecord) {
    let le = |x: Option<f64>, y: Option<f64>, tol: f64| x.zip(y).map(|(x, y)| x <= y + tol);
    let both = |a: Option<bool>, b: Option<bool>| match (a, b) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(true) && b.unwrap_or(true)),
    };
    rec.w_bound = both(le(rec.w0, rec.epsilon0, W_TOL), le(rec.w1, rec.epsilon1, W_TOL));
    rec.radius_bound = both(le(rec.epsilon0, rec.r0, RADIUS_TOL), le(rec.epsilon1, rec.r1, RADIUS_TOL));
    rec.delta_bound = match (rec.a, rec.r0, rec.r1) {
        (Some(a), Some(r0), Some(r1)) if rec.delta_a.is_some() => le(rec.delta_a, Some(a.combine(r0, r1)), RADIUS_TOL),
        _ => None,
    };
}

fn entropic_value(x: &PointCloud, mu: &[f64], y: &PointCloud, nu: &[f64], tau: f64) -> Result<f64> {
    let c = cost_matrix(x, y, CostKind::SqEuclidean)?;
    Ok(sinkhorn(c.view(), mu, nu, tau, value_solver())?.entropic_value)
}

/// Entropic value of the full clouds against that of nested farthest-first
/// quantizations for every `k` of `k_grid` (ascending). Flags the sequence
/// if the gap at the largest `k` is not below the gap at the smallest, if
/// `Δ_a` ever increases, or if `k = n` leaves a gap above `1e-8`.
pub fn check_value_convergence(
    cloud0: &PointCloud,
    cloud1: &PointCloud,
    k_grid: &[usize],
    tau: f64,
    seed: u64,
) -> Result<StabilityReport> {
    let n0 = cloud0.len();
    let n1 = cloud1.len();
    check_size(n0.max(n1), VALUE_LIMIT)?;
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("k grid is empty".into()));
    }
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("k grid must be strictly increasing".into()));
    }
    let k_max = *k_grid.last().unwrap();
    let mut rng = rng_from_seed(seed);
    let init0 = rng.random_range(0..n0);
    let init1 = rng.random_range(0..n1);
    let order0 = farthest_first_from(cloud0, k_max, init0)?;
    let order1 = farthest_first_from(cloud1, k_max, init1)?;
    let a = QuantExponent::TWO;
    let full = entropic_value(cloud0, &vec![1.0 / n0 as f64; n0], cloud1, &vec![1.0 / n1 as f64; n1], tau)?;

    let mut report = StabilityReport::default();
    for &k in k_grid {
        let q0 = assign_cells_with(cloud0, &order0[..k], a)?;
        let q1 = assign_cells_with(cloud1, &order1[..k], a)?;
        let quant = entropic_value(&q0.anchors, &q0.masses, &q1.anchors, &q1.masses, tau)?;
        let mut rec = StabilityRecord {
            check: "value_gap",
            n: n0,
            k,
            a: Some(a),
            epsilon0: Some(q0.quant_error),
            epsilon1: Some(q1.quant_error),
            delta_a: Some(a.combine(q0.quant_error, q1.quant_error)),
            r0: Some(q0.coverage_radius),
            r1: Some(q1.coverage_radius),
            value_full: Some(full),
            value_quant: Some(quant),
            value_gap: Some((full - quant).abs()),
            ..StabilityRecord::default()
        };
        finish_bounds(&mut rec);
        if k == n0 && k == n1 {
            rec.trend = Some(rec.value_gap.unwrap() <= SAME_PROBLEM_TOL);
        }
        report.records.push(rec);
    }
    let recs = &report.records;
    if recs.len() >= 2 {
        let first = recs[0].value_gap.unwrap();
        let last = recs[recs.len() - 1].value_gap.unwrap();
        if !(last < first) {
            report
                .sequence_failures
                .push(format!("value gap at k={k_max} ({last:.3e}) is not below k={} ({first:.3e})", k_grid[0]));
        }
    }
    for w in recs.windows(2) {
        if w[1].delta_a.unwrap() > w[0].delta_a.unwrap() {
            report
                .sequence_failures
                .push(format!("delta_a increases from k={} to k={}", w[0].k, w[1].k));
        }
    }
    Ok(report)
}

fn radius(cloud: &PointCloud, anchors: &[usize]) -> f64 {
    cloud
        .rows()
        .map(|x| anchors.iter().map(|&a| dist(x, cloud.row(a))).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Smallest k-center radius over all `C(n, k)` anchor subsets.
pub fn optimal_kcenter_radius(cloud: &PointCloud, k: usize) -> Result<f64> {
    let n = cloud.len();
    check_size(n, KCENTER_LIMIT)?;
    check_size(k, KCENTER_K_LIMIT)?;
    if k == 0 || k > n {
        return Err(Error::AnchorCount { k, n });
    }
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    loop {
        best = best.min(radius(cloud, &subset));
        // Next combination in lexicographic order.
        let mut i = k;
        while i > 0 && subset[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return Ok(best);
        }
        subset[i - 1] += 1;
        for j in i..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Worst farthest-first radius over every initial point divided by the
/// optimal radius; `1` when both are zero.
pub fn check_kcenter_approx(cloud: &PointCloud, k: usize) -> Result<StabilityRecord> {
    let opt = optimal_kcenter_radius(cloud, k)?;
    let mut greedy: f64 = 0.0;
    for init in 0..cloud.len() {
        let anchors = farthest_first_from(cloud, k, init)?;
        greedy = greedy.max(radius(cloud, &anchors));
    }
    let ratio = if greedy == 0.0 && opt == 0.0 { 1.0 } else { greedy / opt };
    Ok(StabilityRecord {
        check: "kcenter",
        n: cloud.len(),
        k,
        r0: Some(greedy),
        r1: Some(opt),
        ratio: Some(ratio),
        trend: Some(ratio <= 2.0 + RATIO_TOL),
        ..StabilityRecord::default()
    })
}

/// `W_1(q0, q̃0) + W_1(q1, q̃1)` averaged over seeds, for nested anchor sets
/// at every `k` of `k_grid`. Returns the averages in grid order.
pub fn coupling_proxy_curve(cloud0: &PointCloud, cloud1: &PointCloud, k_grid: &[usize], seeds: u64) -> Result<Vec<f64>> {
    check_size(cloud0.len().max(cloud1.len()), ENDPOINT_LIMIT)?;
    let k_max = *k_grid.iter().max().ok_or_else(|| Error::InvalidArgument("k grid is empty".into()))?;
    let mut totals = vec![0.0; k_grid.len()];
    for seed in 0..seeds {
        let mut rng = rng_from_seed(derive_seed(seed, 11));
        let order0 = farthest_first_from(cloud0, k_max, rng.random_range(0..cloud0.len()))?;
        let order1 = farthest_first_from(cloud1, k_max, rng.random_range(0..cloud1.len()))?;
        for (slot, &k) in k_grid.iter().enumerate() {
            let q0 = assign_cells_with(cloud0, &order0[..k], QuantExponent::ONE)?;
            let q1 = assign_cells_with(cloud1, &order1[..k], QuantExponent::ONE)?;
            totals[slot] += wasserstein_via_expansion(cloud0, &q0)? + wasserstein_via_expansion(cloud1, &q1)?;
        }
    }
    Ok(totals.into_iter().map(|t| t / seeds as f64).collect())
}

/// Sizes of the full verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteScale {
    pub endpoint_instances: usize,
    pub endpoint_n: usize,
    pub kcenter_instances: usize,
    pub kcenter_n: usize,
    pub kcenter_k: usize,
    pub value_n: usize,
    pub value_grid: Vec<usize>,
    pub tau: f64,
    pub proxy_n: usize,
    pub proxy_seeds: u64,
    pub seed: u64,
    /// Test hook: halves every recorded quantization error before checking.
    pub corrupt_epsilon: bool,
}

impl Default for SuiteScale {
    fn default() -> Self {
        Self {
            endpoint_instances: 200,
            endpoint_n: 32,
            kcenter_instances: 100,
            kcenter_n: 10,
            kcenter_k: 3,
            value_n: 256,
            value_grid: vec![1, 4, 16, 64, 256],
            tau: 0.125,
            proxy_n: 32,
            proxy_seeds: 20,
            seed: 0,
            corrupt_epsilon: false,
        }
    }
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_from_seed(seed);
    let data = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointCloud::from_flat(data, 2).expect("finite data")
}

/// Randomized endpoint and radius bounds, exhaustive k-center ratios
/// including the tight instance, value-gap shrinkage on benchmark subsets,
/// and the nested coupling proxy.
pub fn run_suite(scale: &SuiteScale) -> Result<StabilityReport> {
    let mut report = StabilityReport::default();
    let ks = [2, 4, 8];
    let exponents = [QuantExponent::ONE, QuantExponent::TWO, QuantExponent::Max];
    for i in 0..scale.endpoint_instances {
        let s = derive_seed(scale.seed, 1000 + i as u64);
        let c0 = random_cloud(scale.endpoint_n, derive_seed(s, 0));
        let c1 = random_cloud(scale.endpoint_n, derive_seed(s, 1));
        let k = ks[i % ks.len()].min(scale.endpoint_n);
        let a = exponents[(i / ks.len()) % exponents.len()];
        let inits = (i % scale.endpoint_n, (7 * i + 3) % scale.endpoint_n);
        let mut rec = check_endpoint_pair(&c0, &c1, k, a, inits)?;
        if scale.corrupt_epsilon {
            rec.epsilon0 = rec.epsilon0.map(|e| e / 2.0);
            rec.epsilon1 = rec.epsilon1.map(|e| e / 2.0);
            finish_bounds(&mut rec);
        }
        report.records.push(rec);
    }

    let tight = PointCloud::from_scalars(&[0.0, 1.0, 2.0, 10.0])?;
    report.records.push(check_kcenter_approx(&tight, 2)?);
    for i in 0..scale.kcenter_instances {
        let c = random_cloud(scale.kcenter_n, derive_seed(scale.seed, 5000 + i as u64));
        report.records.push(check_kcenter_approx(&c, scale.kcenter_k)?);
    }

    let m = scale.value_n;
    let c0 = gen_eight_gaussians(m, derive_seed(scale.seed, 7));
    let c1 = gen_moons(m, derive_seed(scale.seed, 8));
    let grid: Vec<usize> = scale.value_grid.iter().copied().filter(|&k| k <= m).collect();
    report.extend(check_value_convergence(&c0, &c1, &grid, scale.tau, scale.seed)?);

    let p = scale.proxy_n;
    let p0 = gen_eight_gaussians(p, derive_seed(scale.seed, 9));
    let p1 = gen_moons(p, derive_seed(scale.seed, 10));
    let proxy_grid: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k < p).chain([p]).collect();
    let curve = coupling_proxy_curve(&p0, &p1, &proxy_grid, scale.proxy_seeds)?;
    for w in curve.windows(2).zip(proxy_grid.windows(2)) {
        if w.0[1] > w.0[0] + W_TOL {
            report
                .sequence_failures
                .push(format!("coupling proxy increases from k={} to k={}", w.1[0], w.1[1]));
        }
    }
    Ok(report)
}
