//! Endpoint-pair samplers.
//!
//! [`CouplingSampler`] lifts an anchor-level plan to pairs of original samples:
//! draw an anchor pair `(α, β)` from the plan, then one member of each cell
//! uniformly. Its pair distribution is
//!
//! ```text
//! q_anc(x0, x1) = Σ_{α,β} π(α, β) · U(C0(α))(x0) · U(C1(β))(x1)
//! ```
//!
//! which has the empirical marginals of both clouds whenever the plan's
//! marginals are the anchor masses. The minibatch-OT and independent
//! samplers are the baselines.

use rand::Rng;

use crate::anchors::AnchorQuantization;
use crate::datasets::PointCloud;
use crate::rng::rng_from_seed;
use crate::transport::{cost_matrix, min_cost_assignment, sinkhorn, CostKind, SinkhornOptions, TransportPlan};
use crate::{Error, Result};

/// Index pair `(source sample, target sample)`.
pub type Pair = (usize, usize);

/// Tolerance on `‖plan marginals − anchor masses‖₁`.
pub const MARGINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CouplingSampler {
    pub plan: TransportPlan,
    pub quant0: AnchorQuantization,
    pub quant1: AnchorQuantization,
    /// Cumulative plan mass over row-major entries, ending at exactly 1.
    cdf: Vec<f64>,
}

/// Checks plan marginals against the anchor masses and builds the sampler.
pub fn build_anchor_coupling(
    quant0: AnchorQuantization,
    quant1: AnchorQuantization,
    plan: TransportPlan,
) -> Result<CouplingSampler> {
    let (k0, k1) = plan.plan.dim();
    if k0 != quant0.k() || k1 != quant1.k() {
        return Err(Error::SizeMismatch {
            left: k0 * k1,
            right: quant0.k() * quant1.k(),
        });
    }
    let rows: f64 = plan.row_sums().iter().zip(&quant0.masses).map(|(a, b)| (a - b).abs()).sum();
    let cols: f64 = plan.col_sums().iter().zip(&quant1.masses).map(|(a, b)| (a - b).abs()).sum();
    let err = rows.max(cols);
    if !(err <= MARGINAL_TOL) {
        return Err(Error::MarginalMismatch(err));
    }
    if plan.plan.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidArgument("plan has negative entries".into()));
    }

    let mut cdf = Vec::with_capacity(k0 * k1);
    let mut acc = 0.0;
    for &p in plan.plan.iter() {
        acc += p;
        cdf.push(acc);
    }
    for c in cdf.iter_mut() {
        *c /= acc;
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    Ok(CouplingSampler {
        plan,
        quant0,
        quant1,
        cdf,
    })
}

impl CouplingSampler {
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Anchor slots `(α, β)` by inverse-CDF lookup.
    pub fn sample_anchor_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random();
        let flat = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let k1 = self.quant1.k();
        (flat / k1, flat % k1)
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Pair {
        let (a, b) = self.sample_anchor_pair(rng);
        let c0 = &self.quant0.cells[a];
        let c1 = &self.quant1.cells[b];
        (c0[rng.random_range(0..c0.len())], c1[rng.random_range(0..c1.len())])
    }

    pub fn sample_pairs_with<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<Pair> {
        (0..m).map(|_| self.sample_pair(rng)).collect()
    }

    pub fn sample_pairs(&self, m: usize, seed: u64) -> Vec<Pair> {
        self.sample_pairs_with(m, &mut rng_from_seed(seed))
    }

    /// Exact marginal probability of every source sample under the lifted
    /// coupling: `(Σ_β π(cell(j), β)) / |cell(j)|`.
    pub fn source_marginals(&self) -> Vec<f64> {
        let rows = self.plan.row_sums();
        self.quant0
            .assignment
            .iter()
            .map(|&a| rows[a] / self.quant0.cells[a].len() as f64)
            .collect()
    }

    pub fn target_marginals(&self) -> Vec<f64> {
        let cols = self.plan.col_sums();
        self.quant1
            .assignment
            .iter()
            .map(|&b| cols[b] / self.quant1.cells[b].len() as f64)
            .collect()
    }

    /// Exact probability of the sample pair `(i, j)`.
    pub fn pair_probability(&self, i: usize, j: usize) -> f64 {
        let a = self.quant0.assignment[i];
        let b = self.quant1.assignment[j];
        self.plan.plan[[a, b]] / (self.quant0.cells[a].len() * self.quant1.cells[b].len()) as f64
    }
}

/// How a minibatch is paired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinibatchMode {
    /// Optimal permutation.
    Exact,
    /// Pairs drawn from the entropic plan with the given `τ`.
    Entropic(f64),
}

/// Pairs two equal-size batches through an OT problem on the batch itself.
/// Returned pairs index into `batch0` and `batch1`.
pub fn minibatch_ot_pairs<R: Rng + ?Sized>(
    batch0: &PointCloud,
    batch1: &PointCloud,
    mode: MinibatchMode,
    cost: CostKind,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    let b = batch0.len();
    if b != batch1.len() {
        return Err(Error::SizeMismatch {
            left: b,
            right: batch1.len(),
        });
    }
    if b == 0 {
        return Err(Error::EmptyInput("minibatch must hold at least one point"));
    }
    let c = cost_matrix(batch0, batch1, cost)?;
    match mode {
        MinibatchMode::Exact => Ok(min_cost_assignment(c.view())?.into_iter().enumerate().collect()),
        MinibatchMode::Entropic(tau) => {
            let uniform = vec![1.0 / b as f64; b];
            let plan = sinkhorn(c.view(), &uniform, &uniform, tau, SinkhornOptions::default())?;
            let mut cdf = Vec::with_capacity(b * b);
            let mut acc = 0.0;
            for &p in plan.plan.iter() {
                acc += p;
                cdf.push(acc);
            }
            Ok((0..b)
                .map(|_| {
                    let u = rng.random::<f64>() * acc;
                    let flat = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                    (flat / b, flat % b)
                })
                .collect())
        }
    }
}

/// `m` pairs of independent uniform indices into clouds of sizes `n0`, `n1`.
pub fn independent_pairs<R: Rng + ?Sized>(n0: usize, n1: usize, m: usize, rng: &mut R) -> Result<Vec<Pair>> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::EmptyInput("independent coupling needs nonempty batches"));
    }
    Ok((0..m)
        .map(|_| (rng.random_range(0..n0), rng.random_range(0..n1)))
        .collect())
}

/// Independent pairing of two batches, one pair per source batch entry.
pub fn independent_batch_pairs(batch0: &PointCloud, batch1: &PointCloud, seed: u64) -> Result<Vec<Pair>> {
    independent_pairs(batch0.len(), batch1.len(), batch0.len(), &mut rng_from_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{assign_cells, quantize};
    use crate::datasets::{gen_gaussian, gen_moons};
    use crate::transport::{exact_assignment_ot, sinkhorn};

    fn anchor_sampler(x: &PointCloud, y: &PointCloud, k: usize, seed: u64) -> CouplingSampler {
        let q0 = quantize(x, k, seed).unwrap();
        let q1 = quantize(y, k, seed + 1).unwrap();
        let c = cost_matrix(&q0.anchors, &q1.anchors, CostKind::SqEuclidean).unwrap();
        let plan = sinkhorn(c.view(), &q0.masses, &q1.masses, 0.125, Default::default()).unwrap();
        build_anchor_coupling(q0, q1, plan).unwrap()
    }

    #[test]
    fn cdf_is_valid() {
        let x = gen_moons(200, 0);
        let y = gen_gaussian(150, 1, 2).unwrap();
        let s = anchor_sampler(&x, &y, 16, 3);
        assert!(s.cdf().windows(2).all(|w| w[0] <= w[1]));
        assert!((s.cdf().last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginals_are_exactly_empirical() {
        let x = gen_moons(200, 0);
        let y = gen_gaussian(150, 1, 2).unwrap();
        let s = anchor_sampler(&x, &y, 16, 3);
        for p in s.source_marginals() {
            assert!((p - 1.0 / 200.0).abs() < 1e-10);
        }
        for p in s.target_marginals() {
            assert!((p - 1.0 / 150.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_anchor_is_independent() {
        let x = gen_moons(12, 0);
        let y = gen_moons(9, 1);
        let s = anchor_sampler(&x, &y, 1, 0);
        for i in 0..12 {
            for j in 0..9 {
                assert!((s.pair_probability(i, j) - 1.0 / 108.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn singleton_cells_return_matched_pairs() {
        let x = gen_moons(8, 0);
        let y = gen_moons(8, 1);
        let plan = exact_assignment_ot(&x, &y, CostKind::SqEuclidean).unwrap();
        let idx: Vec<usize> = (0..8).collect();
        let q0 = assign_cells(&x, &idx).unwrap();
        let q1 = assign_cells(&y, &idx).unwrap();
        let matched: Vec<usize> = (0..8)
            .map(|i| (0..8).find(|&j| plan.plan[[i, j]] > 0.0).unwrap())
            .collect();
        let s = build_anchor_coupling(q0, q1, plan).unwrap();
        for (i, j) in s.sample_pairs(500, 2) {
            assert_eq!(matched[i], j);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let x = gen_moons(100, 0);
        let s = anchor_sampler(&x, &x, 8, 1);
        assert!(s.sample_pairs(0, 4).is_empty());
        assert_eq!(s.sample_pairs(300, 4), s.sample_pairs(300, 4));
        assert_ne!(s.sample_pairs(300, 4), s.sample_pairs(300, 5));
    }

    #[test]
    fn empirical_source_frequency() {
        let x = gen_moons(16, 0);
        let y = gen_moons(16, 1);
        let s = anchor_sampler(&x, &y, 4, 0);
        let draws = 1_000_000;
        let mut counts = [0usize; 16];
        for (i, _) in s.sample_pairs(draws, 9) {
            counts[i] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 16.0).abs() < 5e-3);
        }
    }

    #[test]
    fn mismatched_plan_rejected() {
        let x = gen_moons(10, 0);
        let q0 = quantize(&x, 2, 0).unwrap();
        let q1 = quantize(&x, 2, 1).unwrap();
        let c = cost_matrix(&q0.anchors, &q1.anchors, CostKind::SqEuclidean).unwrap();
        let plan = sinkhorn(c.view(), &[0.5, 0.5], &[0.5, 0.5], 1.0, Default::default()).unwrap();
        if q0.masses != [0.5, 0.5] || q1.masses != [0.5, 0.5] {
            assert!(matches!(build_anchor_coupling(q0, q1, plan), Err(Error::MarginalMismatch(_))));
        }
    }

    #[test]
    fn minibatch_exact_pairs() {
        let x = gen_moons(32, 0);
        let mut rng = rng_from_seed(0);
        let pairs = minibatch_ot_pairs(&x, &x, MinibatchMode::Exact, CostKind::SqEuclidean, &mut rng).unwrap();
        assert!(pairs.iter().all(|&(i, j)| i == j));

        let a = PointCloud::from_scalars(&[0.0, 1.0]).unwrap();
        let b = PointCloud::from_scalars(&[0.1, 0.9]).unwrap();
        let pairs = minibatch_ot_pairs(&a, &b, MinibatchMode::Exact, CostKind::SqEuclidean, &mut rng).unwrap();
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);

        let c = PointCloud::from_scalars(&[0.1]).unwrap();
        assert!(matches!(
            minibatch_ot_pairs(&a, &c, MinibatchMode::Exact, CostKind::SqEuclidean, &mut rng),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn minibatch_entropic_large_tau_is_uniform() {
        let a = gen_moons(4, 0);
        let b = gen_moons(4, 1);
        let mut rng = rng_from_seed(3);
        let mut counts = [0usize; 16];
        let rounds = 25_000;
        for _ in 0..rounds {
            for (i, j) in minibatch_ot_pairs(&a, &b, MinibatchMode::Entropic(1e6), CostKind::SqEuclidean, &mut rng).unwrap() {
                counts[i * 4 + j] += 1;
            }
        }
        let total = (rounds * 4) as f64;
        for c in counts {
            let f = c as f64 / total;
            assert!((f - 1.0 / 16.0).abs() < 0.02, "{f}");
        }
    }

    #[test]
    fn independent_pairs_frequencies() {
        let a = gen_moons(1, 0);
        assert_eq!(independent_batch_pairs(&a, &a, 0).unwrap(), vec![(0, 0)]);
        let x = gen_moons(4, 0);
        assert_eq!(
            independent_batch_pairs(&x, &x, 7).unwrap(),
            independent_batch_pairs(&x, &x, 7).unwrap()
        );
        let mut rng = rng_from_seed(1);
        let mut counts = [0usize; 16];
        let draws = 100_000;
        for (i, j) in independent_pairs(4, 4, draws, &mut rng).unwrap() {
            counts[i * 4 + j] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 16.0).abs() < 0.01);
        }
        let e = PointCloud::empty(2).unwrap();
        assert!(independent_batch_pairs(&e, &x, 0).is_err());
    }
}
