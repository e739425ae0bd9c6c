//! Kernel two-sample distance between point clouds.

use std::cmp::Ordering;

use crate::datasets::{dist, sq_dist, PointCloud};
use crate::{Error, Result};

pub const REFERENCE_SIZE: usize = 4096;

/// Median of all pairwise Euclidean distances among the first `cap` points.
/// For an even number of pairs the lower-middle element is returned.
pub fn median_bandwidth(reference: &PointCloud, cap: usize) -> Result<f64> {
    let m = reference.len().min(cap);
    if m < 2 {
        return Err(Error::EmptyInput("bandwidth needs at least two points"));
    }
    let mut distances = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            distances.push(dist(reference.row(i), reference.row(j)));
        }
    }
    let mid = (distances.len() - 1) / 2;
    let (_, &mut h, _) = distances.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if !(h > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(h)
}

fn kernel_mean(x: &PointCloud, y: &PointCloud, gamma: f64) -> f64 {
    let mut total = 0.0;
    for a in x.rows() {
        let mut row = 0.0;
        for b in y.rows() {
            row += (-gamma * sq_dist(a, b)).exp();
        }
        total += row;
    }
    total / (x.len() as f64 * y.len() as f64)
}

/// Rows in lexicographic order, so equal multisets give equal sums.
fn sorted_rows(cloud: &PointCloud) -> PointCloud {
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.sort_by(|&i, &j| {
        cloud
            .row(i)
            .iter()
            .zip(cloud.row(j))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    cloud.select(&idx)
}

fn canonical_order(x: &PointCloud, y: &PointCloud) -> Ordering {
    x.len().cmp(&y.len()).then_with(|| {
        x.as_flat()
            .iter()
            .zip(y.as_flat())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Biased estimate with kernel `exp(−‖x−y‖²/(2h²))`, clamped at zero before
/// the square root. Symmetric in its arguments and invariant to row order bit
/// for bit; exactly zero on equal multisets.
pub fn mmd(x: &PointCloud, y: &PointCloud, h: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("mmd needs nonempty samples"));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let (x, y) = (&sorted_rows(x), &sorted_rows(y));
    let (x, y) = match canonical_order(x, y) {
        Ordering::Greater => (y, x),
        _ => (x, y),
    };
    let gamma = 1.0 / (2.0 * h * h);
    let sq = kernel_mean(x, x, gamma) + kernel_mean(y, y, gamma) - 2.0 * kernel_mean(x, y, gamma);
    Ok(sq.max(0.0).sqrt())
}

/// A fixed target sample and bandwidth shared by every evaluation of one task.
#[derive(Debug, Clone)]
pub struct MmdReference {
    pub target: PointCloud,
    pub bandwidth: f64,
}

impl MmdReference {
    /// Bandwidth from the first `REFERENCE_SIZE` target points.
    pub fn new(target: PointCloud) -> Result<Self> {
        let bandwidth = median_bandwidth(&target, REFERENCE_SIZE)?;
        Ok(Self { target, bandwidth })
    }

    pub fn score(&self, predicted: &PointCloud) -> Result<f64> {
        mmd(predicted, &self.target, self.bandwidth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_eight_gaussians, gen_moons};

    fn naive_mmd(x: &PointCloud, y: &PointCloud, h: f64) -> f64 {
        let k = |a: &[f64], b: &[f64]| {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
            (-d2 / (2.0 * h * h)).exp()
        };
        let mut xx = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                xx += k(x.row(i), x.row(j));
            }
        }
        let mut yy = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                yy += k(y.row(i), y.row(j));
            }
        }
        let mut xy = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                xy += k(x.row(i), y.row(j));
            }
        }
        let (n, m) = (x.len() as f64, y.len() as f64);
        (xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)).max(0.0).sqrt()
    }

    #[test]
    fn bandwidth_examples() {
        let c = PointCloud::from_scalars(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(median_bandwidth(&c, 10).unwrap(), 2.0);
        let dup = PointCloud::from_scalars(&[0.0, 0.0, 4.0]).unwrap();
        assert_eq!(median_bandwidth(&dup, 10).unwrap(), 4.0);
        let dup2 = PointCloud::from_scalars(&[0.0, 0.0, 0.0, 4.0]).unwrap();
        assert!(matches!(median_bandwidth(&dup2, 10), Err(Error::DegenerateBandwidth)));
        let big = gen_moons(500, 1);
        let h = median_bandwidth(&big, 2).unwrap();
        assert_eq!(h, dist(big.row(0), big.row(1)));
        let one = PointCloud::from_scalars(&[1.0]).unwrap();
        assert!(median_bandwidth(&one, 10).is_err());
        assert!(median_bandwidth(&big, 1).is_err());
    }

    #[test]
    fn two_point_value() {
        let x = PointCloud::from_scalars(&[0.0]).unwrap();
        let y = PointCloud::from_scalars(&[1.0]).unwrap();
        let v = mmd(&x, &y, 1.0).unwrap();
        let expected = (2.0 - 2.0 * (-0.5f64).exp()).sqrt();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.887096).abs() < 1e-6);
    }

    #[test]
    fn identical_multisets_vanish() {
        let x = gen_eight_gaussians(80, 2);
        assert!(mmd(&x, &x, 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn matches_naive_reference_and_is_symmetric() {
        for (n, m, seed) in [(10, 7, 1), (100, 100, 2), (33, 64, 3)] {
            let x = gen_eight_gaussians(n, seed);
            let y = gen_moons(m, seed + 10);
            let h = median_bandwidth(&y, REFERENCE_SIZE).unwrap();
            let v = mmd(&x, &y, h).unwrap();
            assert!((v - naive_mmd(&x, &y, h)).abs() < 1e-12);
            assert_eq!(v, mmd(&y, &x, h).unwrap());
        }
    }

    #[test]
    fn permutation_invariant() {
        let x = gen_eight_gaussians(60, 4);
        let y = gen_moons(50, 5);
        let rev: Vec<usize> = (0..60).rev().collect();
        let a = mmd(&x, &y, 1.3).unwrap();
        let b = mmd(&x.select(&rev), &y, 1.3).unwrap();
        assert_eq!(a, b);
        assert_eq!(mmd(&x, &x.select(&rev), 1.3).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let x = PointCloud::from_scalars(&[0.0]).unwrap();
        let e = PointCloud::empty(1).unwrap();
        let y = PointCloud::from_rows(&[[0.0, 1.0]], 2).unwrap();
        assert!(mmd(&x, &e, 1.0).is_err());
        assert!(matches!(mmd(&x, &y, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(mmd(&x, &x, 0.0).is_err());
    }
}
