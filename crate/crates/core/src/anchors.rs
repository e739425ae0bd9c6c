//! Anchor selection by farthest-first traversal and nearest-anchor
//! quantization of an endpoint cloud.
//!
//! A quantization maps every sample to its closest anchor (Euclidean
//! distance, lowest anchor slot on ties). The cells of that map carry the
//! anchor masses `|cell| / n`, which define the discrete pushforward measure
//! that the anchor-level transport problem is solved on.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::datasets::{sq_dist, PointCloud};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Exponent `a` of the quantization error `(mean_j |x_j - T(x_j)|^a)^(1/a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantExponent {
    Finite(f64),
    /// Essential supremum, i.e. the coverage radius.
    Max,
}

impl QuantExponent {
    pub const ONE: Self = Self::Finite(1.0);
    pub const TWO: Self = Self::Finite(2.0);

    /// `(mean d^a)^(1/a)` over the given distances, or the max for `Max`.
    pub fn moment(self, distances: &[f64]) -> f64 {
        if distances.is_empty() {
            return 0.0;
        }
        match self {
            Self::Max => distances.iter().copied().fold(0.0, f64::max),
            Self::Finite(a) => {
                let max = distances.iter().copied().fold(0.0, f64::max);
                let mean = distances.iter().map(|d| d.powf(a)).sum::<f64>() / distances.len() as f64;
                // A power mean never exceeds the max; clamp away rounding.
                mean.powf(1.0 / a).min(max)
            }
        }
    }

    /// Combines two side errors: `(e0^a + e1^a)^(1/a)`, or the max.
    pub fn combine(self, e0: f64, e1: f64) -> f64 {
        match self {
            Self::Max => e0.max(e1),
            Self::Finite(a) => (e0.powf(a) + e1.powf(a)).powf(1.0 / a),
        }
    }
}

impl Default for QuantExponent {
    fn default() -> Self {
        Self::TWO
    }
}

/// Nearest-anchor quantization of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorQuantization {
    /// Sample indices of the anchors, in selection order (slot order).
    pub anchor_indices: Vec<usize>,
    pub anchors: PointCloud,
    /// Anchor slot of every sample.
    pub assignment: Vec<usize>,
    /// Member sample indices per anchor slot, ascending.
    pub cells: Vec<Vec<usize>>,
    /// `|cells[s]| / n`.
    pub masses: Vec<f64>,
    /// Distance of every sample to its assigned anchor.
    pub distances: Vec<f64>,
    pub coverage_radius: f64,
    pub exponent: QuantExponent,
    pub quant_error: f64,
}

impl AnchorQuantization {
    pub fn k(&self) -> usize {
        self.anchor_indices.len()
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Quantization error for another exponent, from the stored distances.
    pub fn quant_error_with(&self, exponent: QuantExponent) -> f64 {
        exponent.moment(&self.distances)
    }

    /// `sample_index<TAB>anchor_slot` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.n() * 8);
        for (j, slot) in self.assignment.iter().enumerate() {
            writeln!(out, "{j}\t{slot}").expect("write to String");
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Farthest-first traversal with a seeded uniform initial anchor.
pub fn farthest_first(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(cloud, k)?;
    let init = rng_from_seed(seed).random_range(0..cloud.len());
    farthest_first_from(cloud, k, init)
}

/// Farthest-first traversal from a fixed initial sample.
///
/// Each step adds the sample maximizing the distance to the chosen set
/// (lowest index on ties). Already-chosen samples are never re-picked, so the
/// result holds `k` distinct indices even when the cloud has duplicates.
pub fn farthest_first_from(cloud: &PointCloud, k: usize, init: usize) -> Result<Vec<usize>> {
    check_k(cloud, k)?;
    if init >= cloud.len() {
        return Err(Error::AnchorIndex {
            index: init,
            n: cloud.len(),
        });
    }
    let n = cloud.len();
    let mut chosen = vec![false; n];
    let mut min_sq = vec![f64::INFINITY; n];
    let mut anchors = Vec::with_capacity(k);
    let mut next = init;
    loop {
        anchors.push(next);
        chosen[next] = true;
        if anchors.len() == k {
            break;
        }
        let a = cloud.row(next);
        let mut best = usize::MAX;
        let mut best_sq = f64::NEG_INFINITY;
        for (j, m) in min_sq.iter_mut().enumerate() {
            let d = sq_dist(cloud.row(j), a);
            if d < *m {
                *m = d;
            }
            if !chosen[j] && *m > best_sq {
                best_sq = *m;
                best = j;
            }
        }
        next = best;
    }
    Ok(anchors)
}

fn check_k(cloud: &PointCloud, k: usize) -> Result<()> {
    if k == 0 || k > cloud.len() {
        return Err(Error::AnchorCount { k, n: cloud.len() });
    }
    Ok(())
}

/// Nearest-anchor assignment with the default exponent `a = 2`.
pub fn assign_cells(cloud: &PointCloud, anchor_indices: &[usize]) -> Result<AnchorQuantization> {
    assign_cells_with(cloud, anchor_indices, QuantExponent::default())
}

pub fn assign_cells_with(
    cloud: &PointCloud,
    anchor_indices: &[usize],
    exponent: QuantExponent,
) -> Result<AnchorQuantization> {
    let n = cloud.len();
    if anchor_indices.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    let mut slot_of = vec![usize::MAX; n];
    for (slot, &idx) in anchor_indices.iter().enumerate() {
        if idx >= n {
            return Err(Error::AnchorIndex { index: idx, n });
        }
        if slot_of[idx] != usize::MAX {
            return Err(Error::DuplicateAnchor(idx));
        }
        slot_of[idx] = slot;
    }

    let anchors = cloud.select(anchor_indices);
    let k = anchor_indices.len();
    let mut assignment = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for (j, x) in cloud.rows().enumerate() {
        // An anchor sample belongs to its own slot even if another anchor
        // shares its coordinates, so no cell is empty.
        let (slot, sq) = if slot_of[j] != usize::MAX {
            (slot_of[j], 0.0)
        } else {
            let mut best = (0, f64::INFINITY);
            for (s, a) in anchors.rows().enumerate() {
                let d = sq_dist(x, a);
                if d < best.1 {
                    best = (s, d);
                }
            }
            best
        };
        assignment.push(slot);
        distances.push(sq.sqrt());
    }

    let mut cells = vec![Vec::new(); k];
    for (j, &s) in assignment.iter().enumerate() {
        cells[s].push(j);
    }
    let masses = cells.iter().map(|c| c.len() as f64 / n as f64).collect();
    let coverage_radius = distances.iter().copied().fold(0.0, f64::max);
    let quant_error = exponent.moment(&distances);
    Ok(AnchorQuantization {
        anchor_indices: anchor_indices.to_vec(),
        anchors,
        assignment,
        cells,
        masses,
        distances,
        coverage_radius,
        exponent,
        quant_error,
    })
}

/// Farthest-first anchors plus nearest-anchor cells in one call.
pub fn quantize(cloud: &PointCloud, k: usize, seed: u64) -> Result<AnchorQuantization> {
    let anchors = farthest_first(cloud, k, seed)?;
    assign_cells(cloud, &anchors)
}

/// `max_j min_s |x_j - a_s|` for anchors given as sample indices.
pub fn coverage_radius_of(cloud: &PointCloud, anchor_indices: &[usize]) -> Result<f64> {
    if anchor_indices.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    if let Some(&bad) = anchor_indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::AnchorIndex {
            index: bad,
            n: cloud.len(),
        });
    }
    let mut radius_sq: f64 = 0.0;
    for x in cloud.rows() {
        let nearest = anchor_indices
            .iter()
            .map(|&a| sq_dist(x, cloud.row(a)))
            .fold(f64::INFINITY, f64::min);
        radius_sq = radius_sq.max(nearest);
    }
    Ok(radius_sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_eight_gaussians, gen_moons};
    use proptest::prelude::*;

    fn line() -> PointCloud {
        PointCloud::from_scalars(&[0.0, 1.0, 10.0]).unwrap()
    }

    #[test]
    fn farthest_point_is_forced() {
        assert_eq!(farthest_first_from(&line(), 2, 0).unwrap(), vec![0, 2]);
        let all = farthest_first_from(&line(), 3, 0).unwrap();
        assert_eq!(all, vec![0, 2, 1]);
        assert_eq!(coverage_radius_of(&line(), &all).unwrap(), 0.0);
    }

    #[test]
    fn k_bounds_are_checked() {
        assert!(matches!(farthest_first(&line(), 0, 0), Err(Error::AnchorCount { .. })));
        assert!(matches!(farthest_first(&line(), 4, 0), Err(Error::AnchorCount { .. })));
    }

    #[test]
    fn hand_geometry_cells() {
        let q = assign_cells(&line(), &[0, 2]).unwrap();
        assert_eq!(q.cells, vec![vec![0, 1], vec![2]]);
        assert_eq!(q.masses, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(q.coverage_radius, 1.0);
        assert!((q.quant_error - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((q.quant_error - 0.57735).abs() < 1e-5);
    }

    #[test]
    fn identity_quantization() {
        let c = gen_moons(50, 3);
        let idx: Vec<usize> = (0..50).rev().collect();
        let q = assign_cells(&c, &idx).unwrap();
        assert!(q.masses.iter().all(|&m| m == 1.0 / 50.0));
        assert_eq!(q.quant_error, 0.0);
        assert_eq!(q.coverage_radius, 0.0);
        let ff = farthest_first(&c, 50, 9).unwrap();
        assert_eq!(coverage_radius_of(&c, &ff).unwrap(), 0.0);
    }

    #[test]
    fn duplicate_anchors_rejected() {
        assert!(matches!(assign_cells(&line(), &[1, 1]), Err(Error::DuplicateAnchor(1))));
        assert!(matches!(assign_cells(&line(), &[]), Err(Error::EmptyAnchors)));
    }

    #[test]
    fn coverage_radius_examples() {
        let two = PointCloud::from_scalars(&[0.0, 4.0]).unwrap();
        assert_eq!(coverage_radius_of(&two, &[0]).unwrap(), 4.0);
        assert_eq!(coverage_radius_of(&line(), &[0, 2]).unwrap(), 1.0);
        assert_eq!(coverage_radius_of(&line(), &[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(coverage_radius_of(&line(), &[]), Err(Error::EmptyAnchors)));
    }

    #[test]
    fn coincident_points_keep_cells_nonempty() {
        let c = PointCloud::from_scalars(&[2.0, 2.0, 2.0, 5.0]).unwrap();
        let ff = farthest_first_from(&c, 3, 0).unwrap();
        assert_eq!(ff, vec![0, 3, 1]);
        let q = assign_cells(&c, &ff).unwrap();
        assert!(q.cells.iter().all(|cell| !cell.is_empty()));
        assert_eq!(q.assignment[1], 2);
    }

    #[test]
    fn radius_non_increasing_in_k() {
        let c = gen_eight_gaussians(2000, 1);
        let mut prev = f64::INFINITY;
        for k in [1, 2, 4, 8, 16, 64, 256] {
            let r = quantize(&c, k, 5).unwrap().coverage_radius;
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn tsv_dump() {
        let q = assign_cells(&line(), &[0, 2]).unwrap();
        assert_eq!(q.to_tsv(), "0\t0\n1\t0\n2\t1\n");
    }

    proptest! {
        #[test]
        fn quantization_invariants(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60),
            k_frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let rows: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [a, b]).collect();
            let c = PointCloud::from_rows(&rows, 2).unwrap();
            let n = c.len();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let ff = farthest_first(&c, k, seed).unwrap();
            prop_assert_eq!(&ff, &farthest_first(&c, k, seed).unwrap());
            let q = assign_cells(&c, &ff).unwrap();

            let mut seen = vec![false; n];
            for (s, cell) in q.cells.iter().enumerate() {
                prop_assert!(!cell.is_empty());
                prop_assert!(cell.contains(&q.anchor_indices[s]));
                for &j in cell {
                    prop_assert!(!seen[j]);
                    seen[j] = true;
                    prop_assert_eq!(q.assignment[j], s);
                }
                prop_assert_eq!(q.masses[s], cell.len() as f64 / n as f64);
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert!((q.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!(q.distances[j] <= q.coverage_radius);
            }
            for a in [QuantExponent::ONE, QuantExponent::TWO] {
                prop_assert!(q.quant_error_with(a) <= q.coverage_radius);
            }
            prop_assert_eq!(q.quant_error_with(QuantExponent::Max), q.coverage_radius);
            prop_assert_eq!(coverage_radius_of(&c, &ff).unwrap(), q.coverage_radius);
        }
    }
}
