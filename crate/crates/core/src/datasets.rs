//! Point clouds, the 2D toy endpoint distributions, and CSV I/O.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// An empirical measure: `n` samples in `d` dimensions, stored row-major.
///
/// Every entry is finite and `d >= 1`; both are checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl PointCloud {
    /// An empty cloud of dimension `d`.
    pub fn empty(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self {
            data: Vec::new(),
            n: 0,
            d,
        })
    }

    /// Wraps a row-major buffer of `data.len() / d` samples.
    pub fn from_flat(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.len() % d,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        let n = data.len() / d;
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], d: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, d)
    }

    /// One-dimensional cloud from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.n, self.d), &self.data).expect("row-major buffer")
    }

    /// Rows at `indices`, in order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            n: indices.len(),
            d: self.d,
        }
    }

    /// The first `min(m, n)` rows.
    pub fn head(&self, m: usize) -> Self {
        let m = m.min(self.n);
        Self {
            data: self.data[..m * self.d].to_vec(),
            n: m,
            d: self.d,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        if self.n > 0 {
            mean.iter_mut().for_each(|m| *m /= self.n as f64);
        }
        mean
    }
}

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

const EIGHT_GAUSSIANS_RADIUS: f64 = 3.0;
const EIGHT_GAUSSIANS_STD: f64 = 0.3;
const MOONS_NOISE: f64 = 0.05;
const MOONS_SCALE: f64 = 3.0;

/// Mixture of 8 isotropic Gaussians with means on a circle of radius 3.
pub fn gen_eight_gaussians(n: usize, seed: u64) -> PointCloud {
    eight_gaussians_with_labels(n, seed).0
}

/// Like [`gen_eight_gaussians`], also returning each sample's component.
pub fn eight_gaussians_with_labels(n: usize, seed: u64) -> (PointCloud, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..8usize);
        let angle = 2.0 * PI * c as f64 / 8.0;
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        data.push(EIGHT_GAUSSIANS_RADIUS * angle.cos() + EIGHT_GAUSSIANS_STD * nx);
        data.push(EIGHT_GAUSSIANS_RADIUS * angle.sin() + EIGHT_GAUSSIANS_STD * ny);
        labels.push(c);
    }
    (PointCloud { data, n, d: 2 }, labels)
}

/// Two interleaved half circles, noised, centered at the analytic mean and
/// scaled by 3.
pub fn gen_moons(n: usize, seed: u64) -> PointCloud {
    // E[sin θ] = 2/π for θ ~ U[0, π]; the two arcs average to (1/2, 1/4).
    const CENTER: [f64; 2] = [0.5, 0.25];
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let theta = rng.random_range(0.0..=PI);
        let upper = rng.random_bool(0.5);
        let (x, y) = if upper {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        data.push(MOONS_SCALE * (x + MOONS_NOISE * nx - CENTER[0]));
        data.push(MOONS_SCALE * (y + MOONS_NOISE * ny - CENTER[1]));
    }
    PointCloud { data, n, d: 2 }
}

/// `n` i.i.d. standard normal samples in `d` dimensions.
pub fn gen_gaussian(n: usize, seed: u64, d: usize) -> Result<PointCloud> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut rng = rng_from_seed(seed);
    let data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(PointCloud { data, n, d })
}

/// Writes one sample per line, comma separated, 17 significant digits.
pub fn save_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * cloud.dim() * 25);
    for row in cloud.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("write to String");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_csv(&fs::read_to_string(path)?)
}

/// Parses headerless numeric CSV text.
pub fn parse_csv(text: &str) -> Result<PointCloud> {
    let mut data = Vec::new();
    let mut d = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = 0;
        for token in line.split(',') {
            let token = token.trim();
            let value: f64 = token.parse().map_err(|_| Error::NonNumeric {
                line: lineno + 1,
                token: token.to_string(),
            })?;
            data.push(value);
            fields += 1;
        }
        if d == 0 {
            d = fields;
        } else if fields != d {
            return Err(Error::RaggedRow {
                line: lineno + 1,
                expected: d,
                found: fields,
            });
        }
    }
    PointCloud::from_flat(data, d)
}
