//! Token configurations (weighted empirical measures on the sphere) and the small
//! dense matrix type used for attention and Gram matrices.

use crate::error::{Error, Result};
use crate::sphere::{self, RandomStream, UnitVector};

const MASS_TOLERANCE: f64 = 1e-12;

/// `n` unit vectors in dimension `d` with nonnegative masses summing to 1.
///
/// Coordinates are stored row-major in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenConfiguration {
    n: usize,
    d: usize,
    coords: Vec<f64>,
    masses: Vec<f64>,
}

impl TokenConfiguration {
    /// Uniform masses `1/n`.
    pub fn new(points: Vec<UnitVector>) -> Result<Self> {
        let n = points.len();
        Self::with_masses(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn with_masses(points: Vec<UnitVector>, masses: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("a configuration needs at least one token"));
        }
        let d = points[0].dim();
        let mut coords = Vec::with_capacity(n * d);
        for p in &points {
            sphere::check_dim(d, p.dim())?;
            coords.extend_from_slice(p.as_slice());
        }
        Self::build(n, d, coords, masses)
    }

    /// Builds from row-major coordinates, renormalizing every row. Rows must be
    /// nonzero.
    pub fn from_flat(n: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        Self::from_flat_with_masses(n, d, coords, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn from_flat_with_masses(
        n: usize,
        d: usize,
        mut coords: Vec<f64>,
        masses: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("a configuration needs n >= 1 and d >= 1"));
        }
        sphere::check_dim(n * d, coords.len())?;
        for row in coords.chunks_exact_mut(d) {
            sphere::normalize_in_place(row).map_err(|_| {
                Error::invalid("configuration contains a zero (or non-finite) point")
            })?;
        }
        Self::build(n, d, coords, masses)
    }

    fn build(n: usize, d: usize, coords: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        sphere::check_dim(n, masses.len())?;
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("masses sum to {total}, expected 1")));
        }
        Ok(TokenConfiguration {
            n,
            d,
            coords,
            masses,
        })
    }

    /// `n` i.i.d. uniform tokens drawn in order from `rng`.
    pub fn uniform_random(n: usize, d: usize, rng: &mut RandomStream) -> Result<Self> {
        let points = (0..n)
            .map(|_| sphere::sample_uniform_sphere(d, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    /// Tokens on the unit circle at the given angles.
    pub fn from_angles(angles: &[f64]) -> Result<Self> {
        let coords = angles.iter().flat_map(|t| [t.cos(), t.sin()]).collect();
        Self::from_flat(angles.len(), 2, coords)
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

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn unit(&self, i: usize) -> UnitVector {
        UnitVector::normalize(self.point(i).to_vec()).expect("stored points are unit")
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Angles of a `d = 2` configuration, in `[0, 2 pi)`.
    pub fn angles(&self) -> Result<Vec<f64>> {
        if self.d != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.d,
            });
        }
        Ok(self
            .points()
            .map(|p| p[1].atan2(p[0]).rem_euclid(std::f64::consts::TAU))
            .collect())
    }

    /// Applies the linear map `m` (row-major `d x d`) to every point.
    pub fn transformed(&self, m: &[f64]) -> Result<Self> {
        sphere::check_dim(self.d * self.d, m.len())?;
        let d = self.d;
        let mut coords = vec![0.0; self.coords.len()];
        for (src, dst) in self.points().zip(coords.chunks_exact_mut(d)) {
            for (a, out) in dst.iter_mut().enumerate() {
                *out = sphere::dot(&m[a * d..(a + 1) * d], src);
            }
        }
        Self::from_flat_with_masses(self.n, d, coords, self.masses.clone())
    }

    /// Reorders tokens so that new token `k` is old token `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        sphere::check_dim(self.n, perm.len())?;
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut masses = Vec::with_capacity(self.n);
        for &k in perm {
            coords.extend_from_slice(self.point(k));
            masses.push(self.masses[k]);
        }
        Self::from_flat_with_masses(self.n, self.d, coords, masses)
    }

    /// Replaces the coordinates, keeping masses. Used by integrators whose buffers
    /// are already normalized.
    pub(crate) fn with_coords(&self, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), self.coords.len());
        TokenConfiguration {
            n: self.n,
            d: self.d,
            coords,
            masses: self.masses.clone(),
        }
    }
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub(crate) fn from_vec(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        SquareMatrix { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-token velocities, row-major `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocities {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Velocities {
    pub(crate) fn from_vec(n: usize, d: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Velocities { n, d, data }
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

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The velocity of token `i` as a tangent vector at its base point.
    pub fn tangent(&self, cfg: &TokenConfiguration, i: usize) -> sphere::TangentVector {
        sphere::TangentVector {
            base: cfg.unit(i),
            dir: self.get(i).to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Velocities) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Velocities {
        Velocities::from_vec(self.n, self.d, self.data.iter().map(|v| v * s).collect())
    }
}
