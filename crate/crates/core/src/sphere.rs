//! Primitive geometry on the unit sphere: projections, retraction, distances and
//! random sampling.
//!
//! The public types ([`UnitVector`], [`TangentVector`]) are meant for single-point
//! work and tests. The integrators operate on flat row-major coordinate buffers and
//! use the slice helpers at the bottom of this module.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tokens::TokenConfiguration;

/// Unit-norm tolerance accepted when wrapping caller-provided coordinates.
const UNIT_TOLERANCE: f64 = 1e-8;

/// A point on the sphere. Coordinates are renormalized on construction, so the norm
/// is 1 to machine precision.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes arbitrary nonzero coordinates onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("a unit vector needs at least one coordinate"));
        }
        normalize_in_place(&mut coords)?;
        Ok(UnitVector(coords))
    }

    /// Wraps coordinates that are already unit norm (within 1e-8), removing the
    /// residual rounding by renormalizing.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let nrm = norm(&coords);
        if (nrm - 1.0).abs() > UNIT_TOLERANCE || !nrm.is_finite() {
            return Err(Error::invalid(format!(
                "coordinates have norm {nrm}, expected 1"
            )));
        }
        Self::normalize(coords)
    }

    /// The `k`-th standard basis vector of dimension `d`.
    pub fn basis(d: usize, k: usize) -> Self {
        assert!(k < d, "basis index {k} out of range for dimension {d}");
        let mut coords = vec![0.0; d];
        coords[k] = 1.0;
        UnitVector(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A velocity attached to a base point; `dir` is orthogonal to `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: UnitVector,
    pub dir: Vec<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        norm(&self.dir)
    }
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the generator's native stream
/// counter, so distinct ids give independent sequences under one seed.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for sub-entity `index` (e.g. a particle). The child seed mixes
    /// this stream's seed and id; the child id is `index`.
    pub fn child(&self, index: u64) -> RandomStream {
        RandomStream::new(mix64(self.seed ^ mix64(self.stream_id)), index)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer; used to derive stream ids from cell coordinates.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one stream id, order-sensitively.
pub fn stream_id_of(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3u64, |acc, &w| mix64(acc ^ mix64(w)))
}

/// `v - <x, v> x`, the orthogonal projection onto the tangent space at `x`.
pub fn tangent_project(x: &UnitVector, v: &[f64]) -> Result<TangentVector> {
    check_dim(x.dim(), v.len())?;
    let mut dir = v.to_vec();
    project_in_place(x.as_slice(), &mut dir);
    Ok(TangentVector {
        base: x.clone(),
        dir,
    })
}

/// Metric-projection retraction `(x + h v) / |x + h v|`.
pub fn retract(x: &UnitVector, v: &TangentVector, h: f64) -> Result<UnitVector> {
    check_dim(x.dim(), v.dir.len())?;
    if !(h >= 0.0) {
        return Err(Error::invalid(format!("retraction step must be >= 0, got {h}")));
    }
    if h == 0.0 {
        return Ok(x.clone());
    }
    let mut y: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(&v.dir)
        .map(|(a, b)| a + h * b)
        .collect();
    normalize_in_place(&mut y)?;
    Ok(UnitVector(y))
}

/// Great-circle distance in `[0, pi]`.
pub fn geodesic_distance(x: &UnitVector, y: &UnitVector) -> f64 {
    geodesic_slices(x.as_slice(), y.as_slice())
}

pub(crate) fn geodesic_slices(x: &[f64], y: &[f64]) -> f64 {
    // Chord form stays accurate near zero, where acos of the dot loses half the digits.
    let chord = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// Uniform sample on the sphere of `R^d` (normalized standard Gaussian).
pub fn sample_uniform_sphere(d: usize, rng: &mut RandomStream) -> Result<UnitVector> {
    if d < 2 {
        return Err(Error::invalid(format!("sphere dimension must be >= 2, got {d}")));
    }
    loop {
        let coords: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        // A zero draw has probability zero; resample rather than fail.
        if let Ok(u) = UnitVector::normalize(coords) {
            return Ok(u);
        }
    }
}

/// Standard Gaussian in the tangent space at `x` (ambient Gaussian, then projected).
pub fn sample_tangent_gaussian(x: &UnitVector, rng: &mut RandomStream) -> TangentVector {
    let mut dir: Vec<f64> = (0..x.dim()).map(|_| rng.standard_normal()).collect();
    project_in_place(x.as_slice(), &mut dir);
    TangentVector {
        base: x.clone(),
        dir,
    }
}

/// `n` unit vectors in `R^d` with common pairwise inner product `rho`, randomly
/// rotated.
///
/// The Gram matrix `(1 - rho) I + rho J` is factored by symmetric
/// eigendecomposition, its rows are embedded in the first `n` coordinates and then
/// mapped through the first `n` columns of a Haar-random orthogonal matrix.
pub fn equiangular_frame(
    n: usize,
    rho: f64,
    d: usize,
    rng: &mut RandomStream,
) -> Result<TokenConfiguration> {
    if n == 0 {
        return Err(Error::invalid("equiangular frame needs n >= 1"));
    }
    if d < n {
        return Err(Error::invalid(format!(
            "equiangular frame needs d >= n, got d = {d}, n = {n}"
        )));
    }
    let lower = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
    if !(rho >= lower - 1e-12 && rho <= 1.0) {
        return Err(Error::invalid(format!(
            "rho = {rho} outside the admissible interval [{lower}, 1]"
        )));
    }

    let gram = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
    let eig = SymmetricEigen::new(gram);
    let mut embed = eig.eigenvectors.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        embed.column_mut(k).scale_mut(s);
    }

    let rotation = haar_columns(d, n, rng);
    // Row i of `embed` holds the coordinates of token i in the n-dim frame.
    let points = &rotation * embed.transpose();
    let mut coords = Vec::with_capacity(n * d);
    for i in 0..n {
        coords.extend(points.column(i).iter());
    }
    TokenConfiguration::from_flat(n, d, coords)
}

/// First `k` columns of a Haar-distributed orthogonal `d x d` matrix.
pub(crate) fn haar_columns(d: usize, k: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, k, |_, _| rng.standard_normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Dot product with four fixed accumulators; the summation order depends only on
/// the length, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Squared chord length `|a - b|^2`; equals `2 - 2<a, b>` on the sphere but keeps
/// full relative precision when the points are close.
#[inline]
pub(crate) fn chord_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let nrm = norm(v);
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(Error::DegenerateStep);
    }
    let inv = 1.0 / nrm;
    v.iter_mut().for_each(|c| *c *= inv);
    Ok(())
}

#[inline]
pub(crate) fn project_in_place(x: &[f64], v: &mut [f64]) {
    let c = dot(x, v);
    v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= c * xi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn project_examples() {
        let e1 = UnitVector::basis(3, 0);
        let p = tangent_project(&e1, &[1.0, 0.0, 0.0]).unwrap();
        assert_close(&p.dir, &[0.0; 3], 0.0);
        let p = tangent_project(&e1, &[0.0, 1.0, 0.0]).unwrap();
        assert_close(&p.dir, &[0.0, 1.0, 0.0], 0.0);
        let x = UnitVector::normalize(vec![1.0, 1.0, 0.0]).unwrap();
        let p = tangent_project(&x, &[1.0, 0.0, 0.0]).unwrap();
        assert_close(&p.dir, &[0.5, -0.5, 0.0], 1e-15);
        assert!(matches!(
            tangent_project(&x, &[1.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn retract_examples() {
        let e1 = UnitVector::basis(3, 0);
        let v = tangent_project(&e1, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(retract(&e1, &v, 0.0).unwrap(), e1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_close(retract(&e1, &v, 1.0).unwrap().as_slice(), &[s, s, 0.0], 1e-15);
        let far = retract(&e1, &v, 1e12).unwrap();
        assert_close(far.as_slice(), &[0.0, 1.0, 0.0], 1e-11);
        assert!(retract(&e1, &v, -1.0).is_err());
    }

    #[test]
    fn retract_antipodal_overshoot_is_degenerate() {
        // Not reachable with a tangent direction; build the step by hand.
        let e1 = UnitVector::basis(2, 0);
        let v = TangentVector {
            base: e1.clone(),
            dir: vec![-1.0, 0.0],
        };
        assert!(matches!(retract(&e1, &v, 1.0), Err(Error::DegenerateStep)));
    }

    #[test]
    fn geodesic_examples() {
        let e1 = UnitVector::basis(3, 0);
        let e2 = UnitVector::basis(3, 1);
        let m1 = UnitVector::normalize(vec![-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(geodesic_distance(&e1, &e1), 0.0);
        assert!((geodesic_distance(&e1, &e2) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((geodesic_distance(&e1, &m1) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn uniform_sampling_is_deterministic_and_rejects_small_dimension() {
        let a = sample_uniform_sphere(5, &mut RandomStream::new(3, 9)).unwrap();
        let b = sample_uniform_sphere(5, &mut RandomStream::new(3, 9)).unwrap();
        let c = sample_uniform_sphere(5, &mut RandomStream::new(3, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_uniform_sphere(1, &mut RandomStream::new(0, 0)).is_err());
    }

    #[test]
    fn uniform_sampling_mean_is_small() {
        let mut rng = RandomStream::new(11, 0);
        let mut mean = [0.0; 8];
        let draws = 100_000;
        for _ in 0..draws {
            let u = sample_uniform_sphere(8, &mut rng).unwrap();
            mean.iter_mut().zip(u.as_slice()).for_each(|(m, x)| *m += x);
        }
        let nrm = norm(&mean) / draws as f64;
        assert!(nrm < 0.02, "mean norm {nrm}");
    }

    #[test]
    fn high_dimensional_samples_are_nearly_orthogonal() {
        // max |<x_i, x_j>| over 32 samples in d = 1024 stays below 0.2 for all seeds.
        for seed in 0..50 {
            let mut rng = RandomStream::new(seed, 0);
            let pts: Vec<_> = (0..32)
                .map(|_| sample_uniform_sphere(1024, &mut rng).unwrap())
                .collect();
            for i in 0..32 {
                for j in 0..i {
                    assert!(pts[i].dot(pts[j].as_slice()).abs() < 0.2);
                }
            }
        }
    }

    #[test]
    fn tangent_gaussian_covariance_matches_projector() {
        let x = UnitVector::normalize(vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let mut rng = RandomStream::new(5, 1);
        let d = x.dim();
        let mut cov = vec![0.0; d * d];
        let draws = 100_000;
        for _ in 0..draws {
            let t = sample_tangent_gaussian(&x, &mut rng);
            assert!(x.dot(&t.dir).abs() <= 1e-10);
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] += t.dir[a] * t.dir[b];
                }
            }
        }
        let xs = x.as_slice();
        for a in 0..d {
            for b in 0..d {
                let expected = if a == b { 1.0 } else { 0.0 } - xs[a] * xs[b];
                let got = cov[a * d + b] / draws as f64;
                assert!((got - expected).abs() < 0.02, "cov[{a},{b}] = {got}");
            }
        }
        let t1 = sample_tangent_gaussian(&x, &mut RandomStream::new(2, 2));
        let t2 = sample_tangent_gaussian(&x, &mut RandomStream::new(2, 2));
        assert_eq!(t1, t2);
    }

    #[test]
    fn equiangular_frame_examples() {
        let mut rng = RandomStream::new(1, 0);
        let cfg = equiangular_frame(4, 1.0, 6, &mut rng).unwrap();
        for i in 1..4 {
            assert_close(cfg.point(i), cfg.point(0), 1e-12);
        }

        let cfg = equiangular_frame(5, 0.0, 5, &mut rng).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let g = dot(cfg.point(i), cfg.point(j));
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }

        // Three coplanar vectors at 120 degrees.
        let cfg = equiangular_frame(3, -0.5, 3, &mut rng).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert!((dot(cfg.point(i), cfg.point(j)) + 0.5).abs() < 1e-10);
            }
        }
        let normal = cross(cfg.point(0), cfg.point(1));
        assert!(dot(&normal, cfg.point(2)).abs() < 1e-10);
    }

    #[test]
    fn equiangular_frame_rejects_bad_inputs() {
        let mut rng = RandomStream::new(1, 0);
        assert!(equiangular_frame(4, 0.2, 3, &mut rng).is_err());
        assert!(equiangular_frame(4, -0.5, 4, &mut rng).is_err());
        assert!(equiangular_frame(4, 1.5, 4, &mut rng).is_err());
    }

    fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
        vec![
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    fn unit_and_vec() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..9).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0f64..1.0, d),
                prop::collection::vec(-3.0f64..3.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_tangent((x, v) in unit_and_vec()) {
            prop_assume!(norm(&x) > 1e-3);
            let x = UnitVector::normalize(x).unwrap();
            let p = tangent_project(&x, &v).unwrap();
            prop_assert!(x.dot(&p.dir).abs() <= 1e-10);
            let pp = tangent_project(&x, &p.dir).unwrap();
            for (a, b) in p.dir.iter().zip(&pp.dir) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn retraction_lands_on_sphere((x, v) in unit_and_vec(), h in 0.0f64..50.0) {
            prop_assume!(norm(&x) > 1e-3);
            let x = UnitVector::normalize(x).unwrap();
            let t = tangent_project(&x, &v).unwrap();
            let y = retract(&x, &t, h).unwrap();
            prop_assert!((norm(y.as_slice()) - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn frame_gram_is_equiangular(n in 2usize..7, extra in 0usize..4, frac in 0.0f64..1.0, seed in 0u64..1000) {
            let lower = -1.0 / (n as f64 - 1.0);
            let rho = lower + frac * (1.0 - lower);
            let cfg = equiangular_frame(n, rho, n + extra, &mut RandomStream::new(seed, 0)).unwrap();
            let gram = crate::diagnostics::pairwise_gram(&cfg);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { rho };
                    prop_assert!((gram.get(i, j) - want).abs() <= 1e-10);
                }
            }
        }
    }
}
