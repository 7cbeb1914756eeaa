//! Observables along trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::gram_into;
use crate::sphere::{self, chord_sq, geodesic_slices, UnitVector};
use crate::tokens::{SquareMatrix, TokenConfiguration};

/// Snapshot of every scalar diagnostic for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub energy: f64,
    pub min_pairwise: f64,
    pub mean_pairwise: f64,
    pub cluster_count: usize,
    /// `None` unless `d = 2`.
    pub order_parameter: Option<f64>,
    pub w2_to_dirac: f64,
    pub histogram: Histogram,
}

impl DiagnosticsReport {
    /// `center` defaults to the normalized mass-weighted mean (or the first token if
    /// the mean vanishes).
    pub fn compute(
        cfg: &TokenConfiguration,
        beta: f64,
        tau: f64,
        bins: usize,
        center: Option<&UnitVector>,
    ) -> Result<Self> {
        let stats = pairwise_stats(cfg);
        let center = match center {
            Some(c) => c.clone(),
            None => mean_direction(cfg),
        };
        let histogram = if cfg.len() >= 2 {
            inner_product_histogram(cfg, bins)?
        } else {
            Histogram::empty(bins)?
        };
        Ok(DiagnosticsReport {
            energy: interaction_energy(cfg, beta)?,
            min_pairwise: stats.min,
            mean_pairwise: stats.mean,
            cluster_count: cluster_count(cfg, tau).count,
            order_parameter: (cfg.dim() == 2).then(|| order_parameter(cfg)),
            w2_to_dirac: w2_to_dirac(cfg, &center)?,
            histogram,
        })
    }
}

/// `(1/2 beta) sum_ij m_i m_j e^{beta <x_i,x_j>}`, self-pairs included. At
/// `beta = 0` returns `(1/2)|sum_i m_i x_i|^2`, the limit after dropping the
/// divergent constant `1/(2 beta)`.
///
/// Overflows to infinity beyond `beta ~ 700`; use [`interaction_energy_scaled`]
/// there.
pub fn interaction_energy(cfg: &TokenConfiguration, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        return Ok(0.5 * mean_vector(cfg).iter().map(|c| c * c).sum::<f64>());
    }
    Ok(interaction_energy_scaled(cfg, beta)? * beta.exp())
}

/// `e^{-beta} E_beta`, finite for every `beta > 0`. Ratios and relative variations
/// equal those of the raw energy.
pub fn interaction_energy_scaled(cfg: &TokenConfiguration, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "scaled interaction energy needs finite beta > 0, got {beta}"
        )));
    }
    let gram = pairwise_gram(cfg);
    let m = cfg.masses();
    let mut total = 0.0;
    for i in 0..cfg.len() {
        let row = gram.row(i);
        let mut s = 0.0;
        for j in 0..cfg.len() {
            s += m[j] * (beta * (row[j] - 1.0)).exp();
        }
        total += m[i] * s;
    }
    Ok(total / (2.0 * beta))
}

/// Gram matrix of inner products, clamped to `[-1, 1]`.
pub fn pairwise_gram(cfg: &TokenConfiguration) -> SquareMatrix {
    let n = cfg.len();
    let mut g = vec![0.0; n * n];
    gram_into(cfg.coords(), n, cfg.dim(), &mut g);
    SquareMatrix::from_vec(n, g)
}

/// Summary of off-diagonal inner products. The gaps `1 - <x_i, x_j>` are computed
/// as half squared chord lengths, which keeps their relative precision when tokens
/// nearly coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseStats {
    pub min: f64,
    pub mean: f64,
    pub max_gap: f64,
    pub mean_gap: f64,
}

pub fn pairwise_stats(cfg: &TokenConfiguration) -> PairwiseStats {
    let n = cfg.len();
    if n < 2 {
        return PairwiseStats {
            min: 1.0,
            mean: 1.0,
            max_gap: 0.0,
            mean_gap: 0.0,
        };
    }
    let mut max_gap: f64 = 0.0;
    let mut sum_gap = 0.0;
    for i in 0..n {
        for j in 0..i {
            let gap = 0.5 * chord_sq(cfg.point(i), cfg.point(j));
            max_gap = max_gap.max(gap);
            sum_gap += gap;
        }
    }
    let mean_gap = sum_gap / (n * (n - 1) / 2) as f64;
    PairwiseStats {
        min: (1.0 - max_gap).clamp(-1.0, 1.0),
        mean: (1.0 - mean_gap).clamp(-1.0, 1.0),
        max_gap,
        mean_gap,
    }
}

/// Uniform-bin histogram over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn empty(bins: usize) -> Result<Self> {
        if bins < 1 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        let edges = (0..=bins)
            .map(|k| -1.0 + 2.0 * k as f64 / bins as f64)
            .collect();
        Ok(Histogram {
            edges,
            counts: vec![0; bins],
        })
    }

    /// Index of the bin containing `value`; 1 falls in the last bin.
    pub fn bin_of(&self, value: f64) -> usize {
        let bins = self.counts.len();
        let k = ((value + 1.0) / 2.0 * bins as f64).floor();
        (k.max(0.0) as usize).min(bins - 1)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of the `n(n-1)` ordered off-diagonal inner products.
pub fn inner_product_histogram(cfg: &TokenConfiguration, bins: usize) -> Result<Histogram> {
    if cfg.len() < 2 {
        return Err(Error::invalid("histogram needs at least two tokens"));
    }
    let mut h = Histogram::empty(bins)?;
    let g = pairwise_gram(cfg);
    for i in 0..cfg.len() {
        for j in 0..cfg.len() {
            if i != j {
                let k = h.bin_of(g.get(i, j));
                h.counts[k] += 1;
            }
        }
    }
    Ok(h)
}

/// Connected components of the graph with an edge wherever `<x_i, x_j> >= tau`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clusters {
    pub count: usize,
    /// Smallest token index of each token's component.
    pub labels: Vec<usize>,
}

pub fn cluster_count(cfg: &TokenConfiguration, tau: f64) -> Clusters {
    let n = cfg.len();
    let mut dsu = DisjointSets::new(n);
    for i in 0..n {
        for j in 0..i {
            if sphere::dot(cfg.point(i), cfg.point(j)) >= tau {
                dsu.union(i, j);
            }
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| dsu.find(i)).collect();
    let count = labels.iter().enumerate().filter(|(i, l)| *i == **l).count();
    Clusters { count, labels }
}

/// Union-find whose representative is always the smallest index in the set.
struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// `|(1/n) sum_j e^{i theta_j}|`.
pub fn circular_order_parameter(angles: &[f64]) -> f64 {
    if angles.is_empty() {
        return 0.0;
    }
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), t| (s + t.sin(), c + t.cos()));
    (s * s + c * c).sqrt() / angles.len() as f64
}

/// Norm of the mass-weighted mean of the tokens; equals the circular order
/// parameter for uniform masses in `d = 2`.
pub fn order_parameter(cfg: &TokenConfiguration) -> f64 {
    sphere::norm(&mean_vector(cfg))
}

fn mean_vector(cfg: &TokenConfiguration) -> Vec<f64> {
    let mut mean = vec![0.0; cfg.dim()];
    for (p, m) in cfg.points().zip(cfg.masses()) {
        mean.iter_mut().zip(p).for_each(|(a, x)| *a += m * x);
    }
    mean
}

pub(crate) fn mean_direction(cfg: &TokenConfiguration) -> UnitVector {
    UnitVector::normalize(mean_vector(cfg)).unwrap_or_else(|_| cfg.unit(0))
}

/// Exact 2-Wasserstein distance (geodesic cost) from the token measure to a Dirac.
pub fn w2_to_dirac(cfg: &TokenConfiguration, center: &UnitVector) -> Result<f64> {
    sphere::check_dim(cfg.dim(), center.dim())?;
    let s: f64 = cfg
        .points()
        .zip(cfg.masses())
        .map(|(p, m)| {
            let g = geodesic_slices(p, center.as_slice());
            m * g * g
        })
        .sum();
    Ok(s.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    /// `value ~ e^{-rate t}`
    Exponential,
    /// `value ~ t^{-rate}`
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub kind: RateKind,
    pub rate: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

/// Least-squares fit of `log value` against `t` (exponential) or `log t` (power)
/// over the samples with `t` in the closed window. Returns the negated slope.
pub fn fit_rate(series: &[(f64, f64)], kind: RateKind, window: (f64, f64)) -> Result<RateFit> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::invalid(format!("degenerate fit window [{t0}, {t1}]")));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= t0 && *t <= t1)
        .copied()
        .collect();
    if pts.len() < 8 {
        return Err(Error::invalid(format!(
            "fit window [{t0}, {t1}] holds {} samples, need at least 8",
            pts.len()
        )));
    }
    let mut xy = Vec::with_capacity(pts.len());
    for (t, v) in pts {
        if !(v > 0.0) {
            return Err(Error::invalid(format!("nonpositive value {v} at t = {t}")));
        }
        let x = match kind {
            RateKind::Exponential => t,
            RateKind::Power => {
                if !(t > 0.0) {
                    return Err(Error::invalid("power-law fits need t > 0"));
                }
                t.ln()
            }
        };
        xy.push((x, v.ln()));
    }
    let (slope, r_squared) = least_squares(&xy)?;
    Ok(RateFit {
        kind,
        rate: -slope,
        r_squared,
        window,
    })
}

/// Slope and coefficient of determination of the ordinary least-squares line.
fn least_squares(xy: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("fit window has no spread in the abscissa"));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok((slope, r2))
}
