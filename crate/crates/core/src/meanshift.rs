//! Attention as mean shift: the gradient of a log kernel density on the sphere,
//! and mode counting for one-dimensional Gaussian-kernel density estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{self, chord_sq, RandomStream, TangentVector, UnitVector};
use crate::tokens::TokenConfiguration;

/// Kernel mass beyond this many bandwidths is below `e^{-720}` and is skipped.
const KERNEL_CUTOFF: f64 = 38.0;

const PLATEAU_TOLERANCE: f64 = 1e-12;

/// Riemannian gradient at each token of `log (K * mu)` with the Gaussian kernel
/// `K(z) = exp(-(beta/2)|z|^2)` and `mu` the weighted token measure.
///
/// Evaluated from squared distances with its own log-sum-exp; the result equals
/// `beta` times the SA velocity.
pub fn meanshift_velocity(cfg: &TokenConfiguration, beta: f64) -> Result<Vec<TangentVector>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite and > 0, got {beta}")));
    }
    let (n, d) = (cfg.len(), cfg.dim());
    let m = cfg.masses();
    let mut logits = vec![0.0; n];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let xi = cfg.point(i);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = m[j].ln() - 0.5 * beta * chord_sq(xi, cfg.point(j));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut grad = vec![0.0; d];
        for (j, l) in logits.iter().enumerate() {
            let w = (l - max).exp();
            z += w;
            for ((g, a), b) in grad.iter_mut().zip(cfg.point(j)).zip(xi) {
                *g += w * (a - b);
            }
        }
        grad.iter_mut().for_each(|g| *g *= beta / z);
        sphere::project_in_place(xi, &mut grad);
        out.push(TangentVector {
            base: cfg.unit(i),
            dir: grad,
        });
    }
    Ok(out)
}

/// `log sum_j m_j exp(-(beta/2)|y - x_j|^2)`.
pub fn log_kde_sphere(cfg: &TokenConfiguration, beta: f64, y: &UnitVector) -> Result<f64> {
    sphere::check_dim(cfg.dim(), y.dim())?;
    let logits: Vec<f64> = cfg
        .points()
        .zip(cfg.masses())
        .map(|(x, m)| m.ln() - 0.5 * beta * chord_sq(x, y.as_slice()))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde1dSpec {
    pub sample: Vec<f64>,
    /// Bandwidth is `1/sqrt(beta)`.
    pub beta: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
}

impl Kde1dSpec {
    /// Grid covering the sample plus `6h` on each side at spacing `h/8`.
    pub fn covering(sample: Vec<f64>, beta: f64) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::invalid("kernel density estimate needs a nonempty sample"));
        }
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
        }
        let h = 1.0 / beta.sqrt();
        let lo = sample.iter().copied().fold(f64::INFINITY, f64::min) - 6.0 * h;
        let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * h;
        let points = (((hi - lo) / (h / 8.0)).ceil() as usize + 1).max(16);
        Ok(Kde1dSpec {
            sample,
            beta,
            grid_lo: lo,
            grid_hi: hi,
            grid_points: points,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample.is_empty() {
            return Err(Error::invalid("kernel density estimate needs a nonempty sample"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be finite and > 0, got {}", self.beta)));
        }
        if !(self.grid_lo < self.grid_hi) {
            return Err(Error::invalid("grid_lo must be below grid_hi"));
        }
        if self.grid_points < 16 {
            return Err(Error::invalid("the grid needs at least 16 points"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = (self.grid_hi - self.grid_lo) / (self.grid_points - 1) as f64;
        (0..self.grid_points)
            .map(|k| self.grid_lo + k as f64 * step)
            .collect()
    }
}

/// `p(g) = (1/N) sum_j exp(-(beta/2)(g - s_j)^2)` on the grid (unnormalized
/// kernel). Only samples within `38h` of a grid point contribute.
pub fn kde_1d(spec: &Kde1dSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut sorted = spec.sample.clone();
    sorted.sort_by(f64::total_cmp);
    let radius = KERNEL_CUTOFF / spec.beta.sqrt();
    let inv_n = 1.0 / sorted.len() as f64;
    let half_beta = 0.5 * spec.beta;
    let mut start = 0;
    Ok(spec
        .grid()
        .into_iter()
        .map(|g| {
            while start < sorted.len() && sorted[start] < g - radius {
                start += 1;
            }
            let mut s = 0.0;
            for &x in sorted[start..].iter().take_while(|x| **x <= g + radius) {
                let z = g - x;
                s += (-half_beta * z * z).exp();
            }
            s * inv_n
        })
        .collect())
}

/// Strict interior local maxima; runs of equal values (relative tolerance
/// `1e-12`) count once and runs touching the boundary never count.
pub fn count_modes(density: &[f64]) -> usize {
    let mut runs: Vec<f64> = Vec::with_capacity(density.len());
    for &v in density {
        match runs.last() {
            Some(&last) if (v - last).abs() <= PLATEAU_TOLERANCE * v.abs().max(last.abs()) => {}
            _ => runs.push(v),
        }
    }
    runs.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub beta: f64,
    pub mean_modes: f64,
    pub std_modes: f64,
    /// `mean_modes / sqrt(beta ln beta)`.
    pub ratio: f64,
}

/// Mode counts of Gaussian-kernel estimates built from `n` standard normal draws.
/// Each seed draws one sample that is reused for every `beta`.
pub fn mode_scaling_experiment(n: usize, betas: &[f64], seeds: &[u64]) -> Result<Vec<ModeRow>> {
    if n < 2 {
        return Err(Error::invalid("mode scaling needs n >= 2"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("mode scaling needs at least one seed"));
    }
    let (lo, hi) = ((n as f64).powf(0.1), (n as f64).powf(1.9));
    for &b in betas {
        if !(b >= lo && b <= hi) {
            return Err(Error::invalid(format!(
                "beta = {b} outside [n^0.1, n^1.9] = [{lo:.4}, {hi:.4}]"
            )));
        }
    }
    let samples: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&seed| {
            let mut rng = RandomStream::new(seed, 0);
            (0..n).map(|_| rng.standard_normal()).collect()
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..betas.len())
        .flat_map(|b| (0..seeds.len()).map(move |s| (b, s)))
        .collect();
    let counts: Vec<usize> = cells
        .par_iter()
        .map(|&(b, s)| {
            let spec = Kde1dSpec::covering(samples[s].clone(), betas[b])?;
            Ok(count_modes(&kde_1d(&spec)?))
        })
        .collect::<Result<_>>()?;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let m: Vec<f64> = counts[b * seeds.len()..(b + 1) * seeds.len()]
                .iter()
                .map(|&c| c as f64)
                .collect();
            let (mean, std) = mean_std(&m);
            ModeRow {
                beta,
                mean_modes: mean,
                std_modes: std,
                ratio: mean / (beta * beta.ln()).sqrt(),
            }
        })
        .collect())
}

/// Mean and sample standard deviation (zero for a single value).
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
