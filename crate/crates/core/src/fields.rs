//! Velocity fields of the attention dynamics: the softmax attention matrix, the
//! normalized (SA) and unnormalized (USA) projected flows, the Kuramoto reduction on
//! the circle, the hardmax limit, and the normalization-scheme family acting on
//! (direction, radius) pairs.
//!
//! Masses enter the softmax as weights on the keys, so a configuration of weighted
//! Diracs behaves like the corresponding duplicated-token configuration.
//!
//! Every sum over tokens runs in index order; outputs are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{self, dot, project_in_place};
use crate::tokens::{SquareMatrix, TokenConfiguration, Velocities};

/// Which velocity field drives the tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Sa,
    Usa,
    Kuramoto,
    Hardmax,
    NormalizedAttention,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Sa => "sa",
            Model::Usa => "usa",
            Model::Kuramoto => "kuramoto",
            Model::Hardmax => "hardmax",
            Model::NormalizedAttention => "normalized_attention",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(Model::Sa),
            "usa" => Ok(Model::Usa),
            "kuramoto" => Ok(Model::Kuramoto),
            "hardmax" => Ok(Model::Hardmax),
            "normalized_attention" | "na" => Ok(Model::NormalizedAttention),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

/// Layer-normalization placement; selects the speed factor and the radial law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScheme {
    PostLn,
    PreLn,
    PeriLn,
}

impl NormalizationScheme {
    pub const ALL: [NormalizationScheme; 3] = [
        NormalizationScheme::PostLn,
        NormalizationScheme::PreLn,
        NormalizationScheme::PeriLn,
    ];
}

impl fmt::Display for NormalizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationScheme::PostLn => "post_ln",
            NormalizationScheme::PreLn => "pre_ln",
            NormalizationScheme::PeriLn => "peri_ln",
        })
    }
}

impl FromStr for NormalizationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "post_ln" => Ok(NormalizationScheme::PostLn),
            "pre_ln" => Ok(NormalizationScheme::PreLn),
            "peri_ln" => Ok(NormalizationScheme::PeriLn),
            other => Err(Error::invalid(format!("unknown normalization scheme `{other}`"))),
        }
    }
}

/// A model together with its inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub model: Model,
    pub beta: f64,
    /// Only meaningful for [`Model::NormalizedAttention`].
    pub scheme: Option<NormalizationScheme>,
}

impl DynamicsSpec {
    pub fn new(model: Model, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        let scheme = (model == Model::NormalizedAttention).then_some(NormalizationScheme::PostLn);
        Ok(DynamicsSpec {
            model,
            beta,
            scheme,
        })
    }

    pub fn sa(beta: f64) -> Result<Self> {
        Self::new(Model::Sa, beta)
    }

    pub fn usa(beta: f64) -> Result<Self> {
        Self::new(Model::Usa, beta)
    }

    pub fn normalized(scheme: NormalizationScheme, beta: f64) -> Result<Self> {
        let mut spec = Self::new(Model::NormalizedAttention, beta)?;
        spec.scheme = Some(scheme);
        Ok(spec)
    }

    pub(crate) fn check_compatible(&self, cfg: &TokenConfiguration) -> Result<()> {
        if self.model == Model::Kuramoto && cfg.dim() != 2 {
            return Err(Error::invalid(format!(
                "the Kuramoto field needs d = 2 tokens, got d = {}",
                cfg.dim()
            )));
        }
        if self.model == Model::Hardmax && cfg.len() < 2 {
            return Err(Error::invalid("hardmax dynamics need at least two tokens"));
        }
        Ok(())
    }
}

/// Token directions with positive radii, `x_i = r_i theta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalState {
    pub directions: TokenConfiguration,
    pub radii: Vec<f64>,
}

impl DirectionalState {
    pub fn new(directions: TokenConfiguration, radii: Vec<f64>) -> Result<Self> {
        sphere::check_dim(directions.len(), radii.len())?;
        if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("radii must be finite and positive"));
        }
        Ok(DirectionalState { directions, radii })
    }

    /// Unit radii.
    pub fn on_sphere(directions: TokenConfiguration) -> Self {
        let n = directions.len();
        DirectionalState {
            directions,
            radii: vec![1.0; n],
        }
    }
}

/// Row-stochastic attention matrix `A_ij = m_j e^{beta <x_i,x_j>} / sum_k m_k e^{beta <x_i,x_k>}`.
pub fn attention_matrix(cfg: &TokenConfiguration, beta: f64) -> SquareMatrix {
    let n = cfg.len();
    let mut ws = Workspace::new(n, cfg.dim());
    gram_into(cfg.coords(), n, cfg.dim(), &mut ws.gram);
    let mut out = vec![0.0; n * n];
    let log_m = log_masses(cfg.masses());
    for i in 0..n {
        softmax_row(&ws.gram[i * n..(i + 1) * n], &log_m, beta, &mut out[i * n..(i + 1) * n]);
    }
    SquareMatrix::from_vec(n, out)
}

/// Normalized self-attention velocities `P_{x_i}(sum_j A_ij x_j)`.
pub fn sa_velocity(cfg: &TokenConfiguration, beta: f64) -> Velocities {
    let mut ws = Workspace::new(cfg.len(), cfg.dim());
    let mut out = vec![0.0; cfg.coords().len()];
    sa_into(cfg.coords(), cfg.masses(), cfg.len(), cfg.dim(), beta, &mut out, &mut ws);
    Velocities::from_vec(cfg.len(), cfg.dim(), out)
}

/// Unnormalized self-attention velocities `P_{x_i}(sum_j m_j e^{beta <x_i,x_j>} x_j)`.
///
/// The exponentials are shifted by the largest off-diagonal logit of each row, so the
/// result is finite whenever the true velocity is representable.
pub fn usa_velocity(cfg: &TokenConfiguration, beta: f64) -> Velocities {
    let mut ws = Workspace::new(cfg.len(), cfg.dim());
    let mut out = vec![0.0; cfg.coords().len()];
    usa_into(cfg.coords(), cfg.masses(), cfg.len(), cfg.dim(), beta, &mut out, &mut ws);
    Velocities::from_vec(cfg.len(), cfg.dim(), out)
}

/// Kuramoto angular velocities with uniform weights `1/n`.
pub fn kuramoto_rhs(angles: &[f64], beta: f64) -> Vec<f64> {
    let n = angles.len();
    let w = vec![1.0 / n.max(1) as f64; n];
    kuramoto_weighted(angles, &w, beta)
}

/// Kuramoto angular velocities with per-token weights.
pub fn kuramoto_weighted(angles: &[f64], weights: &[f64], beta: f64) -> Vec<f64> {
    angles
        .iter()
        .map(|&ti| {
            -angles
                .iter()
                .zip(weights)
                .map(|(&tj, &w)| {
                    let delta = ti - tj;
                    w * (beta * delta.cos()).exp() * delta.sin()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Closest pair `(i, j)` with `i < j`, ties broken lexicographically.
pub fn closest_pair(cfg: &TokenConfiguration) -> Result<(usize, usize)> {
    closest_pair_slices(cfg.coords(), cfg.len(), cfg.dim())
}

/// Hardmax limit field: only the closest pair moves, each toward the other along
/// their geodesic.
pub fn hardmax_velocity(cfg: &TokenConfiguration) -> Result<Velocities> {
    let mut out = vec![0.0; cfg.coords().len()];
    hardmax_into(cfg.coords(), cfg.len(), cfg.dim(), &mut out)?;
    Ok(Velocities::from_vec(cfg.len(), cfg.dim(), out))
}

/// Direction and radial velocities under a normalization scheme.
///
/// With `A_i` the softmax average of the directions seen from `theta_i`:
/// Post-LN moves directions by `P A_i` with radii pinned; Pre-LN divides the
/// direction velocity by `r_i` and grows `r_i` at rate `<theta_i, A_i>`; Peri-LN
/// does the same with `A_i` rescaled to unit norm.
pub fn normalized_attention_rhs(
    state: &DirectionalState,
    scheme: NormalizationScheme,
    beta: f64,
) -> Result<(Velocities, Vec<f64>)> {
    let cfg = &state.directions;
    let mut ws = Workspace::new(cfg.len(), cfg.dim());
    let mut dir = vec![0.0; cfg.coords().len()];
    let mut rad = vec![0.0; cfg.len()];
    normalized_into(
        cfg.coords(),
        &state.radii,
        cfg.masses(),
        cfg.len(),
        cfg.dim(),
        beta,
        scheme,
        &mut dir,
        &mut rad,
        &mut ws,
    )?;
    Ok((Velocities::from_vec(cfg.len(), cfg.dim(), dir), rad))
}

/// Velocities of any model on the sphere (radii taken as 1 for normalized
/// attention).
pub fn velocity(cfg: &TokenConfiguration, dynamics: &DynamicsSpec) -> Result<Velocities> {
    dynamics.check_compatible(cfg)?;
    let mut field = DynamicsField::new(*dynamics, cfg);
    let mut out = vec![0.0; cfg.coords().len()];
    let radii = vec![1.0; cfg.len()];
    let mut rad = vec![0.0; cfg.len()];
    field.eval(cfg.coords(), &radii, &mut out, &mut rad)?;
    Ok(Velocities::from_vec(cfg.len(), cfg.dim(), out))
}

// ---------------------------------------------------------------------------
// Slice kernels shared with the integrators.

pub(crate) struct Workspace {
    pub(crate) gram: Vec<f64>,
    weights: Vec<f64>,
    acc: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(n: usize, d: usize) -> Self {
        Workspace {
            gram: vec![0.0; n * n],
            weights: vec![0.0; n],
            acc: vec![0.0; d],
        }
    }
}

pub(crate) fn log_masses(masses: &[f64]) -> Vec<f64> {
    masses.iter().map(|m| m.ln()).collect()
}

/// Symmetric Gram matrix of the rows of `points`, clamped to `[-1, 1]`.
pub(crate) fn gram_into(points: &[f64], n: usize, d: usize, gram: &mut [f64]) {
    for i in 0..n {
        let xi = &points[i * d..(i + 1) * d];
        gram[i * n + i] = dot(xi, xi).clamp(-1.0, 1.0);
        for j in 0..i {
            let g = dot(xi, &points[j * d..(j + 1) * d]).clamp(-1.0, 1.0);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
}

/// Softmax of `beta * row + log_m` with max subtraction.
fn softmax_row(row: &[f64], log_m: &[f64], beta: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, (&g, &lm)) in out.iter_mut().zip(row.iter().zip(log_m)) {
        *o = beta * g + lm;
        if *o > max {
            max = *o;
        }
    }
    let mut z = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        z += *o;
    }
    let inv = 1.0 / z;
    out.iter_mut().for_each(|o| *o *= inv);
}

fn weighted_sum(points: &[f64], d: usize, weights: &[f64], acc: &mut [f64]) {
    acc.iter_mut().for_each(|a| *a = 0.0);
    for (w, xj) in weights.iter().zip(points.chunks_exact(d)) {
        if *w != 0.0 {
            acc.iter_mut().zip(xj).for_each(|(a, x)| *a += w * x);
        }
    }
}

pub(crate) fn sa_into(
    points: &[f64],
    masses: &[f64],
    n: usize,
    d: usize,
    beta: f64,
    out: &mut [f64],
    ws: &mut Workspace,
) {
    gram_into(points, n, d, &mut ws.gram);
    let log_m = log_masses(masses);
    for i in 0..n {
        softmax_row(&ws.gram[i * n..(i + 1) * n], &log_m, beta, &mut ws.weights);
        weighted_sum(points, d, &ws.weights, &mut ws.acc);
        let xi = &points[i * d..(i + 1) * d];
        project_in_place(xi, &mut ws.acc);
        out[i * d..(i + 1) * d].copy_from_slice(&ws.acc);
    }
}

pub(crate) fn usa_into(
    points: &[f64],
    masses: &[f64],
    n: usize,
    d: usize,
    beta: f64,
    out: &mut [f64],
    ws: &mut Workspace,
) {
    if beta == 0.0 {
        // e^0 = 1 for every pair: the field is the projected mass-weighted mean.
        weighted_sum(points, d, masses, &mut ws.acc);
        for i in 0..n {
            let o = &mut out[i * d..(i + 1) * d];
            o.copy_from_slice(&ws.acc);
            project_in_place(&points[i * d..(i + 1) * d], o);
        }
        return;
    }
    gram_into(points, n, d, &mut ws.gram);
    for i in 0..n {
        let row = &ws.gram[i * n..(i + 1) * n];
        // The self term projects to zero; leave it out and shift by the largest
        // remaining logit.
        let shift = (0..n)
            .filter(|&j| j != i && masses[j] > 0.0)
            .map(|j| beta * row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            out[i * d..(i + 1) * d].iter_mut().for_each(|o| *o = 0.0);
            continue;
        }
        for j in 0..n {
            ws.weights[j] = if j == i {
                0.0
            } else {
                masses[j] * (beta * row[j] - shift).exp()
            };
        }
        weighted_sum(points, d, &ws.weights, &mut ws.acc);
        project_in_place(&points[i * d..(i + 1) * d], &mut ws.acc);
        let scale = shift.exp();
        for (o, a) in out[i * d..(i + 1) * d].iter_mut().zip(&ws.acc) {
            *o = a * scale;
        }
    }
}

pub(crate) fn kuramoto_into(points: &[f64], masses: &[f64], n: usize, beta: f64, out: &mut [f64]) {
    let angles: Vec<f64> = (0..n).map(|i| points[2 * i + 1].atan2(points[2 * i])).collect();
    let rates = kuramoto_weighted(&angles, masses, beta);
    for i in 0..n {
        let (s, c) = angles[i].sin_cos();
        out[2 * i] = -s * rates[i];
        out[2 * i + 1] = c * rates[i];
    }
}

pub(crate) fn closest_pair_slices(points: &[f64], n: usize, d: usize) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::invalid("closest pair needs at least two tokens"));
    }
    let mut best = (0, 1);
    let mut best_val = f64::NEG_INFINITY;
    let mut min_val = f64::INFINITY;
    for i in 0..n {
        let xi = &points[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let g = dot(xi, &points[j * d..(j + 1) * d]).clamp(-1.0, 1.0);
            if g > best_val {
                best_val = g;
                best = (i, j);
            }
            min_val = min_val.min(g);
        }
    }
    if n >= 3 && best_val == min_val {
        return Err(Error::DegenerateConfiguration(
            "all pairwise inner products are equal; the closest pair is not unique".into(),
        ));
    }
    Ok(best)
}

pub(crate) fn hardmax_into(points: &[f64], n: usize, d: usize, out: &mut [f64]) -> Result<()> {
    let (a, b) = closest_pair_slices(points, n, d)?;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, j) in [(a, b), (b, a)] {
        let o = &mut out[i * d..(i + 1) * d];
        o.copy_from_slice(&points[j * d..(j + 1) * d]);
        project_in_place(&points[i * d..(i + 1) * d], o);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn normalized_into(
    points: &[f64],
    radii: &[f64],
    masses: &[f64],
    n: usize,
    d: usize,
    beta: f64,
    scheme: NormalizationScheme,
    out_dir: &mut [f64],
    out_rad: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    gram_into(points, n, d, &mut ws.gram);
    let log_m = log_masses(masses);
    for i in 0..n {
        softmax_row(&ws.gram[i * n..(i + 1) * n], &log_m, beta, &mut ws.weights);
        weighted_sum(points, d, &ws.weights, &mut ws.acc);
        if scheme == NormalizationScheme::PeriLn {
            let nrm = sphere::norm(&ws.acc);
            if !(nrm > 0.0) {
                return Err(Error::DegenerateField(format!(
                    "attention output of token {i} vanishes; Peri-LN cannot normalize it"
                )));
            }
            ws.acc.iter_mut().for_each(|a| *a /= nrm);
        }
        let xi = &points[i * d..(i + 1) * d];
        let radial = dot(xi, &ws.acc);
        project_in_place(xi, &mut ws.acc);
        let (speed, rdot) = match scheme {
            NormalizationScheme::PostLn => (1.0, 0.0),
            NormalizationScheme::PreLn | NormalizationScheme::PeriLn => (1.0 / radii[i], radial),
        };
        for (o, a) in out_dir[i * d..(i + 1) * d].iter_mut().zip(&ws.acc) {
            *o = speed * a;
        }
        out_rad[i] = rdot;
    }
    Ok(())
}

/// A velocity field on `(directions, radii)` as seen by the integrators.
pub(crate) trait Field {
    fn eval(&mut self, x: &[f64], r: &[f64], vx: &mut [f64], vr: &mut [f64]) -> Result<()>;
}

pub(crate) struct DynamicsField {
    spec: DynamicsSpec,
    masses: Vec<f64>,
    n: usize,
    d: usize,
    ws: Workspace,
}

impl DynamicsField {
    pub(crate) fn new(spec: DynamicsSpec, cfg: &TokenConfiguration) -> Self {
        DynamicsField {
            spec,
            masses: cfg.masses().to_vec(),
            n: cfg.len(),
            d: cfg.dim(),
            ws: Workspace::new(cfg.len(), cfg.dim()),
        }
    }
}

impl Field for DynamicsField {
    fn eval(&mut self, x: &[f64], r: &[f64], vx: &mut [f64], vr: &mut [f64]) -> Result<()> {
        let (n, d, beta) = (self.n, self.d, self.spec.beta);
        vr.iter_mut().for_each(|v| *v = 0.0);
        match self.spec.model {
            Model::Sa => sa_into(x, &self.masses, n, d, beta, vx, &mut self.ws),
            Model::Usa => usa_into(x, &self.masses, n, d, beta, vx, &mut self.ws),
            Model::Kuramoto => kuramoto_into(x, &self.masses, n, beta, vx),
            Model::Hardmax => hardmax_into(x, n, d, vx)?,
            Model::NormalizedAttention => normalized_into(
                x,
                r,
                &self.masses,
                n,
                d,
                beta,
                self.spec.scheme.unwrap_or(NormalizationScheme::PostLn),
                vx,
                vr,
                &mut self.ws,
            )?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{equiangular_frame, RandomStream, UnitVector};
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn two_orthogonal() -> TokenConfiguration {
        TokenConfiguration::new(vec![UnitVector::basis(3, 0), UnitVector::basis(3, 1)]).unwrap()
    }

    fn random_cfg(n: usize, d: usize, seed: u64) -> TokenConfiguration {
        TokenConfiguration::uniform_random(n, d, &mut RandomStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn attention_matrix_examples() {
        let cfg = random_cfg(5, 4, 1);
        let a = attention_matrix(&cfg, 0.0);
        assert!(a.as_slice().iter().all(|v| (v - 0.2).abs() < 1e-15));

        let single = TokenConfiguration::new(vec![UnitVector::basis(3, 2)]).unwrap();
        assert_eq!(attention_matrix(&single, 3.0).as_slice(), &[1.0]);

        let a = attention_matrix(&two_orthogonal(), 1.0);
        assert!((a.get(0, 0) - E / (E + 1.0)).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / (E + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn attention_rows_are_stochastic_at_extreme_beta() {
        let cfg = random_cfg(12, 5, 2);
        for beta in [0.0, 1.0, 10.0, 1000.0, 1e4] {
            let a = attention_matrix(&cfg, beta);
            for i in 0..12 {
                let s: f64 = a.row(i).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "beta {beta}: row sum {s}");
                assert!(a.row(i).iter().all(|v| *v >= 0.0 && v.is_finite()));
            }
        }
    }

    #[test]
    fn sa_examples() {
        let single = TokenConfiguration::new(vec![UnitVector::basis(3, 2)]).unwrap();
        assert!(sa_velocity(&single, 2.0).as_slice().iter().all(|v| *v == 0.0));

        let e = UnitVector::normalize(vec![1.0, 2.0, 3.0]).unwrap();
        let same = TokenConfiguration::new(vec![e.clone(), e.clone(), e]).unwrap();
        assert!(sa_velocity(&same, 2.0).as_slice().iter().all(|v| v.abs() < 1e-15));

        let v = sa_velocity(&two_orthogonal(), 1.0);
        let want = 1.0 / (E + 1.0);
        assert!((v.get(0)[1] - want).abs() < 1e-15);
        assert!(v.get(0)[0].abs() < 1e-15 && v.get(0)[2] == 0.0);
    }

    #[test]
    fn usa_examples() {
        let e = UnitVector::normalize(vec![1.0, -2.0, 3.0]).unwrap();
        let same = TokenConfiguration::new(vec![e.clone(), e]).unwrap();
        assert!(usa_velocity(&same, 2.0).as_slice().iter().all(|v| v.abs() < 1e-15));

        let v = usa_velocity(&two_orthogonal(), 0.0);
        assert!((v.get(0)[1] - 0.5).abs() < 1e-15 && v.get(0)[0].abs() < 1e-15);
        let v1 = usa_velocity(&two_orthogonal(), 1e-300);
        assert!(v.max_abs_diff(&v1) < 1e-15);
    }

    #[test]
    fn usa_equiangular_inner_product_rate() {
        for (n, beta, rho) in [(8, 1.0, 0.3), (5, 2.5, -0.1), (12, 0.0, 0.6)] {
            let cfg = equiangular_frame(n, rho, n + 2, &mut RandomStream::new(7, 0)).unwrap();
            let v = usa_velocity(&cfg, beta);
            let rate = dot(v.get(0), cfg.point(1)) + dot(cfg.point(0), v.get(1));
            let nf = n as f64;
            let want = (2.0 / nf) * (beta * rho).exp() * (1.0 - rho) * ((nf - 1.0) * rho + 1.0);
            assert!((rate - want).abs() <= 1e-10, "{rate} vs {want}");
        }
    }

    #[test]
    fn usa_stays_finite_for_large_beta_with_spread_tokens() {
        let cfg = equiangular_frame(4, 0.0, 4, &mut RandomStream::new(1, 0)).unwrap();
        let v = usa_velocity(&cfg, 5000.0);
        assert!(v.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn kuramoto_examples() {
        assert_eq!(kuramoto_rhs(&[1.3, 1.3, 1.3], 2.0), vec![0.0; 3]);
        let r = kuramoto_rhs(&[0.0, PI], 3.0);
        assert!(r.iter().all(|v| v.abs() < 1e-15));
        let r = kuramoto_rhs(&[0.0, PI / 2.0], 0.0);
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn hardmax_examples() {
        let v = hardmax_velocity(&two_orthogonal()).unwrap();
        assert_eq!(v.get(0), &[0.0, 1.0, 0.0]);
        assert_eq!(v.get(1), &[1.0, 0.0, 0.0]);

        let pts = [0.0, 0.4, 2.0].map(|t: f64| UnitVector::normalize(vec![t.cos(), t.sin(), 0.0]).unwrap());
        let cfg = TokenConfiguration::new(pts.to_vec()).unwrap();
        let v = hardmax_velocity(&cfg).unwrap();
        assert!(v.get(2).iter().all(|x| *x == 0.0));
        assert!(sphere::norm(v.get(0)) > 0.0);

        let a = UnitVector::basis(3, 0);
        let cfg = TokenConfiguration::new(vec![a.clone(), UnitVector::basis(3, 1), a]).unwrap();
        let v = hardmax_velocity(&cfg).unwrap();
        assert!(v.as_slice().iter().all(|x| x.abs() < 1e-15));

        // A rotated frame loses exact equality to rounding; the basis keeps it.
        let basis = TokenConfiguration::new((0..3).map(|k| UnitVector::basis(3, k)).collect()).unwrap();
        assert!(matches!(
            hardmax_velocity(&basis),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn normalized_attention_examples() {
        let e = UnitVector::normalize(vec![0.3, -0.2, 0.9]).unwrap();
        let same = TokenConfiguration::new(vec![e.clone(), e]).unwrap();
        for scheme in NormalizationScheme::ALL {
            let state = DirectionalState::new(same.clone(), vec![2.0, 0.5]).unwrap();
            let (dir, _) = normalized_attention_rhs(&state, scheme, 1.5).unwrap();
            assert!(dir.as_slice().iter().all(|v| v.abs() < 1e-15));
        }

        let cfg = random_cfg(7, 4, 3);
        let (dir, rad) =
            normalized_attention_rhs(&DirectionalState::on_sphere(cfg.clone()), NormalizationScheme::PostLn, 2.0)
                .unwrap();
        assert!(dir.max_abs_diff(&sa_velocity(&cfg, 2.0)) <= 1e-12);
        assert!(rad.iter().all(|r| *r == 0.0));

        let state = DirectionalState::new(two_orthogonal(), vec![2.0, 1.0]).unwrap();
        let (dir, rad) = normalized_attention_rhs(&state, NormalizationScheme::PreLn, 0.0).unwrap();
        assert!((dir.get(0)[1] - 0.25).abs() < 1e-15 && dir.get(0)[0].abs() < 1e-15);
        assert!((rad[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn peri_ln_rejects_vanishing_attention_output() {
        let cfg = TokenConfiguration::from_flat(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let state = DirectionalState::on_sphere(cfg);
        assert!(matches!(
            normalized_attention_rhs(&state, NormalizationScheme::PeriLn, 0.0),
            Err(Error::DegenerateField(_))
        ));
    }

    fn random_rotation(d: usize, seed: u64) -> Vec<f64> {
        let q = sphere::haar_columns(d, d, &mut RandomStream::new(seed, 99));
        let mut m = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                m[a * d + b] = q[(a, b)];
            }
        }
        m
    }

    fn rotate_velocities(v: &Velocities, m: &[f64]) -> Vec<f64> {
        let d = v.dim();
        let mut out = Vec::with_capacity(v.as_slice().len());
        for i in 0..v.len() {
            for a in 0..d {
                out.push(dot(&m[a * d..(a + 1) * d], v.get(i)));
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fields_are_rotation_equivariant(n in 2usize..10, d in 2usize..7, seed in 0u64..10_000, beta in 0.0f64..4.0) {
            let cfg = random_cfg(n, d, seed);
            let m = random_rotation(d, seed);
            let rot = cfg.transformed(&m).unwrap();
            for (a, b) in [
                (sa_velocity(&rot, beta), sa_velocity(&cfg, beta)),
                (usa_velocity(&rot, beta), usa_velocity(&cfg, beta)),
            ] {
                for (x, y) in a.as_slice().iter().zip(rotate_velocities(&b, &m)) {
                    prop_assert!((x - y).abs() <= 1e-10);
                }
            }
            if let (Ok(a), Ok(b)) = (hardmax_velocity(&rot), hardmax_velocity(&cfg)) {
                for (x, y) in a.as_slice().iter().zip(rotate_velocities(&b, &m)) {
                    prop_assert!((x - y).abs() <= 1e-10);
                }
            }
        }

        #[test]
        fn fields_are_permutation_equivariant(n in 2usize..10, d in 2usize..6, seed in 0u64..10_000, beta in 0.0f64..4.0) {
            let cfg = random_cfg(n, d, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(seed as usize % n);
            perm.swap(0, n - 1);
            let p = cfg.permuted(&perm).unwrap();
            let (vs, vp) = (sa_velocity(&cfg, beta), sa_velocity(&p, beta));
            let (us, up) = (usa_velocity(&cfg, beta), usa_velocity(&p, beta));
            for (k, &old) in perm.iter().enumerate() {
                for (x, y) in vp.get(k).iter().zip(vs.get(old)) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                for (x, y) in up.get(k).iter().zip(us.get(old)) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn usa_on_circle_matches_kuramoto(angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 1..=16), b in 0usize..3) {
            let beta = [0.0, 1.0, 3.0][b];
            let cfg = TokenConfiguration::from_angles(&angles).unwrap();
            let v = usa_velocity(&cfg, beta);
            let rates = kuramoto_rhs(&angles, beta);
            for (i, t) in angles.iter().enumerate() {
                let angular = -t.sin() * v.get(i)[0] + t.cos() * v.get(i)[1];
                prop_assert!((angular - rates[i]).abs() <= 1e-10);
            }
        }
    }
}
