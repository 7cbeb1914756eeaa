//! Scalar reduction for equiangular configurations and the single-layer
//! long-context correlation map.
//!
//! The ODE is integrated in the gap `g = 1 - rho`, which decays to zero, so a
//! relative error control keeps the tail accurate down to `g ~ 1e-300`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{fit_rate, RateFit, RateKind};
use crate::error::{Error, Result};
use crate::fields::Model;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Horizon past which a threshold is declared unreachable.
const MAX_HORIZON: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquiangularState {
    pub rho: f64,
    pub n: usize,
    pub beta: f64,
    pub model: Model,
}

impl EquiangularState {
    /// `rho` must lie in `[-1/(n-1), 1]`; the model must be SA or USA.
    pub fn new(rho: f64, n: usize, beta: f64, model: Model) -> Result<Self> {
        if !matches!(model, Model::Sa | Model::Usa) {
            return Err(Error::invalid(format!("the scalar reduction covers sa and usa, not {model}")));
        }
        if n < 2 {
            return Err(Error::invalid("the scalar reduction needs n >= 2"));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        let lo = -1.0 / (n as f64 - 1.0);
        if !(rho >= lo - 1e-12 && rho <= 1.0) {
            return Err(Error::invalid(format!("rho = {rho} outside [{lo}, 1]")));
        }
        Ok(EquiangularState {
            rho: rho.max(lo),
            n,
            beta,
            model,
        })
    }
}

/// `d rho / dt`.
pub fn equiangular_rhs(state: &EquiangularState) -> f64 {
    gap_rate(state.model, state.n as f64, state.beta, 1.0 - state.rho)
}

/// `-d g / dt` as a function of the gap; shared by the public rhs and the solver.
fn gap_rate(model: Model, n: f64, beta: f64, g: f64) -> f64 {
    let rho = 1.0 - g;
    let poly = g * ((n - 1.0) * rho + 1.0);
    match model {
        // Dividing through by e^{beta rho} leaves e^{beta g}.
        Model::Sa => 2.0 * poly / ((beta * g).exp() + (n - 1.0)),
        _ => {
            if poly == 0.0 {
                0.0
            } else {
                poly.signum() * (beta * rho + (2.0 / n * poly.abs()).ln()).exp()
            }
        }
    }
}

/// Asymptotic decay rate of `1 - rho` near synchronization.
pub fn linearized_rate(model: Model, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    match model {
        Model::Sa => Ok(2.0),
        Model::Usa => Ok(2.0 * beta.exp()),
        other => Err(Error::invalid(format!("no linearized rate for {other}"))),
    }
}

/// Accepted steps of the adaptive solve.
#[derive(Debug, Clone, PartialEq)]
pub struct EquiangularSolution {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    /// `1 - rho`, integrated directly.
    pub gap: Vec<f64>,
}

impl EquiangularSolution {
    /// Exponential fit of the gap over its last decade above `1e-12`.
    pub fn tail_rate(&self) -> Result<RateFit> {
        let floor = self
            .gap
            .iter()
            .copied()
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min)
            .max(1e-12);
        let series: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.gap)
            .filter(|(_, g)| **g >= floor && **g <= 10.0 * floor)
            .map(|(t, g)| (*t, *g))
            .collect();
        let (Some(first), Some(last)) = (series.first(), series.last()) else {
            return Err(Error::invalid("gap never reaches a fit window"));
        };
        fit_rate(&series, RateKind::Exponential, (first.0, last.0))
    }
}

/// Adaptive integration on `[0, t_final]` with step size at most `t_final / 1000`.
pub fn solve_equiangular(state: &EquiangularState, t_final: f64, tol: f64) -> Result<EquiangularSolution> {
    check_solve_args(t_final, tol)?;
    let mut sol = EquiangularSolution {
        times: vec![0.0],
        rho: vec![state.rho],
        gap: vec![1.0 - state.rho],
    };
    let solver = GapSolver::new(state, tol, (t_final / 1000.0).max(f64::MIN_POSITIVE));
    solver.advance(1.0 - state.rho, 0.0, t_final, |t, g| {
        sol.times.push(t);
        sol.gap.push(g);
        sol.rho.push(1.0 - g);
        true
    });
    Ok(sol)
}

/// `rho` at each of the increasing `times`.
pub fn solve_equiangular_at(state: &EquiangularState, times: &[f64], tol: f64) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("sample times must be nonnegative and increasing"));
    }
    let t_max = times.last().copied().unwrap_or(0.0);
    check_solve_args(t_max.max(1.0), tol)?;
    let solver = GapSolver::new(state, tol, (t_max / 1000.0).max(1e-3));
    let mut g = 1.0 - state.rho;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        g = solver.advance(g, t, target, |_, _| true).1;
        t = target;
        out.push(1.0 - g);
    }
    Ok(out)
}

fn check_solve_args(t_final: f64, tol: f64) -> Result<()> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::invalid(format!("t_final must be finite and >= 0, got {t_final}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid(format!("tolerance must lie in (0, 1), got {tol}")));
    }
    Ok(())
}

/// First time `rho(t) >= tau`, to relative accuracy `1e-6`.
pub fn threshold_crossing_time(state: &EquiangularState, tau: f64) -> Result<f64> {
    if !(tau < 1.0) {
        return Err(Error::Unreachable(tau));
    }
    if tau <= state.rho {
        return Ok(0.0);
    }
    let target = 1.0 - tau;
    let g0 = 1.0 - state.rho;
    // The lower fixed point rho = -1/(n-1) never moves.
    if (state.n as f64 - 1.0) * state.rho + 1.0 <= 1e-12 {
        return Err(Error::Unreachable(tau));
    }
    let solver = GapSolver::new(state, DEFAULT_TOLERANCE * 1e-2, f64::INFINITY);
    let mut bracket = (0.0, g0, 0.0);
    let (_, g_stop) = solver.advance(g0, 0.0, MAX_HORIZON, |t, g| {
        if g <= target {
            bracket.2 = t;
            false
        } else {
            bracket.0 = t;
            bracket.1 = g;
            true
        }
    });
    if g_stop > target {
        return Err(Error::Unreachable(tau));
    }
    let (t_lo, g_lo, mut hi) = bracket;
    let mut lo = t_lo;
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        let g_mid = solver.advance(g_lo, t_lo, mid, |_, _| true).1;
        if g_mid <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Crossing time for every `beta` in `betas`, sharing `rho0`, `n` and `tau`.
pub fn predicted_crossing_times(
    model: Model,
    n: usize,
    rho0: f64,
    tau: f64,
    betas: &[f64],
) -> Result<Vec<f64>> {
    betas
        .iter()
        .map(|&b| threshold_crossing_time(&EquiangularState::new(rho0, n, b, model)?, tau))
        .collect()
}

/// Dormand–Prince 5(4) on the gap with relative error control.
struct GapSolver {
    model: Model,
    n: f64,
    beta: f64,
    tol: f64,
    h_max: f64,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl GapSolver {
    fn new(state: &EquiangularState, tol: f64, h_max: f64) -> Self {
        GapSolver {
            model: state.model,
            n: state.n as f64,
            beta: state.beta,
            tol,
            h_max,
        }
    }

    fn f(&self, g: f64) -> f64 {
        -gap_rate(self.model, self.n, self.beta, g)
    }

    /// Integrates from `(t0, g0)` to `t1`, calling `on_step(t, g)` after each
    /// accepted step; stops early when the callback returns false. Returns the
    /// final `(t, g)`.
    fn advance(&self, g0: f64, t0: f64, t1: f64, mut on_step: impl FnMut(f64, f64) -> bool) -> (f64, f64) {
        let (mut t, mut g) = (t0, g0);
        if t1 <= t0 {
            return (t, g);
        }
        let mut k1 = self.f(g);
        if k1 == 0.0 {
            // Fixed point.
            on_step(t1, g);
            return (t1, g);
        }
        let mut h = (0.01 * g.abs().max(1e-300) / k1.abs()).min(self.h_max).min(t1 - t0);
        loop {
            let last = t + h >= t1;
            if last {
                h = t1 - t;
            }
            let k2 = self.f(g + h * A21 * k1);
            let k3 = self.f(g + h * (A31 * k1 + A32 * k2));
            let k4 = self.f(g + h * (A41 * k1 + A42 * k2 + A43 * k3));
            let k5 = self.f(g + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
            let k6 = self.f(g + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
            let g_new = g + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
            let k7 = self.f(g_new);
            let err_abs = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
            let scale = self.tol * g.abs().max(g_new.abs()).max(1e-300);
            let err = (err_abs / scale).abs();
            if err <= 1.0 || h <= 1e-14 * t.abs().max(1e-300) {
                t = if last { t1 } else { t + h };
                g = g_new;
                k1 = k7;
                if !on_step(t, g) || last {
                    return (t, g);
                }
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * grow).min(self.h_max);
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongContextQuery {
    pub rho: f64,
    pub gamma: f64,
    /// Sequence length, as a real so that lengths up to `1e12` and beyond work.
    pub n: f64,
}

impl LongContextQuery {
    pub fn new(rho: f64, gamma: f64, n: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be finite and > 0, got {gamma}")));
        }
        if !(n >= 2.0) || !n.is_finite() {
            return Err(Error::invalid(format!("n must be finite and >= 2, got {n}")));
        }
        Ok(LongContextQuery { rho, gamma, n })
    }
}

/// Inner product between two distinct output directions of one attention layer
/// with `beta = gamma ln n` applied to an equiangular input.
///
/// Up to a common factor the output of token `i` is `x_i + r sum_{j != i} x_j`
/// with `r = n^{-gamma (1 - rho)}`; both the squared norm and the cross term are
/// polynomials in `(r, rho, n)` summed with compensation.
pub fn longcontext_output_correlation(q: &LongContextQuery) -> f64 {
    let (rho, m) = (q.rho, q.n - 1.0);
    let r = (-q.gamma * (1.0 - rho) * q.n.ln()).exp();
    let r2 = r * r;
    let norm_sq = compensated_sum(&[1.0, 2.0 * r * m * rho, r2 * m, r2 * m * (m - 1.0) * rho]);
    let cross = compensated_sum(&[
        rho,
        2.0 * r,
        2.0 * r * (m - 1.0) * rho,
        r2 * (m - 1.0),
        r2 * rho,
        2.0 * r2 * (m - 1.0) * rho,
        r2 * (m - 1.0) * (m - 2.0) * rho,
    ]);
    (cross / norm_sq).clamp(-1.0, 1.0)
}

/// Large-`n` limit of [`longcontext_output_correlation`]. The critical branch is
/// taken only when `gamma == 1 / (1 - rho)` exactly.
pub fn longcontext_limit(rho: f64, gamma: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    let critical = 1.0 / (1.0 - rho);
    Ok(if gamma < critical {
        1.0
    } else if gamma == critical {
        4.0 * rho / (1.0 + 3.0 * rho)
    } else {
        rho
    })
}

/// Neumaier summation.
fn compensated_sum(terms: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(rho: f64, n: usize, beta: f64, model: Model) -> EquiangularState {
        EquiangularState::new(rho, n, beta, model).unwrap()
    }

    #[test]
    fn rhs_examples() {
        for model in [Model::Sa, Model::Usa] {
            assert_eq!(equiangular_rhs(&st(1.0, 5, 1.3, model)), 0.0);
            assert!(equiangular_rhs(&st(-0.25, 5, 1.3, model)).abs() < 1e-15);
        }
        assert!((equiangular_rhs(&st(0.0, 2, 0.0, Model::Usa)) - 1.0).abs() < 1e-15);
        for n in [2, 7, 32, 1000] {
            let v = equiangular_rhs(&st(0.0, n, 0.0, Model::Sa));
            assert!((v - 2.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn rhs_matches_unshifted_formulas() {
        for &(rho, n, beta) in &[(0.3, 8usize, 1.0), (-0.1, 4, 2.5), (0.9, 32, 0.5)] {
            let nf = n as f64;
            let p = (1.0 - rho) * ((nf - 1.0) * rho + 1.0);
            let sa = 2.0 * (beta * rho).exp() * p / (beta.exp() + (nf - 1.0) * (beta * rho).exp());
            let usa = 2.0 / nf * (beta * rho).exp() * p;
            assert!((equiangular_rhs(&st(rho, n, beta, Model::Sa)) - sa).abs() < 1e-14);
            assert!((equiangular_rhs(&st(rho, n, beta, Model::Usa)) - usa).abs() < 1e-14);
        }
    }

    #[test]
    fn rhs_survives_huge_beta() {
        let v = equiangular_rhs(&st(0.5, 16, 1e4, Model::Sa));
        assert!(v.is_finite() && v >= 0.0);
        let v = equiangular_rhs(&st(0.01, 16, 1e4, Model::Usa));
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn state_validation() {
        assert!(EquiangularState::new(-0.5, 3, 1.0, Model::Sa).is_ok());
        assert!(EquiangularState::new(-0.6, 3, 1.0, Model::Sa).is_err());
        assert!(EquiangularState::new(1.1, 3, 1.0, Model::Sa).is_err());
        assert!(EquiangularState::new(0.0, 1, 1.0, Model::Sa).is_err());
        assert!(EquiangularState::new(0.0, 3, -1.0, Model::Sa).is_err());
        assert!(EquiangularState::new(0.0, 3, 1.0, Model::Hardmax).is_err());
    }

    #[test]
    fn fixed_points_on_a_grid() {
        for model in [Model::Sa, Model::Usa] {
            let n = 6;
            let lo = -1.0 / 5.0;
            for k in 1..1000 {
                let rho = lo + (1.0 - lo) * k as f64 / 1000.0;
                assert!(equiangular_rhs(&st(rho, n, 1.0, model)) > 0.0);
            }
        }
    }

    #[test]
    fn synchronized_start_stays_put() {
        let sol = solve_equiangular(&st(1.0, 8, 1.0, Model::Sa), 5.0, DEFAULT_TOLERANCE).unwrap();
        assert!(sol.rho.iter().all(|r| *r == 1.0));
    }

    #[test]
    fn solution_is_monotone() {
        for model in [Model::Sa, Model::Usa] {
            let sol = solve_equiangular(&st(0.0, 32, 2.0, model), 10.0, DEFAULT_TOLERANCE).unwrap();
            assert!(sol.rho.windows(2).all(|w| w[1] >= w[0]));
            assert!(*sol.rho.last().unwrap() > 0.99);
        }
    }

    #[test]
    fn beta_zero_sa_matches_closed_form() {
        // rho' = (2/n)(1 - rho)((n-1) rho + 1) with rho(0) = 0 solves to
        // rho(t) = (1 - e^{-2t}) / (1 + (n-1) e^{-2t}).
        let n = 32;
        let rho = solve_equiangular_at(&st(0.0, n, 0.0, Model::Sa), &[0.5, 1.0, 3.0], DEFAULT_TOLERANCE).unwrap();
        for (t, r) in [0.5f64, 1.0, 3.0].iter().zip(rho) {
            let e = (-2.0 * t).exp();
            let want = (1.0 - e) / (1.0 + (n as f64 - 1.0) * e);
            assert!((r - want).abs() < 1e-9, "{r} vs {want}");
        }
    }

    #[test]
    fn tail_rate_matches_linearization() {
        for model in [Model::Sa, Model::Usa] {
            for beta in [0.0, 1.0, 2.0] {
                let state = st(0.0, 8, beta, model);
                let rate = linearized_rate(model, beta).unwrap();
                let horizon = 30.0 / rate.min(2.0) + 20.0 / rate;
                let fit = solve_equiangular(&state, horizon, DEFAULT_TOLERANCE)
                    .unwrap()
                    .tail_rate()
                    .unwrap();
                assert!((fit.rate - rate).abs() < 0.05 * rate, "{model} {beta}: {} vs {rate}", fit.rate);
            }
        }
    }

    #[test]
    fn linearized_rate_examples() {
        assert_eq!(linearized_rate(Model::Sa, 7.0).unwrap(), 2.0);
        assert_eq!(linearized_rate(Model::Usa, 0.0).unwrap(), 2.0);
        assert!((linearized_rate(Model::Usa, 1.0).unwrap() - 5.43656365691809).abs() < 1e-12);
        assert!(linearized_rate(Model::Hardmax, 1.0).is_err());
    }

    #[test]
    fn crossing_time_examples() {
        let s = st(0.3, 32, 1.0, Model::Usa);
        assert_eq!(threshold_crossing_time(&s, 0.3).unwrap(), 0.0);
        assert!(matches!(threshold_crossing_time(&s, 1.0), Err(Error::Unreachable(_))));

        let n = 32.0;
        let tau: f64 = 0.999;
        // Inverting the closed form above.
        let closed = 0.5 * ((1.0 + (n - 1.0) * tau) / (1.0 - tau)).ln();
        let t = threshold_crossing_time(&st(0.0, 32, 0.0, Model::Sa), tau).unwrap();
        assert!((t - closed).abs() < 1e-4 * closed, "{t} vs {closed}");
        assert!((t - 5.186260981).abs() < 1e-6);

        let times = predicted_crossing_times(Model::Usa, 32, 0.0, 0.999, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(times.windows(2).all(|w| w[1] <= w[0]), "{times:?}");
    }

    #[test]
    fn crossing_times_for_sa_phase_diagram() {
        let want = [5.18626, 5.27028, 5.45839, 5.89761];
        let got = predicted_crossing_times(Model::Sa, 32, 0.0, 0.999, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
    }

    #[test]
    fn fixed_point_threshold_is_unreachable() {
        let s = st(-1.0 / 3.0, 4, 1.0, Model::Sa);
        assert!(matches!(threshold_crossing_time(&s, 0.5), Err(Error::Unreachable(_))));
    }

    #[test]
    fn longcontext_examples() {
        let q = |rho, gamma, n| longcontext_output_correlation(&LongContextQuery::new(rho, gamma, n).unwrap());
        assert!((q(0.5, 2.0, 1e8) - 0.8).abs() < 0.02);
        assert!((q(0.5, 4.0, 1e8) - 0.5).abs() < 0.02);
        assert!((q(0.5, 1.0, 1e8) - 1.0).abs() < 0.02);
        assert!((q(0.999_999, 1.0, 1e3) - 1.0).abs() < 1e-5);

        assert_eq!(longcontext_limit(0.5, 2.0).unwrap(), 0.8);
        assert_eq!(longcontext_limit(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(longcontext_limit(0.3, 1e9).unwrap(), 0.3);
        assert!(longcontext_limit(0.0, 1.0).is_err());
        assert!(LongContextQuery::new(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn longcontext_converges_monotonically() {
        for &(rho, gamma) in &[(0.5, 1.0), (0.5, 4.0), (0.3, 0.8), (0.7, 6.0)] {
            let limit = longcontext_limit(rho, gamma).unwrap();
            let gaps: Vec<f64> = [1e3, 1e6, 1e9]
                .iter()
                .map(|&n| (longcontext_output_correlation(&LongContextQuery::new(rho, gamma, n).unwrap()) - limit).abs())
                .collect();
            assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{rho} {gamma}: {gaps:?}");
            assert!(gaps[2] < 0.02, "{rho} {gamma}: {gaps:?}");
        }
    }

    #[test]
    fn longcontext_matches_explicit_vectors() {
        // Small n: build the equiangular frame explicitly and compare.
        use crate::fields::attention_matrix;
        use crate::sphere::{equiangular_frame, RandomStream};
        let (n, rho, gamma) = (6usize, 0.4, 1.7);
        let cfg = equiangular_frame(n, rho, n, &mut RandomStream::new(1, 0)).unwrap();
        let beta = gamma * (n as f64).ln();
        let a = attention_matrix(&cfg, beta);
        let out: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                for j in 0..n {
                    for (o, x) in v.iter_mut().zip(cfg.point(j)) {
                        *o += a.get(i, j) * x;
                    }
                }
                v
            })
            .collect();
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let corr = dot(&out[0], &out[1]) / dot(&out[0], &out[0]);
        let q = LongContextQuery::new(rho, gamma, n as f64).unwrap();
        assert!((corr - longcontext_output_correlation(&q)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn correlation_lies_between_rho_and_one(rho in 0.01f64..0.99, gamma in 0.1f64..10.0, e in 1.0f64..12.0) {
            let q = LongContextQuery::new(rho, gamma, 10f64.powf(e)).unwrap();
            let c = longcontext_output_correlation(&q);
            prop_assert!(c >= rho - 1e-12 && c <= 1.0 + 1e-12);
        }
    }
}
