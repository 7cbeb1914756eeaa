//! Time stepping for the deterministic flows, the noisy flow and the rescaled-time
//! driver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, pairwise_stats};
use crate::error::{Error, Result};
use crate::fields::{
    gram_into, sa_into, usa_into, DirectionalState, DynamicsField, DynamicsSpec, Field, Model,
    Workspace,
};
use crate::sphere::{self, chord_sq, normalize_in_place, project_in_place, RandomStream, UnitVector};
use crate::tokens::TokenConfiguration;

const MAX_HALVINGS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProjectedEuler,
    ProjectedRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub method: Method,
    pub dt: f64,
    pub t_final: f64,
    /// Largest chord a token may travel in one accepted step.
    pub max_rotation_per_step: f64,
    pub record_every: usize,
}

impl IntegratorSpec {
    /// Records often enough to keep at most about `10^4` samples.
    pub fn new(method: Method, dt: f64, t_final: f64) -> Result<Self> {
        let steps = if dt > 0.0 { (t_final / dt).ceil() } else { 0.0 };
        let spec = IntegratorSpec {
            method,
            dt,
            t_final,
            max_rotation_per_step: 0.1,
            record_every: ((steps / 1e4).ceil() as usize).max(1),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rk4(dt: f64, t_final: f64) -> Result<Self> {
        Self::new(Method::ProjectedRk4, dt, t_final)
    }

    pub fn euler(dt: f64, t_final: f64) -> Result<Self> {
        Self::new(Method::ProjectedEuler, dt, t_final)
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_max_rotation(mut self, cap: f64) -> Self {
        self.max_rotation_per_step = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be finite and > 0, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::invalid(format!(
                "t_final must be finite and >= 0, got {}",
                self.t_final
            )));
        }
        if !(self.max_rotation_per_step > 0.0) {
            return Err(Error::invalid("max_rotation_per_step must be > 0"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        Ok(())
    }

    /// Nominal step count; the last step is shortened to land on `t_final`.
    pub fn steps(&self) -> usize {
        let raw = self.t_final / self.dt;
        let k = raw.round();
        if (raw - k).abs() <= 1e-9 * raw.max(1.0) {
            k as usize
        } else {
            raw.ceil() as usize
        }
    }

    fn time_of(&self, step: usize) -> f64 {
        if step >= self.steps() {
            self.t_final
        } else {
            step as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kappa: f64,
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseSpec {
    /// Particle `i` draws from `stream.child(i)`.
    pub fn new(kappa: f64, stream: &RandomStream) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be > 0, got {kappa}")));
        }
        Ok(NoiseSpec {
            kappa,
            seed: stream.seed(),
            stream_id: stream.stream_id(),
        })
    }

    fn stream(&self) -> RandomStream {
        RandomStream::new(self.seed, self.stream_id)
    }
}

/// Time variable used by the rescaled driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// `dt = e^{beta (1 - c0)} ds` with `c0` the initial closest-pair inner product.
    #[default]
    Frozen,
    /// `dt = e^{beta (1 - c(s))} ds` with `c(s)` the current inner product of the
    /// initially closest pair.
    Tracking,
}

/// Which diagnostics to record.
#[derive(Debug, Clone, Default)]
pub struct Observers {
    pub energy: bool,
    /// Min/mean inner products and the chord-based gaps.
    pub pairwise: bool,
    pub cluster_tau: Option<f64>,
    /// Norm of the mass-weighted mean; the circular order parameter when `d = 2`.
    pub order_parameter: bool,
    pub w2_center: Option<UnitVector>,
    pub snapshots: bool,
}

impl Observers {
    pub fn none() -> Self {
        Observers::default()
    }

    /// Everything except snapshots and W2.
    pub fn standard(tau: f64) -> Self {
        Observers {
            energy: true,
            pairwise: true,
            cluster_tau: Some(tau),
            order_parameter: true,
            w2_center: None,
            snapshots: false,
        }
    }

    pub fn with_snapshots(mut self) -> Self {
        self.snapshots = true;
        self
    }

    pub fn with_w2(mut self, center: UnitVector) -> Self {
        self.w2_center = Some(center);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dynamics: DynamicsSpec,
    pub integrator: IntegratorSpec,
    pub noise: Option<NoiseSpec>,
    pub rescale: Option<RescaleMode>,
    /// Multiplier `dt/ds` at `s = 0` for rescaled runs.
    pub rescale_factor: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Empty unless snapshots were requested.
    pub snapshots: Vec<TokenConfiguration>,
    /// Radii per recorded time for normalized-attention runs; empty otherwise.
    pub radii: Vec<Vec<f64>>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub final_state: TokenConfiguration,
    pub final_radii: Vec<f64>,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.get(name).map(Vec::as_slice)
    }

    /// `(t, value)` pairs for one series.
    pub fn samples(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        self.series(name)
            .map(|v| self.times.iter().copied().zip(v.iter().copied()).collect())
    }
}

/// Advances `cfg0` under `dynamics`. Hardmax always uses projected Euler with the
/// closest pair reselected at every step.
pub fn integrate_ode(
    cfg0: &TokenConfiguration,
    dynamics: &DynamicsSpec,
    spec: &IntegratorSpec,
    observers: &Observers,
) -> Result<Trajectory> {
    spec.validate()?;
    dynamics.check_compatible(cfg0)?;
    if dynamics.model == Model::NormalizedAttention {
        return integrate_normalized(&DirectionalState::on_sphere(cfg0.clone()), dynamics, spec, observers);
    }
    let mut spec_eff = *spec;
    if dynamics.model == Model::Hardmax {
        spec_eff.method = Method::ProjectedEuler;
    }
    let mut field = DynamicsField::new(*dynamics, cfg0);
    let provenance = Provenance {
        dynamics: *dynamics,
        integrator: spec_eff,
        noise: None,
        rescale: None,
        rescale_factor: None,
    };
    run(cfg0, vec![1.0; cfg0.len()], false, &mut field, spec_eff, observers, dynamics.beta, provenance)
}

/// Normalized-attention flow on directions and radii.
pub fn integrate_normalized(
    state0: &DirectionalState,
    dynamics: &DynamicsSpec,
    spec: &IntegratorSpec,
    observers: &Observers,
) -> Result<Trajectory> {
    spec.validate()?;
    if dynamics.model != Model::NormalizedAttention {
        return Err(Error::invalid("integrate_normalized needs the normalized-attention model"));
    }
    let cfg0 = &state0.directions;
    let mut field = DynamicsField::new(*dynamics, cfg0);
    let provenance = Provenance {
        dynamics: *dynamics,
        integrator: *spec,
        noise: None,
        rescale: None,
        rescale_factor: None,
    };
    run(cfg0, state0.radii.clone(), true, &mut field, *spec, observers, dynamics.beta, provenance)
}

/// SA in the rescaled time `s`; recorded times are values of `s`. The series
/// `pair_inner` holds the inner product of the initially closest pair.
pub fn integrate_rescaled_sa(
    cfg0: &TokenConfiguration,
    beta: f64,
    spec: &IntegratorSpec,
    mode: RescaleMode,
    observers: &Observers,
) -> Result<Trajectory> {
    spec.validate()?;
    let dynamics = DynamicsSpec::sa(beta)?;
    let (a, b) = crate::fields::closest_pair(cfg0)?;
    let factor0 = rescale_factor(beta, cfg0.point(a), cfg0.point(b));
    let mut field = RescaledSa {
        masses: cfg0.masses().to_vec(),
        n: cfg0.len(),
        d: cfg0.dim(),
        beta,
        mode,
        pair: (a, b),
        factor0,
        ws: Workspace::new(cfg0.len(), cfg0.dim()),
    };
    let provenance = Provenance {
        dynamics,
        integrator: *spec,
        noise: None,
        rescale: Some(mode),
        rescale_factor: Some(factor0),
    };
    let mut traj = run(cfg0, vec![1.0; cfg0.len()], false, &mut field, *spec, observers, beta, provenance)?;
    let gaps = traj.series.get("pair_gap").cloned().unwrap_or_default();
    traj.series
        .insert("pair_inner".into(), gaps.iter().map(|g| 1.0 - g).collect());
    Ok(traj)
}

/// `e^{beta (1 - c)}` with `1 - c` taken from the chord for accuracy.
fn rescale_factor(beta: f64, x: &[f64], y: &[f64]) -> f64 {
    (beta * 0.5 * chord_sq(x, y)).exp()
}

struct RescaledSa {
    masses: Vec<f64>,
    n: usize,
    d: usize,
    beta: f64,
    mode: RescaleMode,
    pair: (usize, usize),
    factor0: f64,
    ws: Workspace,
}

impl Field for RescaledSa {
    fn eval(&mut self, x: &[f64], _r: &[f64], vx: &mut [f64], vr: &mut [f64]) -> Result<()> {
        let (n, d) = (self.n, self.d);
        vr.iter_mut().for_each(|v| *v = 0.0);
        sa_into(x, &self.masses, n, d, self.beta, vx, &mut self.ws);
        let factor = match self.mode {
            RescaleMode::Frozen => self.factor0,
            RescaleMode::Tracking => {
                let (a, b) = self.pair;
                rescale_factor(self.beta, &x[a * d..(a + 1) * d], &x[b * d..(b + 1) * d])
            }
        };
        vx.iter_mut().for_each(|v| *v *= factor);
        Ok(())
    }
}

/// Euler–Maruyama for the noisy flow with the projected USA drift:
/// `x_i <- normalize(x_i + h drift_i + sqrt(2 h / kappa) xi_i)` where `xi_i` is a
/// tangent standard Gaussian drawn from particle `i`'s own stream.
pub fn integrate_sde(
    cfg0: &TokenConfiguration,
    beta: f64,
    noise: &NoiseSpec,
    spec: &IntegratorSpec,
    observers: &Observers,
) -> Result<Trajectory> {
    spec.validate()?;
    if cfg0.dim() < 2 {
        return Err(Error::invalid("the noisy flow needs d >= 2"));
    }
    if !(noise.kappa > 0.0) {
        return Err(Error::invalid(format!("kappa must be > 0, got {}", noise.kappa)));
    }
    let dynamics = DynamicsSpec::usa(beta)?;
    let (n, d) = (cfg0.len(), cfg0.dim());
    let masses = cfg0.masses().to_vec();
    let parent = noise.stream();
    let mut streams: Vec<RandomStream> = (0..n as u64).map(|i| parent.child(i)).collect();
    let mut ws = Workspace::new(n, d);
    let mut x = cfg0.coords().to_vec();
    let mut drift = vec![0.0; n * d];
    let mut xi = vec![0.0; d];
    let steps = spec.steps();
    let mut rec = Recorder::new(observers, beta, n, false);
    rec.record(0.0, cfg0, &x, &[], None)?;

    for step in 1..=steps {
        let t_start = spec.time_of(step - 1);
        let t_end = spec.time_of(step);
        let mut remaining = t_end - t_start;
        let mut h = remaining;
        let mut halvings = 0u32;
        while remaining > 0.0 {
            h = h.min(remaining);
            usa_into(&x, &masses, n, d, beta, &mut drift, &mut ws);
            let (worst, token) = max_row_norm(&drift, d);
            if h * worst > spec.max_rotation_per_step {
                if halvings >= MAX_HALVINGS {
                    return Err(Error::Stiffness {
                        time: t_end - remaining,
                        token,
                        rotation: h * worst,
                        halvings,
                    });
                }
                halvings += 1;
                h *= 0.5;
                continue;
            }
            let sigma = (2.0 * h / noise.kappa).sqrt();
            for i in 0..n {
                let xrow = &mut x[i * d..(i + 1) * d];
                for v in xi.iter_mut() {
                    *v = streams[i].standard_normal();
                }
                project_in_place(xrow, &mut xi);
                for ((c, dr), z) in xrow.iter_mut().zip(&drift[i * d..(i + 1) * d]).zip(&xi) {
                    *c += h * dr + sigma * z;
                }
                normalize_in_place(xrow)?;
            }
            remaining = if h >= remaining { 0.0 } else { remaining - h };
        }
        if step % spec.record_every == 0 || step == steps {
            rec.record(t_end, cfg0, &x, &[], None)?;
        }
    }
    let provenance = Provenance {
        dynamics,
        integrator: *spec,
        noise: Some(*noise),
        rescale: None,
        rescale_factor: None,
    };
    Ok(rec.finish(cfg0.with_coords(x), vec![1.0; n], provenance))
}

fn max_row_norm(v: &[f64], d: usize) -> (f64, usize) {
    v.chunks_exact(d)
        .map(sphere::norm)
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, nrm)| if nrm > best { (nrm, i) } else { (best, bi) })
}

/// Shared deterministic driver.
#[allow(clippy::too_many_arguments)]
fn run<F: Field + PairHint>(
    cfg0: &TokenConfiguration,
    r0: Vec<f64>,
    track_radii: bool,
    field: &mut F,
    spec: IntegratorSpec,
    observers: &Observers,
    beta: f64,
    provenance: Provenance,
) -> Result<Trajectory> {
    let (n, d) = (cfg0.len(), cfg0.dim());
    let mut stepper = Stepper::new(n, d, spec.method);
    let mut x = cfg0.coords().to_vec();
    let mut r = r0;
    let steps = spec.steps();
    let mut rec = Recorder::new(observers, beta, n, track_radii);
    let pair = field.pair();
    rec.record(0.0, cfg0, &x, &r, pair)?;

    for step in 1..=steps {
        let t_start = spec.time_of(step - 1);
        let t_end = spec.time_of(step);
        let mut remaining = t_end - t_start;
        let mut h = remaining;
        let mut halvings = 0u32;
        while remaining > 0.0 {
            h = h.min(remaining);
            stepper.propose(field, &x, &r, h)?;
            let (rot, token) = stepper.max_rotation(&x, d);
            if rot > spec.max_rotation_per_step {
                if halvings >= MAX_HALVINGS {
                    return Err(Error::Stiffness {
                        time: t_end - remaining,
                        token,
                        rotation: rot,
                        halvings,
                    });
                }
                halvings += 1;
                h *= 0.5;
                continue;
            }
            std::mem::swap(&mut x, &mut stepper.x_new);
            std::mem::swap(&mut r, &mut stepper.r_new);
            remaining = if h >= remaining { 0.0 } else { remaining - h };
        }
        if track_radii && r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::DegenerateField(format!(
                "a radius left (0, inf) at t = {t_end}"
            )));
        }
        if step % spec.record_every == 0 || step == steps {
            rec.record(t_end, cfg0, &x, &r, pair)?;
        }
    }
    let final_radii = r.clone();
    Ok(rec.finish(cfg0.with_coords(x), final_radii, provenance))
}

/// Optional closest-pair hint so the recorder can track one pair.
trait PairHint {
    fn pair(&self) -> Option<(usize, usize)> {
        None
    }
}

impl PairHint for DynamicsField {}

impl PairHint for RescaledSa {
    fn pair(&self) -> Option<(usize, usize)> {
        Some(self.pair)
    }
}

struct Stepper {
    method: Method,
    k: [Vec<f64>; 4],
    kr: [Vec<f64>; 4],
    y: Vec<f64>,
    yr: Vec<f64>,
    x_new: Vec<f64>,
    r_new: Vec<f64>,
    d: usize,
}

impl Stepper {
    fn new(n: usize, d: usize, method: Method) -> Self {
        let z = || vec![0.0; n * d];
        let zr = || vec![0.0; n];
        Stepper {
            method,
            k: [z(), z(), z(), z()],
            kr: [zr(), zr(), zr(), zr()],
            y: z(),
            yr: zr(),
            x_new: z(),
            r_new: zr(),
            d,
        }
    }

    /// Writes the candidate step of size `h` into `x_new`, `r_new`. RK4 stages are
    /// evaluated at retracted points.
    fn propose<F: Field>(&mut self, field: &mut F, x: &[f64], r: &[f64], h: f64) -> Result<()> {
        let d = self.d;
        match self.method {
            Method::ProjectedEuler => {
                field.eval(x, r, &mut self.k[0], &mut self.kr[0])?;
                combine(x, &[(&self.k[0], h)], &mut self.x_new);
                combine(r, &[(&self.kr[0], h)], &mut self.r_new);
                normalize_rows(&mut self.x_new, d)?;
            }
            Method::ProjectedRk4 => {
                let [k1, k2, k3, k4] = &mut self.k;
                let [kr1, kr2, kr3, kr4] = &mut self.kr;
                field.eval(x, r, k1, kr1)?;
                combine(x, &[(k1, 0.5 * h)], &mut self.y);
                combine(r, &[(kr1, 0.5 * h)], &mut self.yr);
                normalize_rows(&mut self.y, d)?;
                field.eval(&self.y, &self.yr, k2, kr2)?;
                combine(x, &[(k2, 0.5 * h)], &mut self.y);
                combine(r, &[(kr2, 0.5 * h)], &mut self.yr);
                normalize_rows(&mut self.y, d)?;
                field.eval(&self.y, &self.yr, k3, kr3)?;
                combine(x, &[(k3, h)], &mut self.y);
                combine(r, &[(kr3, h)], &mut self.yr);
                normalize_rows(&mut self.y, d)?;
                field.eval(&self.y, &self.yr, k4, kr4)?;
                let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
                combine(x, &[(k1, w[0]), (k2, w[1]), (k3, w[2]), (k4, w[3])], &mut self.x_new);
                combine(r, &[(kr1, w[0]), (kr2, w[1]), (kr3, w[2]), (kr4, w[3])], &mut self.r_new);
                normalize_rows(&mut self.x_new, d)?;
            }
        }
        Ok(())
    }

    /// Largest per-token chord between `x` and the candidate.
    fn max_rotation(&self, x: &[f64], d: usize) -> (f64, usize) {
        x.chunks_exact(d)
            .zip(self.x_new.chunks_exact(d))
            .map(|(a, b)| chord_sq(a, b).sqrt())
            .enumerate()
            .fold((0.0, 0), |(best, bi), (i, c)| if c > best { (c, i) } else { (best, bi) })
    }
}

fn combine(base: &[f64], terms: &[(&Vec<f64>, f64)], out: &mut [f64]) {
    out.copy_from_slice(base);
    for (k, w) in terms {
        out.iter_mut().zip(k.iter()).for_each(|(o, v)| *o += w * v);
    }
}

fn normalize_rows(x: &mut [f64], d: usize) -> Result<()> {
    for row in x.chunks_exact_mut(d) {
        normalize_in_place(row)?;
    }
    Ok(())
}

struct Recorder<'a> {
    obs: &'a Observers,
    beta: f64,
    times: Vec<f64>,
    snapshots: Vec<TokenConfiguration>,
    radii: Vec<Vec<f64>>,
    series: BTreeMap<String, Vec<f64>>,
    track_radii: bool,
    gram: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(obs: &'a Observers, beta: f64, n: usize, track_radii: bool) -> Self {
        Recorder {
            obs,
            beta,
            times: Vec::new(),
            snapshots: Vec::new(),
            radii: Vec::new(),
            series: BTreeMap::new(),
            track_radii,
            gram: vec![0.0; if obs.energy { n * n } else { 0 }],
        }
    }

    fn push(&mut self, name: &str, v: f64) {
        self.series.entry(name.to_string()).or_default().push(v);
    }

    fn record(
        &mut self,
        t: f64,
        template: &TokenConfiguration,
        x: &[f64],
        r: &[f64],
        pair: Option<(usize, usize)>,
    ) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Ok(());
            }
        }
        self.times.push(t);
        let cfg = template.with_coords(x.to_vec());
        let (n, d) = (cfg.len(), cfg.dim());
        if self.obs.energy {
            gram_into(x, n, d, &mut self.gram);
            let (raw, scaled) = energy_from_gram(&self.gram, cfg.masses(), self.beta, x, d);
            self.push("energy", raw);
            if self.beta > 0.0 {
                self.push("energy_scaled", scaled);
            }
        }
        if self.obs.pairwise {
            let s = pairwise_stats(&cfg);
            self.push("min_pairwise", s.min);
            self.push("mean_pairwise", s.mean);
            self.push("max_gap", s.max_gap);
            self.push("mean_gap", s.mean_gap);
        }
        if let Some(tau) = self.obs.cluster_tau {
            self.push("cluster_count", diagnostics::cluster_count(&cfg, tau).count as f64);
        }
        if self.obs.order_parameter {
            self.push("order_parameter", diagnostics::order_parameter(&cfg));
        }
        if let Some(c) = &self.obs.w2_center {
            let w = diagnostics::w2_to_dirac(&cfg, c)?;
            self.push("w2_to_dirac", w);
        }
        if let Some((a, b)) = pair {
            self.push("pair_gap", 0.5 * chord_sq(cfg.point(a), cfg.point(b)));
        }
        if self.track_radii {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            self.push("radius_mean", mean);
            self.push("radius_max", max);
            self.radii.push(r.to_vec());
        }
        if self.obs.snapshots {
            self.snapshots.push(cfg);
        }
        Ok(())
    }

    fn finish(
        self,
        final_state: TokenConfiguration,
        final_radii: Vec<f64>,
        provenance: Provenance,
    ) -> Trajectory {
        Trajectory {
            times: self.times,
            snapshots: self.snapshots,
            radii: self.radii,
            series: self.series,
            final_state,
            final_radii,
            provenance,
        }
    }
}

/// Raw and `e^{-beta}`-scaled interaction energy from a precomputed Gram matrix.
fn energy_from_gram(gram: &[f64], m: &[f64], beta: f64, x: &[f64], d: usize) -> (f64, f64) {
    let n = m.len();
    if beta == 0.0 {
        let mut mean = vec![0.0; d];
        for (row, w) in x.chunks_exact(d).zip(m) {
            mean.iter_mut().zip(row).for_each(|(a, c)| *a += w * c);
        }
        return (0.5 * sphere::dot(&mean, &mean), f64::NAN);
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = &gram[i * n..(i + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += m[j] * (beta * (row[j] - 1.0)).exp();
        }
        total += m[i] * s;
    }
    let scaled = total / (2.0 * beta);
    (scaled * beta.exp(), scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equiangular::{solve_equiangular_at, EquiangularState, DEFAULT_TOLERANCE};
    use crate::fields::NormalizationScheme;
    use crate::sphere::equiangular_frame;

    fn gram_spread(cfg: &TokenConfiguration) -> (f64, f64) {
        let g = diagnostics::pairwise_gram(cfg);
        let n = cfg.len();
        let mut vals = Vec::new();
        for i in 0..n {
            for j in 0..i {
                vals.push(g.get(i, j));
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let dev = vals.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        (mean, dev)
    }

    #[test]
    fn spec_validation() {
        assert!(IntegratorSpec::rk4(0.0, 1.0).is_err());
        assert!(IntegratorSpec::rk4(0.1, -1.0).is_err());
        assert!(IntegratorSpec::rk4(0.1, 1.0).unwrap().with_max_rotation(0.0).validate().is_err());
        assert_eq!(IntegratorSpec::rk4(0.1, 1.0).unwrap().steps(), 10);
        assert_eq!(IntegratorSpec::rk4(0.3, 1.0).unwrap().steps(), 4);
        assert_eq!(IntegratorSpec::rk4(0.1, 0.0).unwrap().steps(), 0);
    }

    #[test]
    fn single_token_is_stationary() {
        let cfg = TokenConfiguration::new(vec![UnitVector::basis(3, 1)]).unwrap();
        let spec = IntegratorSpec::rk4(0.1, 5.0).unwrap();
        let traj = integrate_ode(&cfg, &DynamicsSpec::sa(2.0).unwrap(), &spec, &Observers::none()).unwrap();
        assert_eq!(traj.final_state, cfg);
        assert_eq!(*traj.times.last().unwrap(), 5.0);
    }

    #[test]
    fn times_increase_and_series_align() {
        let cfg = TokenConfiguration::uniform_random(6, 3, &mut RandomStream::new(1, 0)).unwrap();
        let spec = IntegratorSpec::rk4(0.03, 1.0).unwrap().with_record_every(7);
        let obs = Observers::standard(0.999).with_snapshots().with_w2(UnitVector::basis(3, 0));
        let traj = integrate_ode(&cfg, &DynamicsSpec::sa(1.0).unwrap(), &spec, &obs).unwrap();
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        for v in traj.series.values() {
            assert_eq!(v.len(), traj.times.len());
        }
        for snap in &traj.snapshots {
            for p in snap.points() {
                assert!((sphere::norm(p) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn usa_equiangular_matches_scalar_reduction() {
        let cfg = equiangular_frame(8, 0.2, 8, &mut RandomStream::new(5, 0)).unwrap();
        let spec = IntegratorSpec::rk4(1e-3, 1.0).unwrap();
        let traj = integrate_ode(&cfg, &DynamicsSpec::usa(1.0).unwrap(), &spec, &Observers::none()).unwrap();
        let (rho, _) = gram_spread(&traj.final_state);
        let state = EquiangularState::new(0.2, 8, 1.0, Model::Usa).unwrap();
        let oracle = solve_equiangular_at(&state, &[1.0], DEFAULT_TOLERANCE).unwrap()[0];
        assert!((rho - oracle).abs() < 1e-6, "{rho} vs {oracle}");
    }

    #[test]
    fn equiangular_symmetry_is_preserved() {
        for model in [Model::Sa, Model::Usa] {
            let cfg = equiangular_frame(6, 0.1, 7, &mut RandomStream::new(8, 0)).unwrap();
            let spec = IntegratorSpec::rk4(0.01, 10.0).unwrap();
            let dynamics = DynamicsSpec::new(model, 2.0).unwrap();
            let traj = integrate_ode(&cfg, &dynamics, &spec, &Observers::none()).unwrap();
            let (_, dev) = gram_spread(&traj.final_state);
            assert!(dev < 1e-6, "{model}: {dev}");
        }
    }

    #[test]
    fn convergence_orders() {
        let cfg = equiangular_frame(5, 0.0, 5, &mut RandomStream::new(3, 0)).unwrap();
        let state = EquiangularState::new(0.0, 5, 1.0, Model::Sa).unwrap();
        let oracle = solve_equiangular_at(&state, &[1.0], DEFAULT_TOLERANCE).unwrap()[0];
        let dynamics = DynamicsSpec::sa(1.0).unwrap();
        let err = |method, dt| {
            let spec = IntegratorSpec::new(method, dt, 1.0).unwrap();
            let traj = integrate_ode(&cfg, &dynamics, &spec, &Observers::none()).unwrap();
            (gram_spread(&traj.final_state).0 - oracle).abs()
        };
        let rk: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&dt| err(Method::ProjectedRk4, dt)).collect();
        for w in rk.windows(2) {
            let ratio = w[0] / w[1];
            assert!((16.0 / 3.0..=48.0).contains(&ratio), "rk4 ratio {ratio}");
        }
        let eu: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&dt| err(Method::ProjectedEuler, dt)).collect();
        for w in eu.windows(2) {
            let ratio = w[0] / w[1];
            assert!((2.0 / 3.0..=6.0).contains(&ratio), "euler ratio {ratio}");
        }
    }

    #[test]
    fn energy_is_nondecreasing() {
        for model in [Model::Sa, Model::Usa] {
            let cfg = TokenConfiguration::uniform_random(10, 3, &mut RandomStream::new(11, 0)).unwrap();
            let dt = 0.02;
            let spec = IntegratorSpec::rk4(dt, 5.0).unwrap();
            let obs = Observers {
                energy: true,
                ..Observers::none()
            };
            let traj = integrate_ode(&cfg, &DynamicsSpec::new(model, 1.5).unwrap(), &spec, &obs).unwrap();
            let e = traj.series("energy").unwrap();
            for w in e.windows(2) {
                assert!(w[1] >= w[0] - 10.0 * dt * dt, "{model}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn hardmax_two_body_merge_time() {
        let c0: f64 = 0.3;
        let eps = 1e-3;
        let a = c0.acos();
        let cfg = TokenConfiguration::from_angles(&[0.0, a]).unwrap();
        let dt = 1e-4;
        let spec = IntegratorSpec::euler(dt, 3.0).unwrap().with_record_every(1);
        let obs = Observers {
            pairwise: true,
            ..Observers::none()
        };
        let traj = integrate_ode(&cfg, &DynamicsSpec::new(Model::Hardmax, 1.0).unwrap(), &spec, &obs).unwrap();
        let min = traj.series("min_pairwise").unwrap();
        let k = min.iter().position(|c| *c >= 1.0 - eps).unwrap();
        let t_merge = traj.times[k];
        // integral of dc / (2(1 - c^2)) = atanh(c)/2
        let oracle = 0.5 * ((1.0 - eps as f64).atanh() - c0.atanh());
        assert!((t_merge - oracle).abs() < 0.01 * oracle, "{t_merge} vs {oracle}");
    }

    #[test]
    fn stiffness_is_reported() {
        let cfg = TokenConfiguration::from_angles(&[0.0, 0.5]).unwrap();
        let spec = IntegratorSpec::euler(1.0, 1.0).unwrap().with_max_rotation(1e-9);
        let err = integrate_ode(&cfg, &DynamicsSpec::sa(1.0).unwrap(), &spec, &Observers::none()).unwrap_err();
        assert!(matches!(err, Error::Stiffness { halvings: 20, .. }), "{err}");
    }

    #[test]
    fn step_halving_caps_rotation() {
        let cfg = TokenConfiguration::from_angles(&[0.0, 1.0, 2.5]).unwrap();
        let spec = IntegratorSpec::euler(0.5, 2.0).unwrap().with_record_every(1).with_max_rotation(0.05);
        let obs = Observers::none().with_snapshots();
        let traj = integrate_ode(&cfg, &DynamicsSpec::usa(3.0).unwrap(), &spec, &obs).unwrap();
        assert_eq!(traj.times.len(), 5);
    }

    #[test]
    fn deterministic_runs_are_bit_identical() {
        let cfg = TokenConfiguration::uniform_random(12, 4, &mut RandomStream::new(2, 2)).unwrap();
        let spec = IntegratorSpec::rk4(0.05, 2.0).unwrap();
        let obs = Observers::standard(0.99);
        let a = integrate_ode(&cfg, &DynamicsSpec::sa(4.0).unwrap(), &spec, &obs).unwrap();
        let b = integrate_ode(&cfg, &DynamicsSpec::sa(4.0).unwrap(), &spec, &obs).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.series, b.series);
    }

    #[test]
    fn sde_without_noise_tracks_ode() {
        let cfg = TokenConfiguration::uniform_random(10, 3, &mut RandomStream::new(4, 0)).unwrap();
        let spec = IntegratorSpec::euler(1e-3, 1.0).unwrap();
        let noise = NoiseSpec::new(1e12, &RandomStream::new(9, 0)).unwrap();
        let sde = integrate_sde(&cfg, 1.0, &noise, &spec, &Observers::none()).unwrap();
        let ode = integrate_ode(&cfg, &DynamicsSpec::usa(1.0).unwrap(), &spec, &Observers::none()).unwrap();
        let diff = sde
            .final_state
            .coords()
            .iter()
            .zip(ode.final_state.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn sde_is_reproducible_and_seed_dependent() {
        let cfg = TokenConfiguration::uniform_random(20, 2, &mut RandomStream::new(4, 0)).unwrap();
        let spec = IntegratorSpec::euler(1e-2, 0.5).unwrap();
        let run = |seed| {
            let noise = NoiseSpec::new(2.0, &RandomStream::new(seed, 3)).unwrap();
            integrate_sde(&cfg, 0.0, &noise, &spec, &Observers::none()).unwrap().final_state
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        assert!(NoiseSpec::new(0.0, &RandomStream::new(1, 1)).is_err());
    }

    #[test]
    fn rescaled_at_zero_beta_matches_plain_sa() {
        let cfg = TokenConfiguration::uniform_random(5, 3, &mut RandomStream::new(6, 0)).unwrap();
        let spec = IntegratorSpec::rk4(0.01, 1.0).unwrap();
        let a = integrate_rescaled_sa(&cfg, 0.0, &spec, RescaleMode::Frozen, &Observers::none()).unwrap();
        let b = integrate_ode(&cfg, &DynamicsSpec::sa(0.0).unwrap(), &spec, &Observers::none()).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.provenance.rescale_factor, Some(1.0));
        assert_eq!(a.series("pair_inner").unwrap().len(), a.times.len());
    }

    #[test]
    fn normalized_post_ln_keeps_radii() {
        let cfg = TokenConfiguration::uniform_random(6, 3, &mut RandomStream::new(7, 0)).unwrap();
        let spec = IntegratorSpec::rk4(0.05, 2.0).unwrap();
        let dyn_post = DynamicsSpec::normalized(NormalizationScheme::PostLn, 1.0).unwrap();
        let post = integrate_ode(&cfg, &dyn_post, &spec, &Observers::none()).unwrap();
        let sa = integrate_ode(&cfg, &DynamicsSpec::sa(1.0).unwrap(), &spec, &Observers::none()).unwrap();
        assert_eq!(post.final_radii, vec![1.0; 6]);
        assert!(post.final_state.coords().iter().zip(sa.final_state.coords()).all(|(a, b)| (a - b).abs() < 1e-12));

        let dyn_pre = DynamicsSpec::normalized(NormalizationScheme::PreLn, 1.0).unwrap();
        let pre = integrate_ode(&cfg, &dyn_pre, &spec, &Observers::none()).unwrap();
        assert!(pre.final_radii.iter().all(|r| *r > 1.0));
        assert_eq!(pre.series("radius_mean").unwrap().len(), pre.times.len());
    }
}
