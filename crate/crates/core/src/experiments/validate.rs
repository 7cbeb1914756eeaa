//! Per-seed synchronization times for random initializations.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{config_err, ExperimentConfig};
use super::output::{Cell, ExperimentOutput, Table};
use super::{crossing_time, job_stream, TAG_VALIDATE};
use crate::diagnostics::{fit_rate, RateFit, RateKind};
use crate::error::{Error, Result};
use crate::fields::{velocity, DynamicsSpec};
use crate::integrate::{integrate_ode, IntegratorSpec, Method, Observers};
use crate::tokens::TokenConfiguration;

/// Velocities below this count as an equilibrium.
const EQUILIBRIUM_SPEED: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRun {
    pub replicate: usize,
    pub seed: u64,
    /// First time the smallest pairwise inner product reaches `tau`.
    pub crossing_time: Option<f64>,
    /// Unsynchronized and at rest at the horizon.
    pub equilibrium: bool,
    pub final_min_pairwise: f64,
    pub fit: Option<RateFit>,
    /// Why a requested fit could not be made.
    pub fit_error: Option<String>,
    /// Integrator failure; the other fields are empty when set.
    pub error: Option<String>,
}

impl ValidationRun {
    pub fn synchronized(&self) -> bool {
        self.crossing_time.is_some()
    }

    fn failed(replicate: usize, seed: u64, e: Error) -> Self {
        ValidationRun {
            replicate,
            seed,
            crossing_time: None,
            equilibrium: false,
            final_min_pairwise: f64::NAN,
            fit: None,
            fit_error: None,
            error: Some(e.to_string()),
        }
    }
}

/// Integrates one configuration and classifies the outcome. With `fit_gaps`
/// set, fits an exponential to `1 - min <x_i, x_j>` over the records whose gap
/// lies in that range.
pub fn validate_configuration(
    cfg0: &TokenConfiguration,
    dynamics: &DynamicsSpec,
    spec: &IntegratorSpec,
    tau: f64,
    fit_gaps: Option<[f64; 2]>,
) -> Result<ValidationRun> {
    let obs = Observers {
        pairwise: true,
        ..Observers::none()
    };
    let traj = integrate_ode(cfg0, dynamics, spec, &obs)?;
    let gaps = traj.series("max_gap").unwrap_or_default();
    let crossing = crossing_time(&traj.times, gaps, tau);
    let final_min_pairwise = traj.series("min_pairwise").and_then(|s| s.last().copied()).unwrap_or(1.0);
    let speed = velocity(&traj.final_state, dynamics)?
        .as_slice()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut fit, mut fit_error) = (None, None);
    if let Some([lo, hi]) = fit_gaps {
        let window: Vec<(f64, f64)> = traj
            .times
            .iter()
            .zip(gaps)
            .filter(|(_, g)| **g >= lo && **g <= hi)
            .map(|(t, g)| (*t, *g))
            .collect();
        let res = match (window.first(), window.last()) {
            (Some(a), Some(b)) => fit_rate(&window, RateKind::Exponential, (a.0, b.0)),
            _ => Err(Error::invalid("no records inside `fit_gaps`")),
        };
        match res {
            Ok(f) => fit = Some(f),
            Err(e) => fit_error = Some(e.to_string()),
        }
    }
    Ok(ValidationRun {
        replicate: 0,
        seed: 0,
        crossing_time: crossing,
        equilibrium: crossing.is_none() && speed < EQUILIBRIUM_SPEED,
        final_min_pairwise,
        fit,
        fit_error,
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationResult {
    pub runs: Vec<ValidationRun>,
    pub horizon: f64,
    pub success_rate: f64,
    pub fitted: bool,
    pub min_r_squared: Option<f64>,
}

pub fn run_clustering_validation(cfg: &ExperimentConfig) -> Result<ValidationResult> {
    let vc = cfg
        .validate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [validate] section".into()))?;
    if vc.n < 2 || vc.d < 2 {
        return Err(Error::Config("`validate.n` and `validate.d` must be at least 2".into()));
    }
    let dynamics = DynamicsSpec::new(vc.model, vc.beta).map_err(config_err("validate"))?;
    let spec = cfg.integrator_spec(Method::ProjectedRk4, 0.05, vc.horizon, Some(1))?;
    let fitted = vc.d >= vc.n;
    let seeds = cfg.seed_list();
    let runs: Vec<ValidationRun> = (0..seeds.len())
        .into_par_iter()
        .map(|r| {
            let axes = [vc.n as u64, vc.d as u64, vc.beta.to_bits()];
            let mut rng = job_stream(seeds[r], TAG_VALIDATE, &axes, r);
            let run = TokenConfiguration::uniform_random(vc.n, vc.d, &mut rng).and_then(|cfg0| {
                validate_configuration(&cfg0, &dynamics, &spec, cfg.tau, fitted.then_some(vc.fit_gaps))
            });
            match run {
                Ok(v) => ValidationRun {
                    replicate: r,
                    seed: seeds[r],
                    ..v
                },
                Err(e) => ValidationRun::failed(r, seeds[r], e),
            }
        })
        .collect();
    let success_rate = runs.iter().filter(|r| r.synchronized()).count() as f64 / runs.len() as f64;
    let min_r_squared = fitted
        .then(|| {
            runs.iter()
                .filter_map(|r| r.fit.map(|f| f.r_squared))
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
        })
        .flatten();
    Ok(ValidationResult {
        runs,
        horizon: vc.horizon,
        success_rate,
        fitted,
        min_r_squared,
    })
}

impl ValidationResult {
    pub fn to_output(&self) -> ExperimentOutput {
        let opt = |v: Option<f64>| Cell::Float(v.unwrap_or(f64::NAN));
        let mut main = Table::new(
            "",
            &["replicate", "seed", "status", "crossing_time", "final_min_pairwise", "rate", "r_squared"],
        );
        for r in &self.runs {
            let status = if r.error.is_some() {
                "error"
            } else if r.synchronized() {
                "synchronized"
            } else if r.equilibrium {
                "equilibrium"
            } else {
                "censored"
            };
            main.push(vec![
                r.replicate.into(),
                r.seed.into(),
                status.into(),
                opt(r.crossing_time),
                r.final_min_pairwise.into(),
                opt(r.fit.map(|f| f.rate)),
                opt(r.fit.map(|f| f.r_squared)),
            ]);
        }
        ExperimentOutput {
            kind: "validate",
            tables: vec![main],
            summary: json!({
                "horizon": self.horizon,
                "success_rate": self.success_rate,
                "fitted": self.fitted,
                "min_r_squared": self.min_r_squared,
                "errors": self.runs.iter().filter_map(|r| r.error.as_ref()).collect::<Vec<_>>(),
                "fit_errors": self.runs.iter().filter_map(|r| r.fit_error.as_ref()).collect::<Vec<_>>(),
            }),
            snapshots: None,
        }
    }
}
