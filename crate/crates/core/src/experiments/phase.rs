//! Synchronization phase diagram over a `(beta, t)` grid.

use rayon::prelude::*;
use serde_json::json;

use super::config::{config_err, ExperimentConfig};
use super::output::{Cell, ExperimentOutput, Table};
use super::{censored_median, crossing_time, job_stream, TAG_SWEEP};
use crate::equiangular::{threshold_crossing_time, EquiangularState};
use crate::error::{Error, Result};
use crate::fields::{DynamicsSpec, Model};
use crate::integrate::{integrate_ode, Method, Observers};
use crate::tokens::TokenConfiguration;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub betas: Vec<f64>,
    pub times: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `[beta][t]` fraction of completed replicates synchronized at `t`.
    pub probability: Vec<Vec<f64>>,
    pub synchronized: Vec<Vec<usize>>,
    /// Replicates per beta that finished without error.
    pub completed: Vec<usize>,
    pub errors: Vec<Vec<Option<String>>>,
    /// `[beta][replicate]` first crossing time; `None` if censored or failed.
    pub crossing_times: Vec<Vec<Option<f64>>>,
    pub median_crossing: Vec<Option<f64>>,
    /// Equiangular prediction from `rho0 = 0`; `None` for models without one.
    pub predicted: Vec<Option<f64>>,
}

struct JobResult {
    /// `min_pairwise >= tau` at each grid time.
    indicators: Vec<bool>,
    crossing: Option<f64>,
}

pub fn run_phase_diagram(cfg: &ExperimentConfig) -> Result<PhaseDiagram> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("missing [sweep] section".into()))?;
    let times = sweep.time_grid();
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Config("`sweep.times` must be nonnegative and increasing".into()));
    }
    for &b in &sweep.betas {
        DynamicsSpec::new(sweep.model, b).map_err(config_err("sweep"))?;
    }
    let t_final = times.last().copied().unwrap_or(0.0);
    let spec = cfg.integrator_spec(Method::ProjectedRk4, 0.05, t_final, Some(1))?;
    let seeds = cfg.seed_list();
    let (n, d, tau) = (sweep.n, sweep.d, cfg.tau);
    if n < 2 || d < 2 {
        return Err(Error::Config("`sweep.n` and `sweep.d` must be at least 2".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..sweep.betas.len())
        .flat_map(|b| (0..seeds.len()).map(move |r| (b, r)))
        .collect();
    let results: Vec<Result<JobResult>> = jobs
        .par_iter()
        .map(|&(b, r)| {
            let beta = sweep.betas[b];
            let mut rng = job_stream(seeds[r], TAG_SWEEP, &[n as u64, d as u64, beta.to_bits()], r);
            let cfg0 = TokenConfiguration::uniform_random(n, d, &mut rng)?;
            let dynamics = DynamicsSpec::new(sweep.model, beta)?;
            let obs = Observers {
                pairwise: true,
                ..Observers::none()
            };
            let traj = integrate_ode(&cfg0, &dynamics, &spec, &obs)?;
            let min = traj.series("min_pairwise").unwrap_or_default();
            let gaps = traj.series("max_gap").unwrap_or_default();
            let indicators = times
                .iter()
                .map(|&t| {
                    let k = traj
                        .times
                        .partition_point(|&s| s <= t + 1e-9 * t.max(1.0))
                        .saturating_sub(1);
                    min[k] >= tau
                })
                .collect();
            Ok(JobResult {
                indicators,
                crossing: crossing_time(&traj.times, gaps, tau),
            })
        })
        .collect();

    let nb = sweep.betas.len();
    let mut out = PhaseDiagram {
        betas: sweep.betas.clone(),
        times: times.clone(),
        seeds: seeds.clone(),
        probability: vec![vec![0.0; times.len()]; nb],
        synchronized: vec![vec![0; times.len()]; nb],
        completed: vec![0; nb],
        errors: vec![vec![None; seeds.len()]; nb],
        crossing_times: vec![vec![None; seeds.len()]; nb],
        median_crossing: vec![None; nb],
        predicted: vec![None; nb],
    };
    for (&(b, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(job) => {
                out.completed[b] += 1;
                for (k, hit) in job.indicators.iter().enumerate() {
                    out.synchronized[b][k] += *hit as usize;
                }
                out.crossing_times[b][r] = job.crossing;
            }
            Err(e) => out.errors[b][r] = Some(e.to_string()),
        }
    }
    for b in 0..nb {
        for k in 0..times.len() {
            out.probability[b][k] = if out.completed[b] == 0 {
                f64::NAN
            } else {
                out.synchronized[b][k] as f64 / out.completed[b] as f64
            };
        }
        let finished: Vec<Option<f64>> = (0..seeds.len())
            .filter(|&r| out.errors[b][r].is_none())
            .map(|r| out.crossing_times[b][r])
            .collect();
        out.median_crossing[b] = censored_median(&finished);
        if matches!(sweep.model, Model::Sa | Model::Usa) {
            let state = EquiangularState::new(0.0, n, sweep.betas[b], sweep.model)?;
            out.predicted[b] = threshold_crossing_time(&state, tau).ok();
        }
    }
    Ok(out)
}

impl PhaseDiagram {
    /// `|median - predicted| / predicted` per beta.
    pub fn relative_errors(&self) -> Vec<Option<f64>> {
        self.median_crossing
            .iter()
            .zip(&self.predicted)
            .map(|(m, p)| Some((m.as_ref()? - p.as_ref()?).abs() / p.as_ref()?))
            .collect()
    }

    pub fn to_output(&self) -> ExperimentOutput {
        let opt = |v: Option<f64>| Cell::Float(v.unwrap_or(f64::NAN));
        let mut main = Table::new(
            "",
            &[
                "beta",
                "t",
                "probability",
                "synchronized",
                "completed",
                "errors",
                "predicted_crossing",
                "median_crossing",
            ],
        );
        for (b, &beta) in self.betas.iter().enumerate() {
            let errors = self.errors[b].iter().filter(|e| e.is_some()).count();
            for (k, &t) in self.times.iter().enumerate() {
                main.push(vec![
                    beta.into(),
                    t.into(),
                    self.probability[b][k].into(),
                    self.synchronized[b][k].into(),
                    self.completed[b].into(),
                    errors.into(),
                    opt(self.predicted[b]),
                    opt(self.median_crossing[b]),
                ]);
            }
        }
        let mut crossings = Table::new("crossings", &["beta", "replicate", "seed", "crossing_time", "status"]);
        for (b, &beta) in self.betas.iter().enumerate() {
            for (r, &seed) in self.seeds.iter().enumerate() {
                let status = match (&self.errors[b][r], self.crossing_times[b][r]) {
                    (Some(_), _) => "error",
                    (None, Some(_)) => "synchronized",
                    (None, None) => "censored",
                };
                crossings.push(vec![beta.into(), r.into(), seed.into(), opt(self.crossing_times[b][r]), status.into()]);
            }
        }
        let rel = self.relative_errors();
        let per_beta: Vec<_> = self
            .betas
            .iter()
            .enumerate()
            .map(|(b, beta)| {
                json!({
                    "beta": beta,
                    "predicted_crossing": self.predicted[b],
                    "median_crossing": self.median_crossing[b],
                    "relative_error": rel[b],
                    "errors": self.errors[b].iter().flatten().collect::<Vec<_>>(),
                })
            })
            .collect();
        ExperimentOutput {
            kind: "sweep",
            tables: vec![main, crossings],
            summary: json!({ "per_beta": per_beta }),
            snapshots: None,
        }
    }
}
