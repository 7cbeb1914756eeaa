//! Mean cosine similarity under the three layer-normalization placements.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{config_err, ExperimentConfig};
use super::output::{ExperimentOutput, Table};
use super::{job_stream, percentile, TAG_NORMS};
use crate::diagnostics::{fit_rate, RateFit, RateKind};
use crate::error::{Error, Result};
use crate::fields::{DirectionalState, DynamicsSpec, NormalizationScheme};
use crate::integrate::{integrate_normalized, Method, Observers};
use crate::sphere::equiangular_frame;

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: NormalizationScheme,
    pub replicate: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Mean pairwise inner product.
    pub rho: Vec<f64>,
    /// Mean of `1 - <x_i, x_j>` from chord lengths.
    pub gap: Vec<f64>,
    /// Exponential for Post-LN, power law for Pre-LN, none for Peri-LN.
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeSummary {
    pub scheme: NormalizationScheme,
    pub kind: Option<RateKind>,
    pub mean_rate: Option<f64>,
    pub rates: Vec<f64>,
    pub min_final_rho: f64,
}

#[derive(Debug, Clone)]
pub struct NormsResult {
    pub runs: Vec<SchemeRun>,
    pub summaries: Vec<SchemeSummary>,
}

pub fn run_normalization_comparison(cfg: &ExperimentConfig) -> Result<NormsResult> {
    let nc = cfg
        .norms
        .as_ref()
        .ok_or_else(|| Error::Config("missing [norms] section".into()))?;
    if nc.d < nc.n {
        return Err(Error::Config(format!(
            "`norms.d` must be at least `norms.n` for an equiangular start, got d = {}, n = {}",
            nc.d, nc.n
        )));
    }
    let spec = cfg.integrator_spec(Method::ProjectedRk4, 0.02, nc.horizon, None)?;
    let seeds = cfg.seed_list();
    for &s in &nc.schemes {
        DynamicsSpec::normalized(s, nc.beta).map_err(config_err("norms"))?;
    }
    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|r| (0..nc.schemes.len()).map(move |s| (r, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(r, s)| {
            let scheme = nc.schemes[s];
            // One initialization per replicate, shared by all schemes.
            let mut rng = job_stream(
                seeds[r],
                TAG_NORMS,
                &[nc.n as u64, nc.d as u64, nc.rho0.to_bits()],
                r,
            );
            let cfg0 = equiangular_frame(nc.n, nc.rho0, nc.d, &mut rng)?;
            let dynamics = DynamicsSpec::normalized(scheme, nc.beta)?;
            let obs = Observers {
                pairwise: true,
                ..Observers::none()
            };
            let traj = integrate_normalized(&DirectionalState::on_sphere(cfg0), &dynamics, &spec, &obs)?;
            let rho = traj.series("mean_pairwise").unwrap_or_default().to_vec();
            let gap = traj.series("mean_gap").unwrap_or_default().to_vec();
            let samples: Vec<(f64, f64)> = traj.times.iter().copied().zip(gap.iter().copied()).collect();
            let fit = match scheme {
                NormalizationScheme::PostLn => Some(fit_rate(
                    &samples,
                    RateKind::Exponential,
                    (nc.post_window[0], nc.post_window[1]),
                )?),
                NormalizationScheme::PreLn => Some(fit_rate(
                    &samples,
                    RateKind::Power,
                    (nc.pre_window[0], nc.pre_window[1]),
                )?),
                NormalizationScheme::PeriLn => None,
            };
            Ok(SchemeRun {
                scheme,
                replicate: r,
                seed: seeds[r],
                times: traj.times,
                rho,
                gap,
                fit,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = nc
        .schemes
        .iter()
        .map(|&scheme| {
            let mine: Vec<&SchemeRun> = runs.iter().filter(|r| r.scheme == scheme).collect();
            let rates: Vec<f64> = mine.iter().filter_map(|r| r.fit.map(|f| f.rate)).collect();
            SchemeSummary {
                scheme,
                kind: mine.first().and_then(|r| r.fit.map(|f| f.kind)),
                mean_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
                rates,
                min_final_rho: mine
                    .iter()
                    .map(|r| r.rho.last().copied().unwrap_or(f64::NAN))
                    .fold(f64::INFINITY, f64::min),
            }
        })
        .collect();
    Ok(NormsResult { runs, summaries })
}

impl NormsResult {
    pub fn summary(&self, scheme: NormalizationScheme) -> Option<&SchemeSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme)
    }

    pub fn to_output(&self) -> ExperimentOutput {
        let mut main = Table::new("", &["scheme", "t", "rho_mean", "rho_p05", "rho_p95", "gap_mean", "replicates"]);
        for s in &self.summaries {
            let mine: Vec<&SchemeRun> = self.runs.iter().filter(|r| r.scheme == s.scheme).collect();
            let Some(first) = mine.first() else { continue };
            for (k, &t) in first.times.iter().enumerate() {
                let mut rho: Vec<f64> = mine.iter().map(|r| r.rho[k]).collect();
                rho.sort_by(f64::total_cmp);
                let m = mine.len() as f64;
                let gap = mine.iter().map(|r| r.gap[k]).sum::<f64>() / m;
                main.push(vec![
                    s.scheme.to_string().into(),
                    t.into(),
                    (rho.iter().sum::<f64>() / m).into(),
                    percentile(&rho, 0.05).into(),
                    percentile(&rho, 0.95).into(),
                    gap.into(),
                    mine.len().into(),
                ]);
            }
        }
        let mut fits = Table::new("fits", &["scheme", "replicate", "seed", "kind", "rate", "r_squared", "t_start", "t_end"]);
        for r in &self.runs {
            if let Some(f) = r.fit {
                let kind = match f.kind {
                    RateKind::Exponential => "exponential",
                    RateKind::Power => "power",
                };
                fits.push(vec![
                    r.scheme.to_string().into(),
                    r.replicate.into(),
                    r.seed.into(),
                    kind.into(),
                    f.rate.into(),
                    f.r_squared.into(),
                    f.window.0.into(),
                    f.window.1.into(),
                ]);
            }
        }
        ExperimentOutput {
            kind: "norms",
            tables: vec![main, fits],
            summary: json!({ "schemes": self.summaries }),
            snapshots: None,
        }
    }
}
