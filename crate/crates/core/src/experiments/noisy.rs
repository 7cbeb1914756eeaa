//! Order parameter of the noisy flow across inverse noise strengths.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use super::output::{ExperimentOutput, Table};
use super::{job_stream, TAG_NOISY_INIT, TAG_NOISY_NOISE};
use crate::error::{Error, Result};
use crate::integrate::{integrate_sde, Method, NoiseSpec, Observers};
use crate::meanshift::mean_std;
use crate::tokens::TokenConfiguration;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyRow {
    pub kappa: f64,
    pub mean_order: f64,
    pub std_order: f64,
    /// Time-averaged order parameter per replicate.
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyResult {
    pub rows: Vec<NoisyRow>,
    pub seeds: Vec<u64>,
}

pub fn run_noisy_bifurcation(cfg: &ExperimentConfig) -> Result<NoisyResult> {
    let nc = cfg
        .noisy
        .as_ref()
        .ok_or_else(|| Error::Config("missing [noisy] section".into()))?;
    if nc.d < 2 || nc.n < 1 {
        return Err(Error::Config("`noisy.d` must be >= 2 and `noisy.n` >= 1".into()));
    }
    if nc.kappas.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::Config("`noisy.kappas` must all be > 0".into()));
    }
    let spec = cfg.integrator_spec(Method::ProjectedEuler, 1e-3, nc.horizon, Some(10))?;
    let seeds = cfg.seed_list();
    let jobs: Vec<(usize, usize)> = (0..nc.kappas.len())
        .flat_map(|k| (0..seeds.len()).map(move |r| (k, r)))
        .collect();
    let averages = jobs
        .par_iter()
        .map(|&(k, r)| {
            let kappa = nc.kappas[k];
            let axes = [nc.n as u64, nc.d as u64, nc.beta.to_bits(), kappa.to_bits()];
            let mut init = job_stream(seeds[r], TAG_NOISY_INIT, &axes, r);
            let cfg0 = TokenConfiguration::uniform_random(nc.n, nc.d, &mut init)?;
            let noise = NoiseSpec::new(kappa, &job_stream(seeds[r], TAG_NOISY_NOISE, &axes, r))?;
            let obs = Observers {
                order_parameter: true,
                ..Observers::none()
            };
            let traj = integrate_sde(&cfg0, nc.beta, &noise, &spec, &obs)?;
            let order = traj.series("order_parameter").unwrap_or_default();
            let window: Vec<f64> = traj
                .times
                .iter()
                .zip(order)
                .filter(|(t, _)| **t >= nc.burn_in)
                .map(|(_, r)| *r)
                .collect();
            if window.is_empty() {
                return Err(Error::Config("no records after `noisy.burn_in`".into()));
            }
            Ok(window.iter().sum::<f64>() / window.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let rows = nc
        .kappas
        .iter()
        .enumerate()
        .map(|(k, &kappa)| {
            let per_seed = averages[k * seeds.len()..(k + 1) * seeds.len()].to_vec();
            let (mean, std) = mean_std(&per_seed);
            NoisyRow {
                kappa,
                mean_order: mean,
                std_order: std,
                per_seed,
            }
        })
        .collect();
    Ok(NoisyResult { rows, seeds })
}

impl NoisyResult {
    pub fn row(&self, kappa: f64) -> Option<&NoisyRow> {
        self.rows.iter().find(|r| r.kappa == kappa)
    }

    /// Whether each mean is at least the previous one minus two standard
    /// deviations of the two rows combined.
    pub fn monotone_within_two_std(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let slack = 2.0 * (w[0].std_order.powi(2) + w[1].std_order.powi(2)).sqrt();
            w[1].mean_order >= w[0].mean_order - slack
        })
    }

    pub fn to_output(&self) -> ExperimentOutput {
        let mut main = Table::new("", &["kappa", "mean_order", "std_order", "replicates"]);
        let mut per = Table::new("replicates", &["kappa", "replicate", "seed", "mean_order"]);
        for row in &self.rows {
            main.push(vec![
                row.kappa.into(),
                row.mean_order.into(),
                row.std_order.into(),
                row.per_seed.len().into(),
            ]);
            for (r, (&v, &seed)) in row.per_seed.iter().zip(&self.seeds).enumerate() {
                per.push(vec![row.kappa.into(), r.into(), seed.into(), v.into()]);
            }
        }
        ExperimentOutput {
            kind: "noisy",
            tables: vec![main, per],
            summary: json!({
                "rows": self.rows,
                "monotone_within_two_std": self.monotone_within_two_std(),
            }),
            snapshots: None,
        }
    }
}
