//! Drivers for the scalar reductions: equiangular curves, long-context
//! correlations and mode counts.

use serde::Serialize;
use serde_json::json;

use super::config::{config_err, linspace, ExperimentConfig};
use super::output::{Cell, ExperimentOutput, Table};
use super::spearman;
use crate::equiangular::{
    linearized_rate, longcontext_limit, longcontext_output_correlation, solve_equiangular_at,
    threshold_crossing_time, EquiangularState, LongContextQuery, DEFAULT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::meanshift::mode_scaling_experiment;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquiangularRun {
    pub state: EquiangularState,
    pub tau: f64,
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    /// `None` when the threshold is unreachable.
    pub crossing_time: Option<f64>,
    pub linearized_rate: f64,
}

pub fn run_equiangular(cfg: &ExperimentConfig) -> Result<EquiangularRun> {
    let ec = cfg
        .equiangular
        .as_ref()
        .ok_or_else(|| Error::Config("missing [equiangular] section".into()))?;
    let state = EquiangularState::new(ec.rho0, ec.n, ec.beta, ec.model).map_err(config_err("equiangular"))?;
    if !(ec.t_final > 0.0) || ec.t_points < 2 {
        return Err(Error::Config("`equiangular.t_final` must be > 0 and `t_points` >= 2".into()));
    }
    let times = linspace(0.0, ec.t_final, ec.t_points);
    let rho = solve_equiangular_at(&state, &times, DEFAULT_TOLERANCE)?;
    let crossing_time = match threshold_crossing_time(&state, cfg.tau) {
        Ok(t) => Some(t),
        Err(Error::Unreachable(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EquiangularRun {
        state,
        tau: cfg.tau,
        times,
        rho,
        crossing_time,
        linearized_rate: linearized_rate(ec.model, ec.beta)?,
    })
}

impl EquiangularRun {
    pub fn to_output(&self) -> ExperimentOutput {
        let mut main = Table::new("", &["t", "rho", "gap"]);
        for (&t, &r) in self.times.iter().zip(&self.rho) {
            main.push(vec![t.into(), r.into(), (1.0 - r).into()]);
        }
        ExperimentOutput {
            kind: "equiangular",
            tables: vec![main],
            summary: json!({
                "model": self.state.model,
                "n": self.state.n,
                "beta": self.state.beta,
                "rho0": self.state.rho,
                "tau": self.tau,
                "crossing_time": self.crossing_time,
                "linearized_rate": self.linearized_rate,
            }),
            snapshots: None,
        }
    }
}

/// Which large-`n` regime `(rho, gamma)` falls in; `critical` only when
/// `gamma == 1 / (1 - rho)` exactly, matching [`longcontext_limit`].
pub fn longcontext_branch(rho: f64, gamma: f64) -> &'static str {
    let critical = 1.0 / (1.0 - rho);
    if gamma < critical {
        "subcritical"
    } else if gamma == critical {
        "critical"
    } else {
        "supercritical"
    }
}

pub fn run_longcontext(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let lc = cfg
        .longcontext
        .as_ref()
        .ok_or_else(|| Error::Config("missing [longcontext] section".into()))?;
    let mut main = Table::new("", &["rho", "gamma", "n", "correlation", "limit", "branch"]);
    for &rho in &lc.rho {
        for &gamma in &lc.gamma {
            let limit = longcontext_limit(rho, gamma).map_err(config_err("longcontext"))?;
            for &n in &lc.n {
                let q = LongContextQuery::new(rho, gamma, n).map_err(config_err("longcontext"))?;
                main.push(vec![
                    rho.into(),
                    gamma.into(),
                    n.into(),
                    longcontext_output_correlation(&q).into(),
                    limit.into(),
                    Cell::from(longcontext_branch(rho, gamma)),
                ]);
            }
        }
    }
    let rows = main.rows.len();
    Ok(ExperimentOutput {
        kind: "longcontext",
        tables: vec![main],
        summary: json!({ "rows": rows }),
        snapshots: None,
    })
}

pub fn run_modes(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mc = cfg
        .modes
        .as_ref()
        .ok_or_else(|| Error::Config("missing [modes] section".into()))?;
    let seeds = cfg.seed_list();
    let rows = mode_scaling_experiment(mc.n, &mc.betas, &seeds).map_err(config_err("modes"))?;
    let mut main = Table::new("", &["beta", "mean_modes", "std_modes", "ratio"]);
    for r in &rows {
        main.push(vec![r.beta.into(), r.mean_modes.into(), r.std_modes.into(), r.ratio.into()]);
    }
    let betas: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_modes).collect();
    let ratios = rows.iter().map(|r| r.ratio);
    let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
    Ok(ExperimentOutput {
        kind: "modes",
        tables: vec![main],
        summary: json!({
            "spearman": if rows.len() >= 2 { spearman(&betas, &means) } else { f64::NAN },
            "ratio_spread": hi / lo,
            "rows": rows,
        }),
        snapshots: None,
    })
}
