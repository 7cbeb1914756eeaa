//! Energy staircase of a multi-cluster initialization.

use std::collections::VecDeque;

use serde::Serialize;
use serde_json::json;

use super::config::{config_err, ExperimentConfig};
use super::output::{ExperimentOutput, Table};
use crate::error::{Error, Result};
use crate::fields::DynamicsSpec;
use crate::integrate::{integrate_ode, Method, Observers, Trajectory};
use crate::sphere::UnitVector;
use crate::tokens::TokenConfiguration;

/// A maximal run of windows over which the energy varies by less than the
/// relative threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plateau {
    pub start: f64,
    pub end: f64,
    /// Mean of the series over the plateau.
    pub level: f64,
    pub start_index: usize,
    pub end_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    /// Time of the largest increment between the two plateaus.
    pub time: f64,
    pub from_level: f64,
    pub to_level: f64,
    pub clusters_before: usize,
    pub clusters_after: usize,
}

/// Plateaus of `values`: every sample whose forward window of length `window`
/// (in time) fits in the data and has `(max - min) < rel_threshold * |max|` marks
/// that window flat; overlapping flat windows merge. Adjacent plateaus whose
/// levels agree within the threshold are merged as well.
pub fn detect_plateaus(times: &[f64], values: &[f64], window: f64, rel_threshold: f64) -> Vec<Plateau> {
    let n = times.len().min(values.len());
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut j = 0;
    for k in 0..n {
        while j < n && times[j] <= times[k] + window {
            while maxq.back().is_some_and(|&b| values[b] <= values[j]) {
                maxq.pop_back();
            }
            maxq.push_back(j);
            while minq.back().is_some_and(|&b| values[b] >= values[j]) {
                minq.pop_back();
            }
            minq.push_back(j);
            j += 1;
        }
        while maxq.front().is_some_and(|&f| f < k) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&f| f < k) {
            minq.pop_front();
        }
        // The window must reach its full length inside the data.
        if times[j - 1] < times[k] + window * (1.0 - 1e-9) {
            break;
        }
        let (hi, lo) = (values[maxq[0]], values[minq[0]]);
        if hi - lo < rel_threshold * hi.abs() {
            match spans.last_mut() {
                Some(last) if k <= last.1 => last.1 = last.1.max(j - 1),
                _ => spans.push((k, j - 1)),
            }
        }
    }
    let mut plateaus: Vec<Plateau> = Vec::new();
    for (s, e) in spans {
        let level = values[s..=e].iter().sum::<f64>() / (e - s + 1) as f64;
        if let Some(last) = plateaus.last_mut() {
            if (level - last.level).abs() < rel_threshold * level.abs().max(last.level.abs()) {
                let (a, b) = ((last.end_index - last.start_index + 1) as f64, (e - s + 1) as f64);
                last.level = (last.level * a + level * b) / (a + b);
                last.end = times[e];
                last.end_index = e;
                continue;
            }
        }
        plateaus.push(Plateau {
            start: times[s],
            end: times[e],
            level,
            start_index: s,
            end_index: e,
        });
    }
    plateaus
}

#[derive(Debug, Clone)]
pub struct StaircaseResult {
    pub trajectory: Trajectory,
    pub plateaus: Vec<Plateau>,
    pub jumps: Vec<Jump>,
    pub final_cluster_count: usize,
    /// Largest decrease of the raw energy between consecutive records.
    pub max_energy_drop: f64,
    /// Allowed decrease between consecutive records: `10 dt^2` per step.
    pub energy_tolerance: f64,
    pub window: f64,
    pub rel_threshold: f64,
}

impl StaircaseResult {
    pub fn levels_increasing(&self) -> bool {
        self.plateaus.windows(2).all(|w| w[1].level > w[0].level)
    }

    pub fn energy_monotone(&self) -> bool {
        self.max_energy_drop <= self.energy_tolerance
    }

    pub fn to_output(&self) -> ExperimentOutput {
        let t = &self.trajectory;
        let names = ["energy", "energy_scaled", "cluster_count", "min_pairwise"];
        let mut main = Table::new("", &["t", "energy", "energy_scaled", "cluster_count", "min_pairwise"]);
        for (k, &time) in t.times.iter().enumerate() {
            let mut row = vec![time.into()];
            for name in names {
                row.push(t.series(name).map_or(f64::NAN, |s| s[k]).into());
            }
            main.push(row);
        }
        let mut plateaus = Table::new("plateaus", &["index", "start", "end", "level_scaled"]);
        for (i, p) in self.plateaus.iter().enumerate() {
            plateaus.push(vec![i.into(), p.start.into(), p.end.into(), p.level.into()]);
        }
        let mut jumps = Table::new(
            "jumps",
            &["index", "time", "from_level", "to_level", "clusters_before", "clusters_after"],
        );
        for (i, j) in self.jumps.iter().enumerate() {
            jumps.push(vec![
                i.into(),
                j.time.into(),
                j.from_level.into(),
                j.to_level.into(),
                j.clusters_before.into(),
                j.clusters_after.into(),
            ]);
        }
        ExperimentOutput {
            kind: "staircase",
            tables: vec![main, plateaus, jumps],
            summary: json!({
                "plateau_count": self.plateaus.len(),
                "jump_count": self.jumps.len(),
                "plateaus": self.plateaus,
                "jumps": self.jumps,
                "final_cluster_count": self.final_cluster_count,
                "max_energy_drop": self.max_energy_drop,
                "energy_tolerance": self.energy_tolerance,
                "detector": { "window": self.window, "rel_threshold": self.rel_threshold },
            }),
            snapshots: None,
        }
    }
}

pub fn run_staircase(cfg: &ExperimentConfig) -> Result<StaircaseResult> {
    let st = cfg
        .staircase
        .as_ref()
        .ok_or_else(|| Error::Config("missing [staircase] section".into()))?;
    let points = st
        .points
        .iter()
        .map(|p| UnitVector::new(p.clone()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("`staircase.points`: {e}")))?;
    let cfg0 = match &st.masses {
        Some(m) => TokenConfiguration::with_masses(points, m.clone()),
        None => TokenConfiguration::new(points),
    }
    .map_err(config_err("staircase"))?;
    if !(st.beta > 0.0) {
        return Err(Error::Config("`staircase.beta` must be > 0".into()));
    }
    if !(st.window_fraction > 0.0 && st.window_fraction < 1.0) {
        return Err(Error::Config("`staircase.window_fraction` must lie in (0, 1)".into()));
    }
    let dynamics = DynamicsSpec::sa(st.beta).map_err(config_err("staircase"))?;
    let spec = cfg.integrator_spec(Method::ProjectedRk4, 0.2, st.horizon, Some(5))?;
    let obs = Observers {
        energy: true,
        pairwise: true,
        cluster_tau: Some(cfg.tau),
        ..Observers::none()
    };
    let traj = integrate_ode(&cfg0, &dynamics, &spec, &obs)?;
    let window = st.window_fraction * st.horizon;
    let scaled = traj.series("energy_scaled").unwrap_or_default();
    let plateaus = detect_plateaus(&traj.times, scaled, window, st.rel_threshold);
    let clusters = traj.series("cluster_count").unwrap_or_default();
    let jumps = plateaus
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].end_index, w[1].start_index);
            let k = (a..b.max(a + 1))
                .max_by(|&i, &j| {
                    let di = scaled[i + 1] - scaled[i];
                    let dj = scaled[j + 1] - scaled[j];
                    di.total_cmp(&dj)
                })
                .unwrap_or(a);
            Jump {
                time: traj.times[k],
                from_level: w[0].level,
                to_level: w[1].level,
                clusters_before: clusters[(w[0].start_index + w[0].end_index) / 2] as usize,
                clusters_after: clusters[(w[1].start_index + w[1].end_index) / 2] as usize,
            }
        })
        .collect();
    let energy = traj.series("energy").unwrap_or_default();
    let max_energy_drop = energy
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(0.0, f64::max);
    let steps_per_record = spec.record_every as f64;
    let energy_tolerance = 10.0 * spec.dt * spec.dt * steps_per_record;
    let final_cluster_count = clusters.last().map_or(cfg0.len(), |c| *c as usize);
    Ok(StaircaseResult {
        trajectory: traj,
        plateaus,
        jumps,
        final_cluster_count,
        max_energy_drop,
        energy_tolerance,
        window,
        rel_threshold: st.rel_threshold,
    })
}
