//! A single trajectory with every diagnostic recorded.

use serde_json::{json, Value};

use super::config::{config_err, ExperimentConfig, InitKind, SimulateConfig, SnapshotMode};
use super::output::{ExperimentOutput, Table};
use super::{job_stream, TAG_SIMULATE, TAG_SIMULATE_NOISE};
use crate::error::{Error, Result};
use crate::fields::{DirectionalState, DynamicsSpec, Model};
use crate::integrate::{
    integrate_normalized, integrate_ode, integrate_rescaled_sa, integrate_sde, Method, NoiseSpec,
    Observers, Trajectory,
};
use crate::sphere::{equiangular_frame, UnitVector};
use crate::tokens::TokenConfiguration;

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub initial: TokenConfiguration,
    pub trajectory: Trajectory,
    pub snapshots: SnapshotMode,
    pub seed: u64,
}

fn initial_configuration(sc: &SimulateConfig, seed: u64) -> Result<TokenConfiguration> {
    let axes = [sc.n as u64, sc.d as u64];
    let cfg = match sc.init {
        InitKind::Uniform => {
            let mut rng = job_stream(seed, TAG_SIMULATE, &axes, 0);
            TokenConfiguration::uniform_random(sc.n, sc.d, &mut rng)?
        }
        InitKind::Equiangular => {
            let rho0 = sc
                .rho0
                .ok_or_else(|| Error::Config("`simulate.rho0` is required for init = \"equiangular\"".into()))?;
            let mut rng = job_stream(seed, TAG_SIMULATE, &axes, 0);
            equiangular_frame(sc.n, rho0, sc.d, &mut rng)?
        }
        InitKind::Points => {
            let pts = sc
                .points
                .as_ref()
                .ok_or_else(|| Error::Config("`simulate.points` is required for init = \"points\"".into()))?;
            let units = pts
                .iter()
                .map(|p| UnitVector::new(p.clone()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config(format!("`simulate.points`: {e}")))?;
            return match &sc.masses {
                Some(m) => TokenConfiguration::with_masses(units, m.clone()),
                None => TokenConfiguration::new(units),
            }
            .map_err(config_err("simulate"));
        }
    };
    match &sc.masses {
        Some(m) => TokenConfiguration::from_flat_with_masses(cfg.len(), cfg.dim(), cfg.coords().to_vec(), m.clone()),
        None => Ok(cfg),
    }
    .map_err(config_err("simulate"))
}

pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimulationResult> {
    let sc = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
    let seed = cfg.seed_list()[0];
    let cfg0 = initial_configuration(sc, seed).map_err(config_err("simulate"))?;
    let spec = cfg.integrator_spec(Method::ProjectedRk4, 0.01, sc.horizon, None)?;
    let mut obs = Observers::standard(cfg.tau);
    if sc.snapshots == SnapshotMode::Full {
        obs = obs.with_snapshots();
    }
    let trajectory = match (sc.kappa, sc.rescale) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("`simulate.kappa` and `simulate.rescale` are exclusive".into()))
        }
        (Some(kappa), None) => {
            if !matches!(sc.model, Model::Usa | Model::Kuramoto) {
                return Err(Error::Config("`simulate.kappa` needs model = \"usa\" or \"kuramoto\"".into()));
            }
            let stream = job_stream(seed, TAG_SIMULATE_NOISE, &[sc.n as u64, sc.d as u64, kappa.to_bits()], 0);
            let noise = NoiseSpec::new(kappa, &stream).map_err(config_err("simulate"))?;
            integrate_sde(&cfg0, sc.beta, &noise, &spec, &obs)?
        }
        (None, Some(mode)) => {
            if sc.model != Model::Sa {
                return Err(Error::Config("`simulate.rescale` needs model = \"sa\"".into()));
            }
            integrate_rescaled_sa(&cfg0, sc.beta, &spec, mode, &obs)?
        }
        (None, None) if sc.model == Model::NormalizedAttention => {
            let scheme = sc
                .scheme
                .ok_or_else(|| Error::Config("`simulate.scheme` is required for normalized attention".into()))?;
            let dynamics = DynamicsSpec::normalized(scheme, sc.beta).map_err(config_err("simulate"))?;
            integrate_normalized(&DirectionalState::on_sphere(cfg0.clone()), &dynamics, &spec, &obs)?
        }
        (None, None) => {
            let dynamics = DynamicsSpec::new(sc.model, sc.beta).map_err(config_err("simulate"))?;
            dynamics.check_compatible(&cfg0).map_err(config_err("simulate"))?;
            integrate_ode(&cfg0, &dynamics, &spec, &obs)?
        }
    };
    Ok(SimulationResult {
        initial: cfg0,
        trajectory,
        snapshots: sc.snapshots,
        seed,
    })
}

impl SimulationResult {
    fn snapshot_records(&self) -> Option<Vec<Value>> {
        let t = &self.trajectory;
        let diag = |k: usize| -> serde_json::Map<String, Value> {
            let mut m = serde_json::Map::new();
            m.insert("t".into(), json!(t.times[k]));
            for (name, v) in &t.series {
                m.insert(name.clone(), json!(v[k]));
            }
            m
        };
        match self.snapshots {
            SnapshotMode::None => None,
            SnapshotMode::Diagnostics => Some((0..t.times.len()).map(|k| Value::Object(diag(k))).collect()),
            SnapshotMode::Full => Some(
                t.snapshots
                    .iter()
                    .enumerate()
                    .map(|(k, snap)| {
                        let mut m = diag(k);
                        let coords: Vec<&[f64]> = snap.points().collect();
                        m.insert("coords".into(), json!(coords));
                        if let Some(r) = t.radii.get(k) {
                            m.insert("radii".into(), json!(r));
                        }
                        Value::Object(m)
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_output(&self) -> ExperimentOutput {
        let t = &self.trajectory;
        let names: Vec<&str> = t.series.keys().map(String::as_str).collect();
        let mut header = vec!["t"];
        header.extend(&names);
        let mut main = Table::new("", &header);
        for (k, &time) in t.times.iter().enumerate() {
            let mut row = vec![time.into()];
            row.extend(names.iter().map(|n| t.series[*n][k].into()));
            main.push(row);
        }
        let last = |name: &str| t.series(name).and_then(|s| s.last().copied());
        ExperimentOutput {
            kind: "simulate",
            tables: vec![main],
            summary: json!({
                "seed": self.seed,
                "n": self.initial.len(),
                "d": self.initial.dim(),
                "records": t.times.len(),
                "final_time": t.times.last(),
                "final_min_pairwise": last("min_pairwise"),
                "final_cluster_count": last("cluster_count"),
                "provenance": t.provenance,
            }),
            snapshots: self.snapshot_records(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::parse_config;

    #[test]
    fn uniform_simulation_synchronizes_in_hemisphere() {
        let cfg = parse_config("seed = 3\n[simulate]\nbeta = 1.0\nn = 6\nd = 12\nhorizon = 30.0\n").unwrap();
        let r = run_simulation(&cfg).unwrap();
        let min = r.trajectory.series("min_pairwise").unwrap();
        assert!(*min.last().unwrap() > 0.999);
        let out = r.to_output();
        assert_eq!(out.main().header[0], "t");
        assert!(out.snapshots.is_none());
    }

    #[test]
    fn full_snapshots_have_coordinates() {
        let text = "[simulate]\nbeta = 1.0\nhorizon = 1.0\ninit = \"points\"\npoints = [[1.0, 0.0], [0.0, 1.0]]\nsnapshots = \"full\"\n[integrator]\ndt = 0.1\nrecord_every = 5\n";
        let r = run_simulation(&parse_config(text).unwrap()).unwrap();
        let snaps = r.to_output().snapshots.unwrap();
        assert_eq!(snaps.len(), r.trajectory.times.len());
        assert_eq!(snaps[0]["coords"][1][1], 1.0);
    }

    #[test]
    fn equiangular_init_needs_rho0() {
        let text = "[simulate]\nbeta = 1.0\nn = 4\nd = 4\nhorizon = 1.0\ninit = \"equiangular\"\n";
        assert!(run_simulation(&parse_config(text).unwrap()).unwrap_err().is_config_error());
    }

    #[test]
    fn noisy_simulation_is_seeded() {
        let text = "seed = 9\n[simulate]\nmodel = \"kuramoto\"\nbeta = 0.0\nn = 20\nd = 2\nhorizon = 0.5\nkappa = 2.0\n[integrator]\nmethod = \"projected_euler\"\ndt = 0.01\n";
        let cfg = parse_config(text).unwrap();
        let a = run_simulation(&cfg).unwrap().trajectory.final_state;
        let b = run_simulation(&cfg).unwrap().trajectory.final_state;
        assert_eq!(a.coords(), b.coords());
    }
}
