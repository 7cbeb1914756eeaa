//! Reproducible experiment drivers.
//!
//! Each driver returns a typed result and converts it into an
//! [`ExperimentOutput`] for persistence. Independent jobs (grid cells and
//! replicates) run on a rayon pool and are gathered in a fixed order, so outputs
//! do not depend on the number of worker threads.
//!
//! Every job draws from its own [`RandomStream`](crate::sphere::RandomStream):
//! the seed is the replicate's seed and the stream id hashes a kind tag, the
//! values of the grid axes and the replicate index. A sub-grid therefore
//! reproduces the corresponding cells of the full grid.

mod config;
mod noisy;
mod norms;
mod output;
mod phase;
mod reductions;
mod simulate;
mod staircase;
mod validate;

use std::time::Instant;

pub use config::{
    parse_config, read_config, EquiangularConfig, ExperimentConfig, ExperimentKind, InitKind,
    IntegratorConfig, LongContextConfig, ModesConfig, NoisyConfig, NormsConfig, SimulateConfig,
    SnapshotMode, StaircaseConfig, SweepConfig, ValidateConfig,
};
pub use noisy::{run_noisy_bifurcation, NoisyResult, NoisyRow};
pub use norms::{run_normalization_comparison, NormsResult, SchemeRun, SchemeSummary};
pub use output::{format_float, write_results, Cell, ExperimentOutput, Table, WrittenFiles};
pub use phase::{run_phase_diagram, PhaseDiagram};
pub use reductions::{
    longcontext_branch, run_equiangular, run_longcontext, run_modes, EquiangularRun,
};
pub use simulate::{run_simulation, SimulationResult};
pub use staircase::{detect_plateaus, run_staircase, Jump, Plateau, StaircaseResult};
pub use validate::{run_clustering_validation, validate_configuration, ValidationResult, ValidationRun};

use crate::error::{Error, Result};
use crate::sphere::{stream_id_of, RandomStream};

/// Runs `f` on a pool of `jobs` workers (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == Some(0) {
        return Err(Error::Config("`--jobs` must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Dispatches on the config's experiment section.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    with_jobs(jobs, || match cfg.kind()? {
        ExperimentKind::Simulate => run_simulation(cfg).map(|r| r.to_output()),
        ExperimentKind::Sweep => run_phase_diagram(cfg).map(|r| r.to_output()),
        ExperimentKind::Equiangular => run_equiangular(cfg).map(|r| r.to_output()),
        ExperimentKind::Longcontext => run_longcontext(cfg),
        ExperimentKind::Modes => run_modes(cfg),
        ExperimentKind::Noisy => run_noisy_bifurcation(cfg).map(|r| r.to_output()),
        ExperimentKind::Staircase => run_staircase(cfg).map(|r| r.to_output()),
        ExperimentKind::Norms => run_normalization_comparison(cfg).map(|r| r.to_output()),
        ExperimentKind::Validate => run_clustering_validation(cfg).map(|r| r.to_output()),
    })?
}

/// Runs the config and writes its artifacts to `cfg.output` (or `fallback`).
pub fn run_and_write(
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
    fallback: &std::path::Path,
) -> Result<(ExperimentOutput, WrittenFiles)> {
    let start = Instant::now();
    let out = run_experiment(cfg, jobs)?;
    let path = cfg.output.clone().unwrap_or_else(|| fallback.to_path_buf());
    let files = write_results(&out, cfg, &path, start.elapsed().as_secs_f64())?;
    Ok((out, files))
}

// Stream tags, one per consumer of randomness.
const TAG_SWEEP: u64 = 1;
const TAG_NOISY_INIT: u64 = 2;
const TAG_NOISY_NOISE: u64 = 3;
const TAG_NORMS: u64 = 4;
const TAG_VALIDATE: u64 = 5;
const TAG_SIMULATE: u64 = 6;
const TAG_SIMULATE_NOISE: u64 = 7;

fn job_stream(seed: u64, tag: u64, axes: &[u64], replicate: usize) -> RandomStream {
    let mut words = Vec::with_capacity(axes.len() + 2);
    words.push(tag);
    words.extend_from_slice(axes);
    words.push(replicate as u64);
    RandomStream::new(seed, stream_id_of(&words))
}

/// Median of the values; `None` entries count as `+inf` (censored). Returns
/// `None` when the median itself is censored.
pub(crate) fn censored_median(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let m = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
    m.is_finite().then_some(m)
}

/// Linear-interpolated percentile of sorted-by-caller data, `q` in `[0, 1]`.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// First recorded time at which `gap <= 1 - tau`, log-linearly interpolated in
/// the gap between the bracketing records.
pub(crate) fn crossing_time(times: &[f64], gaps: &[f64], tau: f64) -> Option<f64> {
    let target = 1.0 - tau;
    let k = gaps.iter().position(|g| *g <= target)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (g0, g1) = (gaps[k - 1], gaps[k]);
    if !(g1 > 0.0) {
        return Some(times[k]);
    }
    let frac = (g0.ln() - target.ln()) / (g0.ln() - g1.ln());
    Some(times[k - 1] + frac * (times[k] - times[k - 1]))
}
