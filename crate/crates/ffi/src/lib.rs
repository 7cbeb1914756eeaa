//! C ABI over the attnsphere simulator.
//!
//! Objects cross the boundary as opaque handles owned by the caller and released
//! with the matching `*_free`. Every fallible call returns an [`AttnStatus`];
//! on failure [`attn_last_error`] describes the cause for the calling thread.
//! Output arrays are caller-allocated: functions taking `(out, len)` fail with
//! `ATTN_STATUS_BUFFER_TOO_SMALL` when `len` is short and report the needed
//! length where a `needed` pointer is offered.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use attnsphere::diagnostics::interaction_energy;
use attnsphere::equiangular::{
    longcontext_output_correlation, threshold_crossing_time, EquiangularState, LongContextQuery,
};
use attnsphere::experiments::{read_config, run_and_write};
use attnsphere::fields::velocity;
use attnsphere::integrate::integrate_ode;
use attnsphere::sphere::equiangular_frame;
use attnsphere::{
    DynamicsSpec, Error, IntegratorSpec, Method, Model, Observers, RandomStream, TokenConfiguration,
    Trajectory,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Degenerate = 4,
    Stiffness = 5,
    Unreachable = 6,
    Config = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnModel {
    Sa = 0,
    Usa = 1,
    Kuramoto = 2,
    Hardmax = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMethod {
    ProjectedEuler = 0,
    ProjectedRk4 = 1,
}

/// Token positions and masses.
pub struct AttnConfiguration(TokenConfiguration);

/// Recorded times, diagnostic series and final state of one integration.
pub struct AttnTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AttnStatus {
    match err {
        Error::DimensionMismatch { .. } => AttnStatus::DimensionMismatch,
        Error::DegenerateStep | Error::DegenerateConfiguration(_) | Error::DegenerateField(_) => {
            AttnStatus::Degenerate
        }
        Error::InvalidArgument(_) => AttnStatus::InvalidArgument,
        Error::Stiffness { .. } => AttnStatus::Stiffness,
        Error::Unreachable(_) => AttnStatus::Unreachable,
        Error::Config(_) => AttnStatus::Config,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => AttnStatus::Io,
    }
}

struct Fail(AttnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AttnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AttnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AttnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AttnStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize, needed: *mut usize) -> Result<(), Fail> {
    if !needed.is_null() {
        *needed = src.len();
    }
    if len < src.len() {
        return Err(Fail(
            AttnStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

fn model_of(m: AttnModel) -> Model {
    match m {
        AttnModel::Sa => Model::Sa,
        AttnModel::Usa => Model::Usa,
        AttnModel::Kuramoto => Model::Kuramoto,
        AttnModel::Hardmax => Model::Hardmax,
    }
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn attn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a configuration from `n * d` row-major coordinates; rows are
/// renormalized and must be nonzero. `masses` may be null for uniform masses,
/// otherwise they must sum to 1.
///
/// # Safety
/// `coords` must point to `n * d` doubles and `masses`, if non-null, to `n`.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_new(
    n: usize,
    d: usize,
    coords: *const f64,
    masses: *const f64,
    out: *mut *mut AttnConfiguration,
) -> AttnStatus {
    guard(|| {
        let total = n
            .checked_mul(d)
            .ok_or_else(|| Fail(AttnStatus::InvalidArgument, "n * d overflows".into()))?;
        let c = slice(coords, total, "coords")?.to_vec();
        let cfg = if masses.is_null() {
            TokenConfiguration::from_flat(n, d, c)?
        } else {
            TokenConfiguration::from_flat_with_masses(n, d, c, slice(masses, n, "masses")?.to_vec())?
        };
        write(out, Box::into_raw(Box::new(AttnConfiguration(cfg))), "out")
    })
}

/// `n` tokens drawn uniformly from the sphere in `R^d`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_uniform(
    n: usize,
    d: usize,
    seed: u64,
    out: *mut *mut AttnConfiguration,
) -> AttnStatus {
    guard(|| {
        let cfg = TokenConfiguration::uniform_random(n, d, &mut RandomStream::new(seed, 0))?;
        write(out, Box::into_raw(Box::new(AttnConfiguration(cfg))), "out")
    })
}

/// `n` tokens in `R^d` (`d >= n`) with all pairwise inner products equal to `rho`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_equiangular(
    n: usize,
    rho: f64,
    d: usize,
    seed: u64,
    out: *mut *mut AttnConfiguration,
) -> AttnStatus {
    guard(|| {
        let cfg = equiangular_frame(n, rho, d, &mut RandomStream::new(seed, 0))?;
        write(out, Box::into_raw(Box::new(AttnConfiguration(cfg))), "out")
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_free(cfg: *mut AttnConfiguration) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of tokens, or 0 for null.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_len(cfg: *const AttnConfiguration) -> usize {
    cfg.as_ref().map_or(0, |c| c.0.len())
}

/// Ambient dimension, or 0 for null.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_dim(cfg: *const AttnConfiguration) -> usize {
    cfg.as_ref().map_or(0, |c| c.0.dim())
}

/// Copies the `n * d` row-major coordinates.
///
/// # Safety
/// `cfg` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn attn_configuration_coords(
    cfg: *const AttnConfiguration,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> AttnStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        copy_out(cfg.0.coords(), out, len, needed)
    })
}

/// Row-major `n * d` velocity field at `cfg`.
///
/// # Safety
/// `cfg` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn attn_velocity(
    cfg: *const AttnConfiguration,
    model: AttnModel,
    beta: f64,
    out: *mut f64,
    len: usize,
) -> AttnStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let v = velocity(&cfg.0, &DynamicsSpec::new(model_of(model), beta)?)?;
        copy_out(v.as_slice(), out, len, std::ptr::null_mut())
    })
}

/// Interaction energy of `cfg` at inverse temperature `beta`.
///
/// # Safety
/// `cfg` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn attn_interaction_energy(
    cfg: *const AttnConfiguration,
    beta: f64,
    out: *mut f64,
) -> AttnStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        write(out, interaction_energy(&cfg.0, beta)?, "out")
    })
}

/// Integrates `cfg` to `t_final`, recording every diagnostic each
/// `record_every` steps (0 picks a default).
///
/// # Safety
/// `cfg` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn attn_integrate(
    cfg: *const AttnConfiguration,
    model: AttnModel,
    beta: f64,
    method: AttnMethod,
    dt: f64,
    t_final: f64,
    record_every: usize,
    tau: f64,
    out: *mut *mut AttnTrajectory,
) -> AttnStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let method = match method {
            AttnMethod::ProjectedEuler => Method::ProjectedEuler,
            AttnMethod::ProjectedRk4 => Method::ProjectedRk4,
        };
        let mut spec = IntegratorSpec::new(method, dt, t_final)?;
        if record_every > 0 {
            spec = spec.with_record_every(record_every);
        }
        let dynamics = DynamicsSpec::new(model_of(model), beta)?;
        let traj = integrate_ode(&cfg.0, &dynamics, &spec, &Observers::standard(tau))?;
        write(out, Box::into_raw(Box::new(AttnTrajectory(traj))), "out")
    })
}

/// # Safety
/// `traj` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn attn_trajectory_free(traj: *mut AttnTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of recorded times, or 0 for null.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attn_trajectory_len(traj: *const AttnTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.times.len())
}

/// # Safety
/// `traj` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn attn_trajectory_times(
    traj: *const AttnTrajectory,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> AttnStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(|| null("traj"))?;
        copy_out(&traj.0.times, out, len, needed)
    })
}

/// One recorded series by name, e.g. `"energy"`, `"min_pairwise"`,
/// `"cluster_count"`, `"order_parameter"`.
///
/// # Safety
/// `traj` must be a live handle, `name` a NUL-terminated string and `out` must
/// hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn attn_trajectory_series(
    traj: *const AttnTrajectory,
    name: *const c_char,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> AttnStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(|| null("traj"))?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Fail(AttnStatus::InvalidArgument, "`name` is not UTF-8".into()))?;
        let series = traj
            .0
            .series(name)
            .ok_or_else(|| Fail(AttnStatus::InvalidArgument, format!("no series named {name:?}")))?;
        copy_out(series, out, len, needed)
    })
}

/// A new configuration handle holding the final state.
///
/// # Safety
/// `traj` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn attn_trajectory_final(
    traj: *const AttnTrajectory,
    out: *mut *mut AttnConfiguration,
) -> AttnStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(|| null("traj"))?;
        let cfg = AttnConfiguration(traj.0.final_state.clone());
        write(out, Box::into_raw(Box::new(cfg)), "out")
    })
}

/// First time the equiangular reduction reaches `rho >= tau`.
/// `ATTN_STATUS_UNREACHABLE` when it never does.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn attn_threshold_crossing_time(
    model: AttnModel,
    n: usize,
    beta: f64,
    rho0: f64,
    tau: f64,
    out: *mut f64,
) -> AttnStatus {
    guard(|| {
        let state = EquiangularState::new(rho0, n, beta, model_of(model))?;
        write(out, threshold_crossing_time(&state, tau)?, "out")
    })
}

/// Output correlation of one attention layer with `beta = gamma ln n`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn attn_longcontext_correlation(rho: f64, gamma: f64, n: f64, out: *mut f64) -> AttnStatus {
    guard(|| {
        let q = LongContextQuery::new(rho, gamma, n)?;
        write(out, longcontext_output_correlation(&q), "out")
    })
}

/// Runs the experiment described by a config file and writes its artifacts to
/// the config's `output` (or `fallback_output` when the config has none).
/// `jobs = 0` uses all cores.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `fallback_output` may be null when
/// the config names an output.
#[no_mangle]
pub unsafe extern "C" fn attn_run_config(
    config_path: *const c_char,
    fallback_output: *const c_char,
    jobs: usize,
) -> AttnStatus {
    guard(|| {
        let path_of = |p: *const c_char, what: &str| -> Result<String, Fail> {
            if p.is_null() {
                return Err(null(what));
            }
            CStr::from_ptr(p)
                .to_str()
                .map(str::to_owned)
                .map_err(|_| Fail(AttnStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
        };
        let cfg = read_config(Path::new(&path_of(config_path, "config_path")?))?;
        let fallback = if cfg.output.is_some() {
            String::new()
        } else {
            path_of(fallback_output, "fallback_output")?
        };
        run_and_write(&cfg, (jobs > 0).then_some(jobs), Path::new(&fallback))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_statuses() {
        assert_eq!(status_of(&Error::Unreachable(0.9)), AttnStatus::Unreachable);
        assert_eq!(status_of(&Error::Config("x".into())), AttnStatus::Config);
        assert_eq!(
            status_of(&Error::DimensionMismatch { expected: 2, got: 3 }),
            AttnStatus::DimensionMismatch
        );
    }

    #[test]
    fn panics_become_a_status() {
        assert_eq!(guard(|| panic!("boom")), AttnStatus::Panic);
        let msg = unsafe { CStr::from_ptr(attn_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }
}
