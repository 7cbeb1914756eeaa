use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use attnsphere::equiangular::{threshold_crossing_time, EquiangularState};
use attnsphere::Model;
use attnsphere_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(attn_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn configuration_round_trip_and_errors() {
    let coords = [1.0, 0.0, 0.0, 1.0, -1.0, 0.0];
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(attn_configuration_new(3, 2, coords.as_ptr(), ptr::null(), &mut cfg), AttnStatus::Ok);
        assert_eq!((attn_configuration_len(cfg), attn_configuration_dim(cfg)), (3, 2));
        let mut out = [0.0; 6];
        let mut needed = 0;
        assert_eq!(attn_configuration_coords(cfg, out.as_mut_ptr(), 6, &mut needed), AttnStatus::Ok);
        assert_eq!((out, needed), (coords, 6));
        assert_eq!(
            attn_configuration_coords(cfg, out.as_mut_ptr(), 4, &mut needed),
            AttnStatus::BufferTooSmall
        );
        assert_eq!(needed, 6);
        attn_configuration_free(cfg);

        let bad = [0.0, 0.0];
        let mut cfg2 = ptr::null_mut();
        let status = attn_configuration_new(1, 2, bad.as_ptr(), ptr::null(), &mut cfg2);
        assert_ne!(status, AttnStatus::Ok);
        assert!(cfg2.is_null());
        assert!(last_error().contains("zero"), "{}", last_error());

        assert_eq!(attn_configuration_new(1, 2, ptr::null(), ptr::null(), &mut cfg2), AttnStatus::NullPointer);
    }
}

#[test]
fn wrappers_equal_library_calls() {
    let mut t = 0.0;
    unsafe {
        assert_eq!(attn_threshold_crossing_time(AttnModel::Usa, 8, 1.0, 0.0, 0.999, &mut t), AttnStatus::Ok);
    }
    let state = EquiangularState::new(0.0, 8, 1.0, Model::Usa).unwrap();
    assert_eq!(t, threshold_crossing_time(&state, 0.999).unwrap());
    unsafe {
        assert_eq!(
            attn_threshold_crossing_time(AttnModel::Sa, 8, 1.0, -1.0 / 7.0, 0.999, &mut t),
            AttnStatus::Unreachable
        );
        assert_eq!(attn_threshold_crossing_time(AttnModel::Hardmax, 8, 1.0, 0.0, 0.999, &mut t), AttnStatus::InvalidArgument);
    }
}

#[test]
fn integration_through_handles() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(attn_configuration_equiangular(4, 0.0, 4, 3, &mut cfg), AttnStatus::Ok);
        let mut v = [0.0; 16];
        assert_eq!(attn_velocity(cfg, AttnModel::Sa, 1.0, v.as_mut_ptr(), 16), AttnStatus::Ok);
        let mut traj = ptr::null_mut();
        let status = attn_integrate(cfg, AttnModel::Sa, 1.0, AttnMethod::ProjectedRk4, 0.05, 30.0, 0, 0.999, &mut traj);
        assert_eq!(status, AttnStatus::Ok);
        let len = attn_trajectory_len(traj);
        let mut min = vec![0.0; len];
        let name = CString::new("min_pairwise").unwrap();
        assert_eq!(attn_trajectory_series(traj, name.as_ptr(), min.as_mut_ptr(), len, ptr::null_mut()), AttnStatus::Ok);
        assert!(min[len - 1] > 0.999);
        let missing = CString::new("nope").unwrap();
        assert_eq!(
            attn_trajectory_series(traj, missing.as_ptr(), min.as_mut_ptr(), len, ptr::null_mut()),
            AttnStatus::InvalidArgument
        );
        let mut last = ptr::null_mut();
        assert_eq!(attn_trajectory_final(traj, &mut last), AttnStatus::Ok);
        let mut energy = 0.0;
        assert_eq!(attn_interaction_energy(last, 1.0, &mut energy), AttnStatus::Ok);
        assert!(energy.is_finite());
        attn_configuration_free(last);
        attn_trajectory_free(traj);
        attn_configuration_free(cfg);
        attn_configuration_free(ptr::null_mut());
    }
}

#[test]
fn run_config_writes_artifacts() {
    let dir = tempfile_dir();
    let config = dir.join("lc.toml");
    std::fs::write(&config, "[longcontext]\nrho = [0.5]\ngamma = [2.0]\nn = [1e8]\n").unwrap();
    let out = dir.join("lc.csv");
    let c_config = CString::new(config.to_str().unwrap()).unwrap();
    let c_out = CString::new(out.to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(attn_run_config(c_config.as_ptr(), c_out.as_ptr(), 1), AttnStatus::Ok);
        let missing = CString::new(dir.join("missing.toml").to_str().unwrap()).unwrap();
        assert_eq!(attn_run_config(missing.as_ptr(), c_out.as_ptr(), 1), AttnStatus::Config);
    }
    assert!(std::fs::read_to_string(&out).unwrap().contains("critical"));
    assert!(last_error().contains("missing.toml"));
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("attnsphere-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/ffi-<hash> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libattnsphere_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = tempfile_dir().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    let state = EquiangularState::new(0.0, 32, 1.0, Model::Sa).unwrap();
    assert_eq!(fields[0].parse::<f64>().unwrap(), threshold_crossing_time(&state, 0.999).unwrap());
    assert!(fields[2].parse::<f64>().unwrap() > 0.999);
    assert_eq!(fields[3], (AttnStatus::InvalidArgument as i32).to_string());
    assert!(text.contains("rho must lie in (0, 1)"));
}
