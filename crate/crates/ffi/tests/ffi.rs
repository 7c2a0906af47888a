use std::ffi::{CStr, CString};
use std::ptr;

use subkam_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(subkam_last_error()) }.to_string_lossy().into_owned()
}

fn instance(name: &str) -> *mut SubkamInstance {
    let name = CString::new(name).unwrap();
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { subkam_instance_new(name.as_ptr(), &mut inst) }, SubkamStatus::Ok);
    inst
}

#[test]
fn instance_lifecycle_and_evaluation() {
    let inst = instance("heisenberg");
    unsafe {
        assert_eq!(subkam_instance_state_dim(inst), 3);
        assert_eq!(subkam_instance_control_dim(inst), 2);
        let mut c = f64::NAN;
        assert_eq!(subkam_oracle_critical(inst, &mut c), SubkamStatus::Ok);
        assert!(c.abs() < 1e-12);

        let x = [0.0, 0.0, 0.0];
        let u = [1.0, 0.0];
        let mut l = 0.0;
        assert_eq!(subkam_lagrangian(inst, x.as_ptr(), u.as_ptr(), &mut l), SubkamStatus::Ok);
        assert!((l - 0.5).abs() < 1e-12);

        // H(0, p) = ½|F*(0)p|² − V(0) with F(0) = [e1 e2].
        let p = [1.0, 2.0, 5.0];
        let mut h = 0.0;
        assert_eq!(subkam_hamiltonian(inst, x.as_ptr(), p.as_ptr(), &mut h), SubkamStatus::Ok);
        assert!((h - 2.5).abs() < 1e-9, "{h}");

        let y = [1.0, 0.0, 0.0];
        let mut d = 0.0;
        assert_eq!(subkam_sr_distance(inst, x.as_ptr(), y.as_ptr(), 0, &mut d), SubkamStatus::Ok);
        assert!((d - 1.0).abs() < 1e-3, "{d}");
        subkam_instance_free(inst);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let bad = CString::new("heisenburg").unwrap();
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { subkam_instance_new(bad.as_ptr(), &mut inst) }, SubkamStatus::UnknownInstance);
    assert!(inst.is_null());
    assert!(last_error().contains("heisenburg"));

    assert_eq!(unsafe { subkam_instance_new(ptr::null(), &mut inst) }, SubkamStatus::NullPointer);
    let mut c = 0.0;
    assert_eq!(unsafe { subkam_oracle_critical(ptr::null(), &mut c) }, SubkamStatus::NullPointer);
    assert_eq!(unsafe { subkam_instance_state_dim(ptr::null()) }, 0);

    let cfg = CString::new("instance = euclidean-1d\n[scheme]\nbogus = 1\n").unwrap();
    assert_eq!(unsafe { subkam_instance_from_config(cfg.as_ptr(), &mut inst) }, SubkamStatus::Config);
    assert!(last_error().contains("line 3"));
    unsafe {
        subkam_instance_free(ptr::null_mut());
        subkam_grid_free(ptr::null_mut());
    }
}

#[test]
fn custom_instance_from_config_has_no_oracle() {
    let cfg = CString::new("instance = custom\n[system]\nlinear = [[[0.0]]]\noffset = [[1.0]]\n").unwrap();
    let mut inst = ptr::null_mut();
    unsafe {
        assert_eq!(subkam_instance_from_config(cfg.as_ptr(), &mut inst), SubkamStatus::Ok);
        assert_eq!(subkam_instance_state_dim(inst), 1);
        let mut c = 0.0;
        assert_eq!(subkam_oracle_critical(inst, &mut c), SubkamStatus::InvalidArgument);
        subkam_instance_free(inst);
    }
}

#[test]
fn critical_solution_grid_round_trip() {
    let inst = instance("euclidean-1d");
    let mut grid = ptr::null_mut();
    unsafe {
        assert_eq!(subkam_critical_solution(inst, 0.0, 2.0, 81, 0.02, 21, 2.0, &mut grid), SubkamStatus::Ok, "{}", last_error());
        let n = subkam_grid_len(grid);
        assert_eq!(n, 81);
        let mut values = vec![0.0; n];
        assert_eq!(subkam_grid_values(grid, values.as_mut_ptr(), n), SubkamStatus::Ok);
        assert_eq!(subkam_grid_values(grid, values.as_mut_ptr(), n - 1), SubkamStatus::InvalidArgument);
        // χ(x*) is pinned to zero and the solution is a well around it.
        let mut v0 = f64::NAN;
        assert_eq!(subkam_grid_interpolate(grid, [0.0].as_ptr(), &mut v0), SubkamStatus::Ok);
        assert!(v0.abs() < 1e-12);
        let mut v1 = 0.0;
        subkam_grid_interpolate(grid, [1.0].as_ptr(), &mut v1);
        let agmon = 2f64.sqrt() * (2f64.sqrt() - 1.0);
        assert!((v1 - agmon).abs() < 5e-2, "{v1} vs {agmon}");
        subkam_grid_free(grid);

        // A wrong critical value drifts and is reported as non-convergence.
        assert_eq!(subkam_critical_solution(inst, 0.1, 2.0, 41, 0.05, 11, 2.0, &mut grid), SubkamStatus::NotConverged);
        assert!(grid.is_null());
        subkam_instance_free(inst);
    }
}

#[test]
fn run_config_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let text = CString::new("instance = euclidean-1d\ntask = solve\n[scheme]\nresolution = [41]\ndt = 0.05\ncontrol_samples = 11\n").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut code = -1;
    assert_eq!(unsafe { subkam_run_config(text.as_ptr(), out.as_ptr(), &mut code) }, SubkamStatus::Ok);
    assert_eq!(code, 0, "{}", last_error());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/subkam.h")).unwrap();
    for f in [
        "subkam_last_error",
        "subkam_instance_new",
        "subkam_instance_from_config",
        "subkam_instance_free",
        "subkam_hamiltonian",
        "subkam_critical_solution",
        "subkam_grid_values",
        "subkam_run_config",
        "typedef struct SubkamInstance SubkamInstance",
    ] {
        assert!(header.contains(f), "{f}");
    }
}
