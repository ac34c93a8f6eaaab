use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cemgms_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cem_last_error()) }.to_string_lossy().into_owned()
}

fn set(cfg: *mut CemConfig, k: &str, v: &str) -> CemStatus {
    let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
    unsafe { cem_config_set(cfg, k.as_ptr(), v.as_ptr()) }
}

fn small_config() -> *mut CemConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cem_config_default(&mut cfg) }, CemStatus::Ok);
    for (k, v) in [("nx", "16"), ("Nx", "4"), ("Lz", "2"), ("layers", "1"), ("tau", "0.05"), ("T", "0.2")] {
        assert_eq!(set(cfg, k, v), CemStatus::Ok, "{k}: {}", last_error());
    }
    cfg
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(cem_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn single_run_reports_errors() {
    let cfg = small_config();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { cem_run_single(cfg, &mut run) }, CemStatus::Ok, "{}", last_error());
    assert!(last_error().is_empty());

    let (mut steps, mut layers) = (0usize, 0usize);
    unsafe {
        assert_eq!(cem_run_steps(run, &mut steps), CemStatus::Ok);
        assert_eq!(cem_run_layers(run, &mut layers), CemStatus::Ok);
    }
    assert_eq!(steps, 5);
    assert_eq!(layers, 1);

    let (mut t, mut ev, mut ep) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(cem_run_errors(run, 0, &mut t, &mut ev, &mut ep), CemStatus::Ok);
        assert_eq!(t, 0.0);
        assert!(ev.is_nan() && ep.is_nan(), "zero initial state has no relative error");
        assert_eq!(cem_run_errors(run, steps - 1, &mut t, &mut ev, &mut ep), CemStatus::Ok);
        assert!((t - 0.2).abs() < 1e-12);
        assert!(ev.is_finite() && (0.0..1.0).contains(&ev), "e_v = {ev}");
        assert!(ep.is_finite() && (0.0..1.0).contains(&ep), "e_p = {ep}");
        assert_eq!(cem_run_errors(run, steps, &mut t, &mut ev, &mut ep), CemStatus::InvalidArgument);
        cem_run_free(run);
        cem_config_free(cfg);
    }
}

#[test]
fn run_with_explicit_field() {
    let cfg = small_config();
    let mut field = ptr::null_mut();
    let mut c = 0.0;
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(cem_field_channelized(16, 16, 3, 1e3, 7, &mut field), CemStatus::Ok);
        assert_eq!(cem_field_contrast(field, &mut c), CemStatus::Ok);
        assert!((c - 1e3).abs() < 1e-9);
        assert_eq!(cem_run_with_field(cfg, field, &mut run), CemStatus::Ok, "{}", last_error());
        cem_run_free(run);
        cem_field_free(field);
        cem_config_free(cfg);
    }
}

#[test]
fn field_from_values_checks_length() {
    let vals = [1.0, 2.0, 3.0, 4.0];
    let mut field = ptr::null_mut();
    let mut c = 0.0;
    unsafe {
        assert_eq!(cem_field_from_values(2, 2, vals.as_ptr(), 3, &mut field), CemStatus::InvalidArgument);
        assert!(field.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(cem_field_from_values(2, 2, vals.as_ptr(), 4, &mut field), CemStatus::Ok);
        assert_eq!(cem_field_contrast(field, &mut c), CemStatus::Ok);
        assert_eq!(c, 4.0);
        cem_field_free(field);
    }
}

#[test]
fn error_codes() {
    let mut field = ptr::null_mut();
    let mut c = 0.0;
    unsafe {
        assert_eq!(cem_field_contrast(ptr::null(), &mut c), CemStatus::NullPointer);
        assert_eq!(cem_field_channelized(8, 8, 2, 10.0, 1, ptr::null_mut()), CemStatus::NullPointer);
        assert_eq!(cem_field_channelized(8, 8, 2, 0.5, 1, &mut field), CemStatus::InvalidArgument);
        let missing = CString::new("/nonexistent/field.txt").unwrap();
        assert_eq!(cem_field_from_raster(missing.as_ptr(), &mut field), CemStatus::Io);
        assert!(last_error().contains("nonexistent"));
    }
    let cfg = small_config();
    assert_eq!(set(cfg, "no_such_key", "1"), CemStatus::Config);
    assert_eq!(set(cfg, "Lz", "two"), CemStatus::Config);
    // 16 cells do not split into 5 elements.
    assert_eq!(set(cfg, "Nx", "5"), CemStatus::Ok);
    let mut run = ptr::null_mut();
    let s = unsafe { cem_run_single(cfg, &mut run) };
    assert!(matches!(s, CemStatus::Config | CemStatus::InvalidArgument), "{s:?}");
    assert!(run.is_null());
    unsafe {
        cem_config_free(cfg);
        cem_config_free(ptr::null_mut());
        cem_field_free(ptr::null_mut());
        cem_run_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cemgms.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "cem_last_error",
        "cem_version",
        "cem_field_channelized",
        "cem_field_from_raster",
        "cem_field_from_values",
        "cem_field_contrast",
        "cem_field_free",
        "cem_config_default",
        "cem_config_set",
        "cem_config_free",
        "cem_run_single",
        "cem_run_with_field",
        "cem_run_steps",
        "cem_run_errors",
        "cem_run_layers",
        "cem_run_free",
        "CEM_STATUS_NULL_POINTER",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"]).arg(&header).output()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
