use std::ffi::{CStr, CString};
use std::ptr;

use phasemarket_ffi::*;

fn last_error() -> String {
    let p = pm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut PmConfig {
    let cfg = pm_config_new(1);
    for (k, v) in [("n_traders", "60"), ("n_stocks", "12"), ("t_steps", "20")] {
        let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
        assert_eq!(unsafe { pm_config_set(cfg, k.as_ptr(), v.as_ptr()) }, PmStatus::Ok);
    }
    cfg
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(pm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn utilities_forward() {
    assert_eq!(pm_call_utility(50.0, 10, 1), 6.0);
    assert_eq!(pm_put_utility(10.0, 10, -1), 20.0);
}

#[test]
fn config_errors_are_reported() {
    let cfg = pm_config_new(0);
    let key = CString::new("no_such_key").unwrap();
    let val = CString::new("1").unwrap();
    assert_eq!(unsafe { pm_config_set(cfg, key.as_ptr(), val.as_ptr()) }, PmStatus::UnknownKey);
    assert!(last_error().contains("no_such_key"));

    let key = CString::new("alpha").unwrap();
    let val = CString::new("abc").unwrap();
    assert_eq!(unsafe { pm_config_set(cfg, key.as_ptr(), val.as_ptr()) }, PmStatus::BadValue);

    let key = CString::new("f_s").unwrap();
    let val = CString::new("1.5").unwrap();
    assert_eq!(unsafe { pm_config_set(cfg, key.as_ptr(), val.as_ptr()) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_config_validate(cfg) }, PmStatus::InvalidConfig);
    unsafe { pm_config_free(cfg) };
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pm_simulate(ptr::null(), 1, &mut out) }, PmStatus::NullPointer);
    assert!(out.is_null());
    assert_eq!(unsafe { pm_config_validate(ptr::null()) }, PmStatus::NullPointer);
    assert_eq!(unsafe { pm_result_n_stocks(ptr::null()) }, 0);
    unsafe {
        pm_config_free(ptr::null_mut());
        pm_result_free(ptr::null_mut());
        pm_histogram_free(ptr::null_mut());
    }
}

#[test]
fn toml_round_trip() {
    let text = CString::new("alpha = 70.0\nbeta = 5.0\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { pm_config_from_toml(text.as_ptr(), &mut cfg) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_config_validate(cfg) }, PmStatus::Ok);
    unsafe { pm_config_free(cfg) };

    let bad = CString::new("alpha = [").unwrap();
    let mut cfg = ptr::null_mut();
    assert_ne!(unsafe { pm_config_from_toml(bad.as_ptr(), &mut cfg) }, PmStatus::Ok);
    assert!(cfg.is_null());
}

#[test]
fn simulation_is_deterministic_and_matches_core() {
    let cfg = small_config();
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(pm_simulate(cfg, 9, &mut a), PmStatus::Ok);
        assert_eq!(pm_simulate(cfg, 9, &mut b), PmStatus::Ok);
        let n = pm_result_n_stocks(a);
        assert_eq!(n, 12);
        let mut pa = vec![0u32; n];
        let mut pb = vec![0u32; n];
        assert_eq!(pm_result_prices(a, pa.as_mut_ptr(), n), PmStatus::Ok);
        assert_eq!(pm_result_prices(b, pb.as_mut_ptr(), n), PmStatus::Ok);
        assert_eq!(pa, pb);

        let core_cfg = phasemarket::SimulationConfig {
            n_traders: 60,
            n_stocks: 12,
            t_steps: 20,
            ..phasemarket::Profile::Desk.config()
        };
        let direct = phasemarket::run_simulation(&core_cfg, 9).unwrap();
        assert_eq!(pa, direct.final_prices());

        assert_eq!(pm_result_prices(a, pa.as_mut_ptr(), n - 1), PmStatus::BufferTooSmall);
        let mut chi = f64::NAN;
        assert_eq!(pm_result_chi(a, &mut chi), PmStatus::Ok);
        assert!(chi.is_finite());

        pm_result_free(a);
        pm_result_free(b);
        pm_config_free(cfg);
    }
}

#[test]
fn histogram_counts_every_stock() {
    let cfg = small_config();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(pm_ensemble_histogram(cfg, 5, 3, 1, &mut h), PmStatus::Ok);
        let len = pm_histogram_len(h);
        assert!(len > 0);
        assert!(pm_histogram_floor(h) >= 1);
        let mut counts = vec![0u64; len];
        assert_eq!(pm_histogram_counts(h, counts.as_mut_ptr(), len), PmStatus::Ok);
        assert_eq!(counts.iter().sum::<u64>(), 5 * 12);
        let mut d = PmDecomposition::default();
        let st = pm_histogram_decompose(h, &mut d);
        assert!(st == PmStatus::Ok || st == PmStatus::Analysis);
        pm_histogram_free(h);
        pm_config_free(cfg);
    }
}

#[test]
fn power_law_recovers_parameters() {
    let alpha: Vec<f64> = (0..12).map(|i| 55.0 + 4.0 * i as f64).collect();
    let f0: Vec<f64> = alpha.iter().map(|a| 2.0 * (a - 50.0f64).powf(1.3)).collect();
    let mut out = PmPowerLaw::default();
    let st = unsafe { pm_fit_power_law(alpha.as_ptr(), f0.as_ptr(), ptr::null(), alpha.len(), &mut out) };
    assert_eq!(st, PmStatus::Ok);
    assert!((out.alpha_c - 50.0).abs() < 1e-3, "{out:?}");
    assert!((out.gamma - 1.3).abs() < 1e-3);
    assert!((out.g0 - 2.0).abs() < 1e-2);
    assert_eq!(out.n_points, 12);

    let st = unsafe { pm_fit_power_law(alpha.as_ptr(), f0.as_ptr(), ptr::null(), 2, &mut out) };
    assert_eq!(st, PmStatus::Analysis);
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/phasemarket.h");
    for name in [
        "pm_last_error",
        "pm_version",
        "pm_config_new",
        "pm_config_from_toml",
        "pm_config_set",
        "pm_config_validate",
        "pm_config_free",
        "pm_simulate",
        "pm_result_prices",
        "pm_result_chi",
        "pm_result_free",
        "pm_ensemble_histogram",
        "pm_histogram_counts",
        "pm_histogram_decompose",
        "pm_histogram_free",
        "pm_fit_power_law",
        "PM_STATUS_BUFFER_TOO_SMALL",
        "typedef struct PmConfig PmConfig;",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
