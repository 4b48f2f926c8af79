use std::ffi::{CStr, CString};
use std::ptr;

use aipw_lab_ffi::*;

fn last_error() -> String {
    let p = aipw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Data {
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
}

fn toy(n: usize) -> Data {
    let mut x = Vec::with_capacity(3 * n);
    let (mut a, mut y) = (Vec::new(), Vec::new());
    for i in 0..n {
        let t = i as f64 / n as f64;
        x.extend([t, (3.0 * t).sin(), (i % 7) as f64 / 7.0]);
        a.push((i % 2) as u8);
        y.push(1.0 + 2.0 * t + (i % 2) as f64 + 0.3 * ((i * 37 % 11) as f64 - 5.0));
    }
    Data { x, a, y }
}

fn dataset(d: &Data) -> *mut AipwDataset {
    let mut ds = ptr::null_mut();
    let st = unsafe { aipw_dataset_new(d.x.as_ptr(), d.a.as_ptr(), d.y.as_ptr(), d.a.len(), 3, 0.5, &mut ds) };
    assert_eq!(st, AipwStatus::Ok);
    ds
}

#[test]
fn ipw_and_zero_learner_agree() {
    let d = toy(60);
    let ds = dataset(&d);
    assert_eq!(unsafe { aipw_dataset_len(ds) }, 60);
    let (mut ipw, mut aipw) = (AipwArmEstimates::default(), AipwArmEstimates::default());
    let zero = CString::new(r#"{"kind":"zero"}"#).unwrap();
    unsafe {
        assert_eq!(aipw_estimate_ipw(ds, 0.05, &mut ipw), AipwStatus::Ok);
        assert_eq!(aipw_estimate_aipw(ds, zero.as_ptr(), 1, 0.05, &mut aipw), AipwStatus::Ok);
        aipw_dataset_free(ds);
    }
    assert!((ipw.ate.point - aipw.ate.point).abs() < 1e-12);
    assert!((ipw.ate.variance_est - aipw.ate.variance_est).abs() < 1e-12);
    assert!(ipw.ate.ci_low < ipw.ate.point && ipw.ate.point < ipw.ate.ci_high);
}

#[test]
fn crossfit_and_ancova_run() {
    let d = toy(80);
    let ds = dataset(&d);
    let ols = CString::new(r#"{"kind":"ols"}"#).unwrap();
    let mut cf = AipwArmEstimates::default();
    let mut an = AipwEstimate::default();
    unsafe {
        assert_eq!(aipw_estimate_crossfit(ds, ols.as_ptr(), 4, 9, 0.05, &mut cf), AipwStatus::Ok);
        assert_eq!(aipw_estimate_ancova(ds, 0.05, 3, &mut an), AipwStatus::Ok);
        assert_eq!(aipw_estimate_ancova(ds, 0.05, 2, &mut an), AipwStatus::InvalidInput);
        assert_eq!(aipw_estimate_crossfit(ds, ols.as_ptr(), 1, 9, 0.05, &mut cf), AipwStatus::InvalidInput);
        aipw_dataset_free(ds);
    }
    assert!(cf.ate.se > 0.0);
    assert!(!last_error().is_empty());
}

#[test]
fn errors_are_reported() {
    let d = toy(10);
    let mut ds = ptr::null_mut();
    let mut out = AipwArmEstimates::default();
    unsafe {
        assert_eq!(aipw_estimate_ipw(ptr::null(), 0.05, &mut out), AipwStatus::NullPointer);
        assert!(last_error().contains("null"));
        let st = aipw_dataset_new(d.x.as_ptr(), d.a.as_ptr(), d.y.as_ptr(), 10, 3, 1.5, &mut ds);
        assert_eq!(st, AipwStatus::InvalidInput);
        assert!(ds.is_null());
        let bad = CString::new(r#"{"kind":"nope"}"#).unwrap();
        let ds = dataset(&d);
        assert_eq!(aipw_estimate_aipw(ds, bad.as_ptr(), 0, 0.05, &mut out), AipwStatus::InvalidInput);
        assert!(last_error().starts_with("learner_json"));
        aipw_dataset_free(ds);
        aipw_dataset_free(ptr::null_mut());
    }
    let treated = [1u8; 10];
    let mut ds = ptr::null_mut();
    let st = unsafe { aipw_dataset_new(d.x.as_ptr(), treated.as_ptr(), d.y.as_ptr(), 10, 3, 0.5, &mut ds) };
    if st == AipwStatus::Ok {
        let st = unsafe { aipw_estimate_ipw(ds, 0.05, &mut out) };
        assert_eq!(st, AipwStatus::ArmEmpty);
        unsafe { aipw_dataset_free(ds) };
    } else {
        assert_eq!(st, AipwStatus::ArmEmpty);
    }
}

#[test]
fn scalar_helpers() {
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { aipw_wilson_interval(760, 800, 0.95, &mut lo, &mut hi) }, AipwStatus::Ok);
    assert!((lo - 0.93263).abs() < 2e-4 && (hi - 0.96307).abs() < 2e-4);
    let mut f = 0.0;
    assert_eq!(unsafe { aipw_k_rate_factor(2, 1.0, false, 0, &mut f) }, AipwStatus::Ok);
    assert_eq!(f, 2.0);
    let v = unsafe { CStr::from_ptr(aipw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn bound_totals() {
    let inputs = serde_json::to_string(&aipw_lab::bounds::BoundInputs::reference()).unwrap();
    let c = CString::new(inputs).unwrap();
    let (mut cv, mut full) = (0.0, 0.0);
    unsafe {
        assert_eq!(aipw_bound_total(c.as_ptr(), true, &mut cv), AipwStatus::Ok);
        assert_eq!(aipw_bound_total(c.as_ptr(), false, &mut full), AipwStatus::Ok);
    }
    let inp = aipw_lab::bounds::BoundInputs::reference();
    assert_eq!(cv, aipw_lab::bounds::cv_bound_terms(&inp).unwrap().total);
    assert_eq!(full, aipw_lab::bounds::noncv_bound_terms(&inp).unwrap().total);
}

#[test]
fn scenario_round_trip() {
    let cfg = CString::new(
        r#"{"scenario_id":"ffi","dgp":{"p":3},"n":40,"runs":12,"base_seed":3,
            "estimators":[{"name":"IPW","method":"ipw"},
                          {"name":"CVOLS","method":"aipw_crossfit","learner":{"kind":"ols"},"k":4}]}"#,
    )
    .unwrap();
    let mut res = ptr::null_mut();
    let mut cov = AipwCoverage::default();
    let mut s2 = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let name = CString::new("CVOLS").unwrap();
    let missing = CString::new("SL").unwrap();
    unsafe {
        assert_eq!(aipw_scenario_run(cfg.as_ptr(), true, &mut res), AipwStatus::Ok);
        assert_eq!(aipw_scenario_coverage(res, name.as_ptr(), &mut cov), AipwStatus::Ok);
        assert_eq!(aipw_scenario_sigma_hash_sq(res, name.as_ptr(), &mut s2), AipwStatus::Ok);
        assert_eq!(aipw_scenario_coverage(res, missing.as_ptr(), &mut cov), AipwStatus::NotFound);
        assert_eq!(aipw_scenario_write_csv(res, dir_c.as_ptr()), AipwStatus::Ok);
        aipw_scenario_result_free(res);
    }
    assert_eq!(cov.runs, 12);
    assert!(s2 > 0.0);
    for f in ["estimates.csv", "coverage.csv", "variance.csv", "qq.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/aipw_lab.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct AipwDataset AipwDataset;"));
}
