use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pdsinfer_ffi::*;

fn sample(n: usize, p: usize, binary: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut state = 12345u64;
    let mut unif = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let x: Vec<f64> = (0..n * p).map(|_| unif()).collect();
    let d: Vec<f64> = (0..n)
        .map(|i| if binary { f64::from(unif() > 0.0) } else { x[i * p] + unif() })
        .collect();
    let y: Vec<f64> = (0..n).map(|i| 0.5 * d[i] + x[i * p] + x[i * p + 1] + unif()).collect();
    (y, d, x)
}

fn new_dataset(y: &[f64], d: &[f64], x: &[f64], n: usize, p: usize) -> *mut PdsDataset {
    let mut h = ptr::null_mut();
    let st = unsafe { pds_dataset_new(y.as_ptr(), d.as_ptr(), x.as_ptr(), n, p, &mut h) };
    assert_eq!(st, PdsStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = pds_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn estimates_through_handle() {
    let (n, p) = (200, 20);
    let (y, d, x) = sample(n, p, false);
    let h = new_dataset(&y, &d, &x, n, p);
    unsafe {
        assert_eq!(pds_dataset_n(h), n);
        assert_eq!(pds_dataset_p(h), p);
        for method in [
            PdsMethod::Ds,
            PdsMethod::PostLasso,
            PdsMethod::DsI3,
            PdsMethod::UnionAds,
            PdsMethod::Split,
            PdsMethod::Lasso,
        ] {
            let mut out = PdsEstimate::default();
            let mut sel = [usize::MAX; 8];
            let st = pds_estimate(h, method, 0.95, true, 3, &mut out, sel.as_mut_ptr(), sel.len());
            assert_eq!(st, PdsStatus::Ok, "{method:?}");
            assert!(out.se > 0.0 && out.ci_lower < out.alpha_hat && out.alpha_hat < out.ci_upper);
            assert!(sel.iter().take(out.s_hat.min(8)).all(|&j| j < p));
        }
        pds_dataset_free(h);
    }
}

#[test]
fn reports_errors_with_messages() {
    let mut h = ptr::null_mut();
    let y = [1.0, f64::NAN, 3.0];
    let d = [0.0, 1.0, 0.0];
    let x = [1.0, 2.0, 3.0];
    let st = unsafe { pds_dataset_new(y.as_ptr(), d.as_ptr(), x.as_ptr(), 3, 1, &mut h) };
    assert_eq!(st, PdsStatus::InvalidData);
    assert!(h.is_null());
    assert!(last_error().contains("non-finite"));

    let st = unsafe { pds_dataset_new(ptr::null(), d.as_ptr(), x.as_ptr(), 3, 1, &mut h) };
    assert_eq!(st, PdsStatus::NullPointer);

    let mut out = PdsEstimate::default();
    let st = unsafe { pds_estimate(ptr::null(), PdsMethod::Ds, 0.95, true, 0, &mut out, ptr::null_mut(), 0) };
    assert_eq!(st, PdsStatus::NullPointer);
    assert!(last_error().contains("dataset"));

    unsafe { pds_dataset_free(ptr::null_mut()) };
}

#[test]
fn att_without_treated_has_its_own_code() {
    let (n, p) = (20, 2);
    let (y, _, x) = sample(n, p, true);
    let d = vec![0.0; n];
    let h = new_dataset(&y, &d, &x, n, p);
    let mut out = PdsEffect::default();
    let st = unsafe { pds_ate(h, PdsEffectKind::Att, PdsLink::Linear, 0.01, 0.95, &mut out) };
    assert_eq!(st, PdsStatus::NoTreated);
    assert!(last_error().contains("no treated"));
    unsafe { pds_dataset_free(h) };
}

#[test]
fn ate_and_att_run() {
    let (n, p) = (400, 10);
    let (y, d, x) = sample(n, p, true);
    let h = new_dataset(&y, &d, &x, n, p);
    let mut out = PdsEffect::default();
    unsafe {
        assert_eq!(pds_ate(h, PdsEffectKind::Ate, PdsLink::Logit, 0.01, 0.9, &mut out), PdsStatus::Ok);
        assert!(out.mu_hat.is_nan() && out.n == n && out.level == 0.9);
        assert_eq!(pds_ate(h, PdsEffectKind::Att, PdsLink::Linear, 0.01, 0.95, &mut out), PdsStatus::Ok);
        assert!(out.mu_hat > 0.0 && out.mu_hat < 1.0);
        pds_dataset_free(h);
    }
}

#[test]
fn simulate_returns_json_rows() {
    let design = CString::new("2a").unwrap();
    let ests = CString::new("oracle,ds").unwrap();
    let mut json = ptr::null_mut();
    let st = unsafe { pds_simulate(design.as_ptr(), 60, 30, 0.4, 0.4, 5, 9, 2, ests.as_ptr(), &mut json) };
    assert_eq!(st, PdsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { pds_string_free(json) };
    let rows: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[1]["estimator"], "ds");
    assert_eq!(rows[0]["design"], "2a");

    let bad = CString::new("99").unwrap();
    let st = unsafe { pds_simulate(bad.as_ptr(), 60, 30, 0.4, 0.4, 5, 9, 2, ptr::null(), &mut json) };
    assert_eq!(st, PdsStatus::UnknownName);
    assert!(json.is_null());
    assert!(last_error().contains("valid designs"));
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(pds_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpdsinfer_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler unavailable");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "pdsinfer.h"
int main(void) {
    double y[40], d[40], x[80];
    for (int i = 0; i < 40; i++) {
        x[2 * i] = (i % 7) - 3.0;
        x[2 * i + 1] = (i % 5) - 2.0;
        d[i] = x[2 * i] + ((i % 3) - 1.0);
        y[i] = 0.5 * d[i] + x[2 * i + 1] + ((i % 4) - 1.5);
    }
    PdsDataset *h = NULL;
    if (pds_dataset_new(y, d, x, 40, 2, &h) != PDS_STATUS_OK) return 1;
    PdsEstimate est;
    if (pds_estimate(h, PDS_METHOD_DS, 0.95, true, 0, &est, NULL, 0) != PDS_STATUS_OK) return 2;
    if (pds_estimate(NULL, PDS_METHOD_DS, 0.95, true, 0, &est, NULL, 0) != PDS_STATUS_NULL_POINTER) return 3;
    if (pds_last_error_message() == NULL) return 4;
    pds_dataset_free(h);
    printf("%.6f\n", est.alpha_hat);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let alpha: f64 = String::from_utf8_lossy(&run.stdout).trim().parse().unwrap();
    assert!(alpha.is_finite());
}
