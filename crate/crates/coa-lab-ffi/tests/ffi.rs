use std::ffi::{CStr, CString};
use std::io::Write;
use std::process::{Command, Stdio};
use std::ptr;

use coa_lab_ffi::*;

const PATH6: ([usize; 5], [usize; 5]) = ([0, 1, 2, 3, 4], [1, 2, 3, 4, 5]);
const D: [u8; 6] = [1, 0, 1, 0, 1, 0];
const Y: [f64; 6] = [3.0, 1.0, 4.0, 2.0, 5.0, 1.0];

fn last_error() -> String {
    let p = coa_last_error_message();
    assert!(!p.is_null(), "an error message is recorded");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    net: *mut CoaNetwork,
    design: *mut CoaDesign,
}

impl Handles {
    fn path6() -> Self {
        let (src, dst) = PATH6;
        let mut net = ptr::null_mut();
        let mut design = ptr::null_mut();
        unsafe {
            assert_eq!(coa_network_from_edges(6, false, src.as_ptr(), dst.as_ptr(), 5, &mut net), CoaStatus::Ok);
            assert_eq!(coa_design_bernoulli(6, 0.5, &mut design), CoaStatus::Ok);
        }
        Handles { net, design }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            coa_network_free(self.net);
            coa_design_free(self.design);
        }
    }
}

#[test]
fn estimate_own_exposure() {
    let h = Handles::path6();
    let mut size = 0;
    assert_eq!(unsafe { coa_network_size(h.net, &mut size) }, CoaStatus::Ok);
    assert_eq!(size, 6);
    let levels = [1.0, 0.0];
    let mut values = [f64::NAN; 2];
    let status = unsafe {
        coa_estimate(
            h.net,
            h.design,
            CoaExposure::Own as u32,
            levels.as_ptr(),
            2,
            D.as_ptr(),
            Y.as_ptr(),
            6,
            values.as_mut_ptr(),
        )
    };
    assert_eq!(status, CoaStatus::Ok);
    assert!((values[0] - 4.0).abs() < 1e-12);
    assert!((values[1] - 4.0 / 3.0).abs() < 1e-12);
    assert!(coa_last_error_message().is_null());
}

#[test]
fn contrast_interval_brackets_estimate() {
    let h = Handles::path6();
    let mut c = CoaContrast::default();
    let status = unsafe {
        coa_contrast(
            h.net,
            h.design,
            CoaExposure::Own as u32,
            1.0,
            0.0,
            D.as_ptr(),
            Y.as_ptr(),
            6,
            0.5,
            0.05,
            &mut c,
        )
    };
    assert_eq!(status, CoaStatus::Ok, "{}", last_error());
    assert!((c.tau_hat - 8.0 / 3.0).abs() < 1e-12);
    assert_eq!(c.included, 6);
    assert!(c.sigma >= 0.0);
    assert!(c.lower <= c.tau_hat && c.tau_hat <= c.upper);
}

#[test]
fn null_pointers_are_reported() {
    let mut size = 0;
    assert_eq!(unsafe { coa_network_size(ptr::null(), &mut size) }, CoaStatus::NullPointer);
    assert!(last_error().contains("net"));
    assert_eq!(unsafe { coa_design_bernoulli(4, 0.5, ptr::null_mut()) }, CoaStatus::NullPointer);
    assert!(last_error().contains("out"));
    // freeing NULL is a no-op
    unsafe {
        coa_network_free(ptr::null_mut());
        coa_design_free(ptr::null_mut());
        coa_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let h = Handles::path6();
    let mut values = [0.0; 1];
    let levels = [1.0];
    let short = unsafe {
        coa_estimate(h.net, h.design, 0, levels.as_ptr(), 1, D.as_ptr(), Y.as_ptr(), 5, values.as_mut_ptr())
    };
    assert_eq!(short, CoaStatus::InvalidInput);
    assert!(last_error().contains("data has 5"));

    let bad_code = unsafe {
        coa_estimate(h.net, h.design, 9, levels.as_ptr(), 1, D.as_ptr(), Y.as_ptr(), 6, values.as_mut_ptr())
    };
    assert_eq!(bad_code, CoaStatus::InvalidInput);
    assert!(last_error().contains("exposure code 9"));

    let d = [2u8, 0, 1, 0, 1, 0];
    let bad_d = unsafe {
        coa_estimate(h.net, h.design, 0, levels.as_ptr(), 1, d.as_ptr(), Y.as_ptr(), 6, values.as_mut_ptr())
    };
    assert_eq!(bad_d, CoaStatus::InvalidInput);

    let mut design = ptr::null_mut();
    assert_ne!(unsafe { coa_design_bernoulli(6, 1.5, &mut design) }, CoaStatus::Ok);
    assert!(design.is_null());
    assert!(!last_error().is_empty());

    let mut net = ptr::null_mut();
    let (src, dst) = ([0usize], [7usize]);
    assert_ne!(unsafe { coa_network_from_edges(3, true, src.as_ptr(), dst.as_ptr(), 1, &mut net) }, CoaStatus::Ok);
    assert!(net.is_null());
}

#[test]
fn degenerate_design_maps_to_positivity() {
    let (src, dst) = PATH6;
    let mut net = ptr::null_mut();
    let mut design = ptr::null_mut();
    unsafe {
        assert_eq!(coa_network_from_edges(6, false, src.as_ptr(), dst.as_ptr(), 5, &mut net), CoaStatus::Ok);
        assert_eq!(coa_design_bernoulli(6, 1.0, &mut design), CoaStatus::Ok);
    }
    let d = [1u8; 6];
    let levels = [0.0];
    let mut v = [0.0];
    let status =
        unsafe { coa_estimate(net, design, 0, levels.as_ptr(), 1, d.as_ptr(), Y.as_ptr(), 6, v.as_mut_ptr()) };
    assert_eq!(status, CoaStatus::Positivity, "{}", last_error());
    unsafe {
        coa_network_free(net);
        coa_design_free(design);
    }
}

#[test]
fn monte_carlo_json_round_trip() {
    let cfg = CString::new(
        r#"{
            "schema": 1,
            "network": {"kind": "ring", "n": 20, "k": 4},
            "model": {"kind": "linear_in_means", "params": {"beta0": 0.0, "beta1": 1.0, "gamma1": 0.5, "gamma2": 0.1}, "shock_scale": 1.0},
            "design": {"kind": "bernoulli", "p": 0.5},
            "exposure": "fraction",
            "levels": [0.75, 0.25],
            "replications": 20,
            "seed": 3
        }"#,
    )
    .unwrap();
    let run = || {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { coa_monte_carlo_json(cfg.as_ptr(), &mut out) }, CoaStatus::Ok, "{}", last_error());
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
        unsafe { coa_string_free(out) };
        text
    };
    let first = run();
    assert_eq!(first, run());
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert!(v["summary"].is_object());
    assert!(v.get("coverage").is_some());

    let bad = CString::new(r#"{"schema": 1}"#).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { coa_monte_carlo_json(bad.as_ptr(), &mut out) }, CoaStatus::Config);
    assert!(out.is_null());
}

#[test]
fn errors_are_thread_local() {
    let mut size = 0;
    assert_eq!(unsafe { coa_network_size(ptr::null(), &mut size) }, CoaStatus::NullPointer);
    std::thread::spawn(|| assert!(coa_last_error_message().is_null())).join().unwrap();
    assert!(!coa_last_error_message().is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/coa_lab.h")).unwrap();
    for symbol in [
        "coa_last_error_message",
        "coa_network_from_edges",
        "coa_network_free",
        "coa_network_size",
        "coa_design_bernoulli",
        "coa_design_free",
        "coa_estimate",
        "coa_contrast",
        "coa_monte_carlo_json",
        "coa_string_free",
        "COA_STATUS_POSITIVITY",
        "COA_EXPOSURE_FRACTION",
        "typedef struct CoaNetwork CoaNetwork",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
    let Ok(mut cc) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c", "-"])
        .stdin(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    else {
        return;
    };
    cc.stdin.take().unwrap().write_all(header.as_bytes()).unwrap();
    let out = cc.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
