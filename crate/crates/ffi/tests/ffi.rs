use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use flexcomm_ffi::*;

fn last_error() -> String {
    let p = fc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { fc_string_free(p) };
    s
}

#[test]
fn plan_selects_like_the_library() {
    let mut costs = FcCostBreakdown::default();
    let mut sel = FcCollective::ArtTree;
    let st = unsafe { fc_plan(1.0, 10.0, 45.5e6, 8, 0.1, &mut costs, &mut sel) };
    assert_eq!(st, FcStatus::Ok);
    assert_eq!(sel, FcCollective::ArtRing);
    assert!(costs.art_ring < costs.ag && costs.art_ring < costs.art_tree);

    let st = unsafe { fc_plan(1.0, 10.0, 45.5e6, 8, 0.001, &mut costs, &mut sel) };
    assert_eq!(st, FcStatus::Ok);
    assert_eq!(sel, FcCollective::Ag);
}

#[test]
fn plan_errors_are_reported() {
    let mut costs = FcCostBreakdown::default();
    let mut sel = FcCollective::Ag;
    let st = unsafe { fc_plan(1.0, 10.0, 45.5e6, 1, 0.1, &mut costs, &mut sel) };
    assert_eq!(st, FcStatus::InvalidArgument);
    assert!(last_error().contains("single worker"));
    let st = unsafe { fc_plan(1.0, 10.0, 45.5e6, 8, 1.5, &mut costs, &mut sel) };
    assert_eq!(st, FcStatus::InvalidArgument);
    let st = unsafe { fc_plan(1.0, 10.0, 45.5e6, 8, 0.1, ptr::null_mut(), &mut sel) };
    assert_eq!(st, FcStatus::NullPointer);
}

#[test]
fn crossover() {
    let (mut c, mut exists) = (0.0, false);
    let st = unsafe { fc_crossover_cr(1.0, 10.0, 45.5e6, 8, FcPair::RingOverAg, &mut c, &mut exists) };
    assert_eq!(st, FcStatus::Ok);
    assert!(exists && c > 0.0 && c < 1.0);
}

#[test]
fn topk_roundtrip_and_short_buffer() {
    let g = [0.1, -3.0, 2.0, 0.0, -0.5];
    let mut idx = [0usize; 5];
    let mut vals = [0.0f64; 5];
    let mut n = 0usize;
    let st = unsafe {
        fc_topk(g.as_ptr(), g.len(), 0.4, FcCompressor::Exact, 0, idx.as_mut_ptr(), vals.as_mut_ptr(), 5, &mut n)
    };
    assert_eq!(st, FcStatus::Ok);
    assert_eq!(&idx[..n], &[1, 2]);
    assert_eq!(&vals[..n], &[-3.0, 2.0]);

    let st = unsafe {
        fc_topk(g.as_ptr(), g.len(), 0.4, FcCompressor::Threshold, 25, idx.as_mut_ptr(), vals.as_mut_ptr(), 1, &mut n)
    };
    assert_eq!(st, FcStatus::BufferTooSmall);
    assert_eq!(n, 2);

    let mut gain = 0.0;
    let st = unsafe { fc_compression_gain(g.as_ptr(), g.len(), 1.0, &mut gain) };
    assert_eq!(st, FcStatus::Ok);
    assert_eq!(gain, 1.0);
}

#[test]
fn schedule_handles() {
    let name = CString::new("c1").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { fc_schedule_preset(name.as_ptr(), 50, &mut s) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_schedule_len(s) }, 4);
    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { fc_schedule_params_at(s, 13, &mut a, &mut b) }, FcStatus::Ok);
    assert_eq!((a, b), (1.0, 1.0));
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { fc_schedule_to_trace(s, &mut text) }, FcStatus::Ok);
    let trace = unsafe { take_string(text) };
    unsafe { fc_schedule_free(s) };

    let trace = CString::new(trace).unwrap();
    let mut s2 = ptr::null_mut();
    assert_eq!(unsafe { fc_schedule_parse(trace.as_ptr(), &mut s2) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_schedule_len(s2) }, 4);
    unsafe { fc_schedule_free(s2) };

    let bad = CString::new("0,1,10\n0,2,5\n").unwrap();
    let mut s3 = ptr::null_mut();
    assert_eq!(unsafe { fc_schedule_parse(bad.as_ptr(), &mut s3) }, FcStatus::Config);
    assert!(s3.is_null());
    assert_eq!(unsafe { fc_schedule_len(ptr::null()) }, 0);
    unsafe { fc_schedule_free(ptr::null_mut()) };
}

const SMALL_RUN: &str = r#"
[cluster]
n = 2

[model]
kind = "softmax_regression"
features = 4
classes = 3

[data]
samples_per_worker = 40

[train]
eta = 0.1
batch = 4
epochs = 2
seed = 3

[compression]
method = "exact"
c = 0.25

[network]
segments = [[0, 1.0, 10.0]]
"#;

#[test]
fn simulation_handle() {
    let cfg = CString::new(SMALL_RUN).unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { fc_simulation_run(cfg.as_ptr(), ptr::null(), &mut sim) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_simulation_steps(sim) }, 20);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { fc_simulation_summary_json(sim, &mut json) }, FcStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&unsafe { take_string(json) }).unwrap();
    assert_eq!(v["steps"], 20);

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { fc_simulation_metrics_csv(sim, &mut csv) }, FcStatus::Ok);
    let csv = unsafe { take_string(csv) };
    assert!(csv.starts_with("step,loss,t_compute,t_comp_decomp,t_sync,t_io,t_step,gain,cr_used,collective_used,selected_rank\n"));
    assert_eq!(csv.lines().count(), 21);
    unsafe { fc_simulation_free(sim) };

    let bad = CString::new("[cluster]\nn = 2\nbogus = 1\n").unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { fc_simulation_run(bad.as_ptr(), ptr::null(), &mut sim) }, FcStatus::Config);
    assert!(sim.is_null());
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/flexcomm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["fc_plan", "fc_topk", "fc_schedule_free", "fc_simulation_run", "FC_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler, skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
