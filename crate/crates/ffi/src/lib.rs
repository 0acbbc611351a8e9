//! C ABI over the flexcomm cost model, compressors, network schedules and
//! simulator.
//!
//! Every fallible call returns an [`FcStatus`]; on failure the message is
//! available from [`fc_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `_free` function. Strings
//! returned through `char **` are owned by the caller and released with
//! [`fc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use flexcomm::compress::{compression_gain, CompressionRatio, Compressor};
use flexcomm::config::RunConfig;
use flexcomm::cost::{crossover_cr, Collective, Crossover, NetParams, Pair};
use flexcomm::grad::DenseGrad;
use flexcomm::netsched::{NetworkSchedule, Preset};
use flexcomm::trainer::{run, write_metrics_csv, RunArtifacts};
use flexcomm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcCollective {
    Ag = 0,
    ArtRing = 1,
    ArtTree = 2,
}

impl From<Collective> for FcCollective {
    fn from(c: Collective) -> Self {
        match c {
            Collective::Ag => FcCollective::Ag,
            Collective::ArtRing => FcCollective::ArtRing,
            Collective::ArtTree => FcCollective::ArtTree,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcPair {
    RingOverTree = 0,
    RingOverAg = 1,
    TreeOverAg = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcCompressor {
    Exact = 0,
    Layerwise = 1,
    Threshold = 2,
}

/// Modeled times in seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FcCostBreakdown {
    pub ps: f64,
    pub ring_ar: f64,
    pub tree_ar: f64,
    pub broadcast: f64,
    pub allgather_dense: f64,
    pub ag: f64,
    pub art_ring: f64,
    pub art_tree: f64,
}

/// Opaque network schedule.
pub struct FcSchedule(NetworkSchedule);

/// Opaque finished simulation.
pub struct FcSimulation(RunArtifacts);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FcStatus {
    match err {
        Error::Config(_) | Error::TraceParse { .. } | Error::InvalidSchedule(_) => FcStatus::Config,
        Error::Diverged { .. } | Error::Io(_) => FcStatus::Runtime,
        _ => FcStatus::InvalidArgument,
    }
}

struct Fail(FcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FcStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside flexcomm".into());
            FcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives this call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(FcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: caller passes either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(FcStatus::Runtime, "string contains NUL".into()))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from a flexcomm function returning `char **`, or be null.
#[no_mangle]
pub unsafe extern "C" fn fc_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` was produced by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Modeled costs of every collective and the cheapest compressed one.
///
/// # Safety
/// `out_costs` and `out_selected` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_plan(
    alpha_ms: f64,
    bandwidth_gbps: f64,
    model_bytes: f64,
    workers: usize,
    cr: f64,
    out_costs: *mut FcCostBreakdown,
    out_selected: *mut FcCollective,
) -> FcStatus {
    guard(|| {
        let costs_out = unsafe { out_arg(out_costs, "out_costs")? };
        let selected_out = unsafe { out_arg(out_selected, "out_selected")? };
        let r = flexcomm::cli::plan(alpha_ms, bandwidth_gbps, model_bytes, workers, cr)?;
        let c = r.costs;
        *costs_out = FcCostBreakdown {
            ps: c.ps,
            ring_ar: c.ring_ar,
            tree_ar: c.tree_ar,
            broadcast: c.broadcast,
            allgather_dense: c.allgather_dense,
            ag: c.ag_compressed,
            art_ring: c.art_ring,
            art_tree: c.art_tree,
        };
        *selected_out = r.selected.into();
        Ok(())
    })
}

/// Ratio below which the pair's first collective stops winning.
/// `*out_exists` is false when there is no crossover in (0, 1].
///
/// # Safety
/// `out_c` and `out_exists` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_crossover_cr(
    alpha_ms: f64,
    bandwidth_gbps: f64,
    model_bytes: f64,
    workers: usize,
    pair: FcPair,
    out_c: *mut f64,
    out_exists: *mut bool,
) -> FcStatus {
    guard(|| {
        let c_out = unsafe { out_arg(out_c, "out_c")? };
        let exists_out = unsafe { out_arg(out_exists, "out_exists")? };
        let net = NetParams::from_ms_gbps(alpha_ms, bandwidth_gbps)?;
        let pair = match pair {
            FcPair::RingOverTree => Pair::RingOverTree,
            FcPair::RingOverAg => Pair::RingOverAg,
            FcPair::TreeOverAg => Pair::TreeOverAg,
        };
        match crossover_cr(&net, model_bytes, workers, pair)? {
            Crossover::At(c) => {
                *c_out = c;
                *exists_out = true;
            }
            Crossover::None => {
                *c_out = f64::NAN;
                *exists_out = false;
            }
        }
        Ok(())
    })
}

/// Top-k compression of `values[0..len]`. Writes up to `capacity` kept
/// entries in ascending index order and their count to `*out_count`.
/// Returns `BufferTooSmall` (with `*out_count` set) when `capacity` is short.
/// `rounds` is only used by the threshold compressor.
///
/// # Safety
/// `values` must hold `len` doubles; `out_indices` and `out_values` must
/// hold `capacity` elements; `out_count` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_topk(
    values: *const f64,
    len: usize,
    cr: f64,
    method: FcCompressor,
    rounds: u32,
    out_indices: *mut usize,
    out_values: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> FcStatus {
    guard(|| {
        let input = unsafe { slice_arg(values, len, "values")? };
        let count_out = unsafe { out_arg(out_count, "out_count")? };
        let g = DenseGrad::from_values(input.to_vec())?;
        let compressor = match method {
            FcCompressor::Exact => Compressor::Exact,
            FcCompressor::Layerwise => Compressor::Layerwise,
            FcCompressor::Threshold => Compressor::Threshold { rounds },
        };
        let s = compressor.compress(&g, CompressionRatio::new(cr)?)?;
        *count_out = s.nnz();
        if s.nnz() > capacity {
            return Err(Fail(FcStatus::BufferTooSmall, format!("need {} slots, got {capacity}", s.nnz())));
        }
        if s.nnz() > 0 && (out_indices.is_null() || out_values.is_null()) {
            return Err(null("output buffer"));
        }
        for (i, (&idx, &v)) in s.indices().iter().zip(s.values()).enumerate() {
            // SAFETY: i < nnz <= capacity, buffers hold `capacity` slots.
            unsafe {
                *out_indices.add(i) = idx;
                *out_values.add(i) = v;
            }
        }
        Ok(())
    })
}

/// `||topk(g)||^2 / ||g||^2` with the exact compressor.
///
/// # Safety
/// `values` must hold `len` doubles; `out_gain` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_compression_gain(values: *const f64, len: usize, cr: f64, out_gain: *mut f64) -> FcStatus {
    guard(|| {
        let input = unsafe { slice_arg(values, len, "values")? };
        let gain_out = unsafe { out_arg(out_gain, "out_gain")? };
        let g = DenseGrad::from_values(input.to_vec())?;
        let s = Compressor::Exact.compress(&g, CompressionRatio::new(cr)?)?;
        *gain_out = compression_gain(&g, &s)?;
        Ok(())
    })
}

/// Parses trace text (`start_epoch,alpha_ms,bandwidth_gbps` lines).
///
/// # Safety
/// `trace` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_schedule_parse(trace: *const c_char, out: *mut *mut FcSchedule) -> FcStatus {
    guard(|| {
        let text = unsafe { str_arg(trace, "trace")? };
        let slot = unsafe { out_arg(out, "out")? };
        *slot = Box::into_raw(Box::new(FcSchedule(NetworkSchedule::parse(text)?)));
        Ok(())
    })
}

/// Builds the `c1` or `c2` preset scaled to `epochs`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_schedule_preset(name: *const c_char, epochs: u64, out: *mut *mut FcSchedule) -> FcStatus {
    guard(|| {
        let name = unsafe { str_arg(name, "name")? };
        let slot = unsafe { out_arg(out, "out")? };
        let preset: Preset = name.parse()?;
        *slot = Box::into_raw(Box::new(FcSchedule(NetworkSchedule::preset(preset, epochs)?)));
        Ok(())
    })
}

/// Number of segments, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_schedule_len(schedule: *const FcSchedule) -> usize {
    // SAFETY: null or a live handle, per the contract.
    unsafe { schedule.as_ref() }.map_or(0, |s| s.0.segments().len())
}

/// Network conditions in effect at `epoch`.
///
/// # Safety
/// `schedule` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_schedule_params_at(
    schedule: *const FcSchedule,
    epoch: u64,
    out_alpha_ms: *mut f64,
    out_bandwidth_gbps: *mut f64,
) -> FcStatus {
    guard(|| {
        let s = unsafe { schedule.as_ref() }.ok_or_else(|| null("schedule"))?;
        let a = unsafe { out_arg(out_alpha_ms, "out_alpha_ms")? };
        let b = unsafe { out_arg(out_bandwidth_gbps, "out_bandwidth_gbps")? };
        let net = s.0.params_at(epoch);
        *a = net.alpha_ms();
        *b = net.bandwidth_gbps();
        Ok(())
    })
}

/// Trace text for the schedule.
///
/// # Safety
/// `schedule` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_schedule_to_trace(schedule: *const FcSchedule, out: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let s = unsafe { schedule.as_ref() }.ok_or_else(|| null("schedule"))?;
        let slot = unsafe { out_arg(out, "out")? };
        *slot = to_c_string(s.0.to_trace())?;
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_schedule_free(schedule: *mut FcSchedule) {
    if !schedule.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(schedule) });
    }
}

/// Runs a simulation described by TOML `config`. Relative paths in the
/// config resolve against `base_dir` (the current directory if null).
///
/// # Safety
/// `config` must be a NUL-terminated string, `base_dir` null or one;
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_simulation_run(
    config: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut FcSimulation,
) -> FcStatus {
    guard(|| {
        let text = unsafe { str_arg(config, "config")? };
        let base = if base_dir.is_null() { "." } else { unsafe { str_arg(base_dir, "base_dir")? } };
        let slot = unsafe { out_arg(out, "out")? };
        let exp = RunConfig::parse(text)?.build(Path::new(base))?;
        let art = run(exp.train, exp.model, exp.data, &exp.schedule, Some(exp.controller))?;
        *slot = Box::into_raw(Box::new(FcSimulation(art)));
        Ok(())
    })
}

/// Steps executed, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_simulation_steps(sim: *const FcSimulation) -> usize {
    // SAFETY: null or a live handle, per the contract.
    unsafe { sim.as_ref() }.map_or(0, |s| s.0.metrics.len())
}

/// Summary as JSON.
///
/// # Safety
/// `sim` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_simulation_summary_json(sim: *const FcSimulation, out: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let s = unsafe { sim.as_ref() }.ok_or_else(|| null("sim"))?;
        let slot = unsafe { out_arg(out, "out")? };
        let json = serde_json::to_string(&s.0.summary()).map_err(|e| Fail(FcStatus::Runtime, e.to_string()))?;
        *slot = to_c_string(json)?;
        Ok(())
    })
}

/// Per-step metrics as CSV.
///
/// # Safety
/// `sim` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_simulation_metrics_csv(sim: *const FcSimulation, out: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let s = unsafe { sim.as_ref() }.ok_or_else(|| null("sim"))?;
        let slot = unsafe { out_arg(out, "out")? };
        let mut buf = Vec::new();
        write_metrics_csv(&s.0.metrics, &mut buf)?;
        *slot = to_c_string(String::from_utf8(buf).map_err(|e| Fail(FcStatus::Runtime, e.to_string()))?)?;
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_simulation_free(sim: *mut FcSimulation) {
    if !sim.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(sim) });
    }
}
