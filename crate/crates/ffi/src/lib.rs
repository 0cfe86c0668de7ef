//! C ABI over the steersim predictors and trajectory model.
//!
//! Models are loaded from the JSON files the `steersim` CLI writes and are
//! exposed as opaque handles. Every fallible call returns a [`SteersimStatus`];
//! on failure a message is available from [`steersim_last_error`] until the
//! next call on the same thread. Handles are immutable after loading and may
//! be shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use steersim::flowdata::{Direction, FlowKey, PacketMeta};
use steersim::metrics::roc_curve;
use steersim::mobility::{match_trajectory, predict_coverage_ahead, Fingerprint, TrajectoryModel};
use steersim::predictors::{
    predict_coverage_from_rsrp, predict_volume_proba, CoveragePredictor, TrafficPredictor,
};
use steersim::Error;

/// Result code of every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteersimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    SchemaMismatch = 6,
    UnknownThreshold = 7,
    OutOfRange = 8,
    Internal = 9,
}

/// Flow five-tuple; addresses are IPv4 in host byte order.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SteersimFlowKey {
    pub src_addr: u32,
    pub dst_addr: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

/// First packet of a flow. `direction` is 0 for uplink, 1 for downlink.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SteersimPacket {
    pub arrival_time: f64,
    pub size: u32,
    pub direction: u8,
}

/// Best route match for an observed fingerprint sequence.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SteersimRouteMatch {
    pub route_id: u32,
    pub score: f64,
    pub distance: f64,
    /// Template step aligned with the last observed fingerprint.
    pub current_step: usize,
}

pub struct SteersimTrafficPredictor(TrafficPredictor);
pub struct SteersimCoveragePredictor(CoveragePredictor);
pub struct SteersimTrajectoryModel(TrajectoryModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SteersimStatus {
    match e {
        Error::Io { .. } => SteersimStatus::Io,
        Error::Json(_) | Error::Malformed { .. } => SteersimStatus::Parse,
        Error::ModelFormat(_) | Error::Invariant { .. } => SteersimStatus::Model,
        Error::SchemaMismatch { .. } => SteersimStatus::SchemaMismatch,
        Error::UnknownThreshold(_) => SteersimStatus::UnknownThreshold,
        Error::OutOfRange(_) | Error::Insufficient(_) => SteersimStatus::OutOfRange,
        _ => SteersimStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SteersimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SteersimStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SteersimStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            SteersimStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SteersimStatus::Internal
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail::Arg("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null("handle"))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next steersim call on the same thread.
#[no_mangle]
pub extern "C" fn steersim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn steersim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a traffic predictor written by `steersim train-traffic`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steersim_traffic_load(
    path: *const c_char,
    out: *mut *mut SteersimTrafficPredictor,
) -> SteersimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = TrafficPredictor::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SteersimTrafficPredictor(model)));
        Ok(())
    })
}

/// Probability that the flow's total volume exceeds `threshold_bytes`
/// (1000, 10000 or 100000), from its key and first packet.
///
/// # Safety
/// All pointers must be valid; `handle` must come from `steersim_traffic_load`.
#[no_mangle]
pub unsafe extern "C" fn steersim_traffic_predict(
    handle_ptr: *const SteersimTrafficPredictor,
    key: *const SteersimFlowKey,
    first_packet: *const SteersimPacket,
    threshold_bytes: u64,
    out: *mut f64,
) -> SteersimStatus {
    guard(|| {
        let h = handle(handle_ptr)?;
        let k = key.as_ref().ok_or(Fail::Null("key"))?;
        let p = first_packet.as_ref().ok_or(Fail::Null("first_packet"))?;
        let out = out_arg(out, "out")?;
        let direction = match p.direction {
            0 => Direction::Uplink,
            1 => Direction::Downlink,
            d => return Err(Fail::Arg(format!("direction must be 0 or 1, got {d}"))),
        };
        let flow_key = FlowKey {
            src_addr: Ipv4Addr::from(k.src_addr),
            dst_addr: Ipv4Addr::from(k.dst_addr),
            src_port: k.src_port,
            dst_port: k.dst_port,
            protocol: k.protocol,
        };
        let packet = PacketMeta::new(p.arrival_time, p.size, direction);
        *out = predict_volume_proba(&h.0, &flow_key, &packet, threshold_bytes)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `steersim_traffic_load` or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steersim_traffic_free(handle: *mut SteersimTrafficPredictor) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Load a coverage predictor written by `steersim train-coverage`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steersim_coverage_load(
    path: *const c_char,
    out: *mut *mut SteersimCoveragePredictor,
) -> SteersimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = CoveragePredictor::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SteersimCoveragePredictor(model)));
        Ok(())
    })
}

/// Number of primary cells the coverage model expects.
///
/// # Safety
/// `handle` must come from `steersim_coverage_load`.
#[no_mangle]
pub unsafe extern "C" fn steersim_coverage_cells(
    handle_ptr: *const SteersimCoveragePredictor,
    out: *mut usize,
) -> SteersimStatus {
    guard(|| {
        let h = handle(handle_ptr)?;
        *out_arg(out, "out")? = h.0.n_cells();
        Ok(())
    })
}

/// Probability of secondary-carrier coverage from `n_cells` primary RSRP values (dBm).
///
/// # Safety
/// `primary_rsrp` must point to `n_cells` doubles.
#[no_mangle]
pub unsafe extern "C" fn steersim_coverage_predict(
    handle_ptr: *const SteersimCoveragePredictor,
    primary_rsrp: *const f64,
    n_cells: usize,
    out: *mut f64,
) -> SteersimStatus {
    guard(|| {
        let h = handle(handle_ptr)?;
        let rsrp = slice_arg(primary_rsrp, n_cells, "primary_rsrp")?;
        let out = out_arg(out, "out")?;
        h.0.check_cells(n_cells)?;
        *out = predict_coverage_from_rsrp(&h.0, rsrp)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `steersim_coverage_load` or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steersim_coverage_free(handle: *mut SteersimCoveragePredictor) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Load a trajectory model written by `steersim mobility`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steersim_trajectory_load(
    path: *const c_char,
    out: *mut *mut SteersimTrajectoryModel,
) -> SteersimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = TrajectoryModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SteersimTrajectoryModel(model)));
        Ok(())
    })
}

/// Match `steps` observed fingerprints, each `n_cells` RSRP values laid out
/// row by row, and report the best route.
///
/// # Safety
/// `rsrp` must point to `steps * n_cells` doubles.
#[no_mangle]
pub unsafe extern "C" fn steersim_trajectory_match(
    handle_ptr: *const SteersimTrajectoryModel,
    rsrp: *const f64,
    steps: usize,
    n_cells: usize,
    out: *mut SteersimRouteMatch,
) -> SteersimStatus {
    guard(|| {
        let h = handle(handle_ptr)?;
        let out = out_arg(out, "out")?;
        if n_cells == 0 {
            return Err(Fail::Arg("n_cells must be positive".into()));
        }
        let total = steps
            .checked_mul(n_cells)
            .ok_or_else(|| Fail::Arg("steps * n_cells overflows".into()))?;
        let values = slice_arg(rsrp, total, "rsrp")?;
        let prefix = values
            .chunks(n_cells)
            .map(|row| Fingerprint::from_rsrp(row, h.0.detection_dbm))
            .collect::<Result<Vec<_>, _>>()?;
        let ranked = match_trajectory(&h.0, &prefix)?;
        let best = &ranked[0];
        *out = SteersimRouteMatch {
            route_id: best.route_id,
            score: best.score,
            distance: best.distance,
            current_step: best.current_step(prefix.len()),
        };
        Ok(())
    })
}

/// Stored coverage probabilities for the `horizon` steps after `current_step`.
///
/// # Safety
/// `out` must have room for `horizon` doubles.
#[no_mangle]
pub unsafe extern "C" fn steersim_trajectory_coverage_ahead(
    handle_ptr: *const SteersimTrajectoryModel,
    route_id: u32,
    current_step: usize,
    horizon: usize,
    out: *mut f64,
) -> SteersimStatus {
    guard(|| {
        let h = handle(handle_ptr)?;
        let probs = predict_coverage_ahead(&h.0, route_id, current_step, horizon)?;
        if horizon > 0 {
            if out.is_null() {
                return Err(Fail::Null("out"));
            }
            std::slice::from_raw_parts_mut(out, horizon).copy_from_slice(&probs);
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `steersim_trajectory_load` or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steersim_trajectory_free(handle: *mut SteersimTrajectoryModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Area under the ROC curve of `n` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must each point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn steersim_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> SteersimStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let labels = slice_arg(labels, n, "labels")?;
        let out = out_arg(out, "out")?;
        let labels: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
        *out = roc_curve(scores, &labels)?.auc;
        Ok(())
    })
}
