//! C ABI over `iad-core`.
//!
//! Handles are opaque pointers created by `iad_*_new` / `iad_detect_offline`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`IadStatus`]; on failure [`iad_last_error_message`] describes the error
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use iad_core::{
    classify_vmm, detect_offline_with_gap, Detection, DetectorConfig, DetectorKind, Error,
    VmSeries, VmmEngineState, VmmGroup, VmmVerdict,
};

/// Result code of every fallible call. `IAD_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    InvalidArgument = 3,
    InvalidSample = 4,
    EmptyGroup = 5,
    EmptySeries = 6,
    LengthMismatch = 7,
    OutOfRange = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IadDetectorKind {
    ZScore = 0,
    Mean = 1,
}

/// Detector settings. Obtain defaults from [`iad_detector_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IadDetectorConfig {
    pub window: usize,
    pub mean_threshold_percent: f64,
    pub z_multiplier: f64,
    pub min_percent_vms_fault: f64,
    /// Negative means "same as `window`".
    pub warmup_ticks: i64,
    pub epsilon: f64,
    pub kind: IadDetectorKind,
}

/// One VMM-level decision. `emitted` is false when a step produced nothing.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IadVerdict {
    pub emitted: bool,
    pub tick: usize,
    pub anomalous: bool,
    pub vote_fraction: f64,
    pub num_changed: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IadEvent {
    pub start_tick: usize,
    pub end_tick: usize,
    pub peak_vote_fraction: f64,
}

/// Streaming detector for one VMM.
pub struct IadEngine {
    state: VmmEngineState,
    last: Option<VmmVerdict>,
}

/// Result of an offline run over one VMM.
pub struct IadDetection {
    detection: Detection,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> IadStatus {
    match err {
        Error::InvalidConfig(_) | Error::InvalidWindow => IadStatus::InvalidConfig,
        Error::InvalidSample { .. } => IadStatus::InvalidSample,
        Error::EmptyGroup { .. } => IadStatus::EmptyGroup,
        Error::EmptySeries { .. } => IadStatus::EmptySeries,
        Error::LengthMismatch { .. } => IadStatus::LengthMismatch,
        Error::ArityMismatch { .. } => IadStatus::InvalidArgument,
        _ => IadStatus::Internal,
    }
}

struct Fail(IadStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IadStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IadStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IadStatus::Internal
        }
    }
}

fn to_core(cfg: &IadDetectorConfig) -> DetectorConfig {
    DetectorConfig {
        window: cfg.window,
        mean_threshold_percent: cfg.mean_threshold_percent,
        z_multiplier: cfg.z_multiplier,
        min_percent_vms_fault: cfg.min_percent_vms_fault,
        warmup_ticks: usize::try_from(cfg.warmup_ticks).ok(),
        epsilon: cfg.epsilon,
        detector_kind: match cfg.kind {
            IadDetectorKind::ZScore => DetectorKind::ZScoreBased,
            IadDetectorKind::Mean => DetectorKind::MeanBased,
        },
    }
}

fn to_c(v: &VmmVerdict) -> IadVerdict {
    IadVerdict {
        emitted: true,
        tick: v.tick,
        anomalous: v.anomalous,
        vote_fraction: v.vote_fraction,
        num_changed: v.num_changed(),
    }
}

/// # Safety
/// `ptr` must be null or valid for reads of `len` elements.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn iad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn iad_detector_config_default(out: *mut IadDetectorConfig) -> IadStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = DetectorConfig::default();
        *out = IadDetectorConfig {
            window: d.window,
            mean_threshold_percent: d.mean_threshold_percent,
            z_multiplier: d.z_multiplier,
            min_percent_vms_fault: d.min_percent_vms_fault,
            warmup_ticks: -1,
            epsilon: d.epsilon,
            kind: IadDetectorKind::ZScore,
        };
        Ok(())
    })
}

/// Creates a streaming engine for a VMM hosting `num_vms` VMs. `vm_ids` may
/// be null, in which case VMs are named `vm-0`, `vm-1`, ...
///
/// # Safety
/// `cfg` and `out` must be valid; `vm_ids`, if non-null, must hold `num_vms`
/// NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn iad_engine_new(
    cfg: *const IadDetectorConfig,
    vm_ids: *const *const c_char,
    num_vms: usize,
    out: *mut *mut IadEngine,
) -> IadStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let ids: Vec<String> = if vm_ids.is_null() {
            (0..num_vms).map(|j| format!("vm-{j}")).collect()
        } else {
            slice(vm_ids, num_vms, "vm_ids")?
                .iter()
                .map(|&p| {
                    if p.is_null() {
                        return Err(null("vm_ids[i]"));
                    }
                    CStr::from_ptr(p)
                        .to_str()
                        .map(str::to_string)
                        .map_err(|_| Fail(IadStatus::InvalidArgument, "VM id is not UTF-8".into()))
                })
                .collect::<Result<_, _>>()?
        };
        let state = VmmEngineState::new("vmm", ids, to_core(cfg))?;
        *out = Box::into_raw(Box::new(IadEngine { state, last: None }));
        Ok(())
    })
}

/// Ingests one tick (`num_values` must equal the VM count). `out` receives
/// the verdict, with `emitted = false` while the detectors warm up. On error
/// the engine is unchanged.
///
/// # Safety
/// `engine` must come from [`iad_engine_new`]; `values` must hold
/// `num_values` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iad_engine_step(
    engine: *mut IadEngine,
    values: *const f64,
    num_values: usize,
    out: *mut IadVerdict,
) -> IadStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or_else(|| null("engine"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let xs = slice(values, num_values, "values")?;
        let verdict = engine.state.step(xs)?;
        *out = verdict.as_ref().map(to_c).unwrap_or_default();
        engine.last = verdict;
        Ok(())
    })
}

/// Copies the indices of the VMs that changed in the last emitted verdict
/// into `buf` (up to `cap`) and writes the full count to `len`.
///
/// # Safety
/// `engine` must be valid; `buf` must hold `cap` elements (may be null when
/// `cap` is zero); `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iad_engine_last_changed(
    engine: *const IadEngine,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> IadStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let indices: Vec<usize> = engine
            .last
            .as_ref()
            .map(|v| v.changed_indices().collect())
            .unwrap_or_default();
        *len = indices.len();
        if cap > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            let n = cap.min(indices.len());
            ptr::copy_nonoverlapping(indices.as_ptr(), buf, n);
        }
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or come from [`iad_engine_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn iad_engine_free(engine: *mut IadEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Runs offline detection over a VM-major matrix: `values[vm * num_ticks +
/// t]`. Anomalous ticks at most `max_gap` quiet ticks apart form one event.
///
/// # Safety
/// `cfg` and `out` must be valid; `values` must hold `num_vms * num_ticks`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn iad_detect_offline(
    cfg: *const IadDetectorConfig,
    values: *const f64,
    num_vms: usize,
    num_ticks: usize,
    max_gap: usize,
    out: *mut *mut IadDetection,
) -> IadStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let total = num_vms
            .checked_mul(num_ticks)
            .ok_or_else(|| Fail(IadStatus::InvalidArgument, "matrix size overflows".into()))?;
        let xs = slice(values, total, "values")?;
        let series = (0..num_vms)
            .map(|j| {
                VmSeries::new(
                    format!("vm-{j}"),
                    xs[j * num_ticks..(j + 1) * num_ticks].to_vec(),
                )
            })
            .collect();
        let group = VmmGroup::new("vmm", series);
        let detection = detect_offline_with_gap(&group, &to_core(cfg), max_gap)?;
        *out = Box::into_raw(Box::new(IadDetection { detection }));
        Ok(())
    })
}

/// Number of verdicts; 0 for a null handle.
///
/// # Safety
/// `det` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn iad_detection_num_verdicts(det: *const IadDetection) -> usize {
    det.as_ref().map_or(0, |d| d.detection.verdicts.len())
}

/// # Safety
/// `det` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iad_detection_verdict(
    det: *const IadDetection,
    index: usize,
    out: *mut IadVerdict,
) -> IadStatus {
    guard(|| {
        let det = det.as_ref().ok_or_else(|| null("det"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let v = det.detection.verdicts.get(index).ok_or_else(|| {
            Fail(
                IadStatus::OutOfRange,
                format!("verdict index {index} out of range"),
            )
        })?;
        *out = to_c(v);
        Ok(())
    })
}

/// Number of events; 0 for a null handle.
///
/// # Safety
/// `det` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn iad_detection_num_events(det: *const IadDetection) -> usize {
    det.as_ref().map_or(0, |d| d.detection.events.len())
}

/// # Safety
/// `det` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iad_detection_event(
    det: *const IadDetection,
    index: usize,
    out: *mut IadEvent,
) -> IadStatus {
    guard(|| {
        let det = det.as_ref().ok_or_else(|| null("det"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let e = det.detection.events.get(index).ok_or_else(|| {
            Fail(
                IadStatus::OutOfRange,
                format!("event index {index} out of range"),
            )
        })?;
        *out = IadEvent {
            start_tick: e.start_tick,
            end_tick: e.end_tick,
            peak_vote_fraction: e.peak_vote_fraction,
        };
        Ok(())
    })
}

/// True when the run has at least `min_events` events.
///
/// # Safety
/// `det` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn iad_detection_is_anomalous(
    det: *const IadDetection,
    min_events: usize,
) -> bool {
    det.as_ref()
        .is_some_and(|d| classify_vmm(&d.detection.events, min_events))
}

/// # Safety
/// `det` must be null or come from [`iad_detect_offline`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn iad_detection_free(det: *mut IadDetection) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}
