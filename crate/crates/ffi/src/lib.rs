//! C ABI over venuerank: dataset loading, ranking fits and the pair scheduler.
//!
//! Objects are opaque handles created by `vr_*_new`/`vr_*_load`/`vr_fit_*` and
//! released with the matching `vr_*_free`. Every fallible call returns a
//! [`VrStatus`]; on failure, [`vr_last_error`] describes it for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use venuerank::model::{load_dataset, ComparisonOutcome, Dataset, DatasetPaths, VenueId};
use venuerank::rank::{
    field_scores, fit_springrank, individual_scores, rescale_if_identifiable, ComparisonMatrix, RankConfig,
    RankScores,
};
use venuerank::scheduler::{ScheduleError, SchedulerConfig, SchedulerState};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    LoadFailed = 4,
    RankFailed = 5,
    OutOfRange = 6,
    Exhausted = 7,
    UnexpectedPair = 8,
    NothingToUndo = 9,
    Panic = 10,
}

/// Outcome codes for [`vr_scheduler_record`].
pub const VR_OUTCOME_FIRST: i32 = 0;
pub const VR_OUTCOME_SECOND: i32 = 1;
pub const VR_OUTCOME_INDIFFERENT: i32 = 2;

pub struct VrDataset {
    inner: Dataset,
}

pub struct VrScores {
    inner: RankScores,
    ids: Vec<CString>,
}

pub struct VrScheduler {
    inner: SchedulerState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: VrStatus, msg: impl Into<String>) -> VrStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`VrStatus::Panic`].
fn guard(f: impl FnOnce() -> VrStatus) -> VrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(VrStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, VrStatus> {
    if p.is_null() {
        return Err(fail(VrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(VrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn alpha_config(alpha: f64) -> Result<RankConfig, VrStatus> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(RankConfig::with_alpha(alpha))
    } else {
        Err(fail(VrStatus::InvalidArgument, "alpha must be a finite non-negative number"))
    }
}

fn scores_handle(inner: RankScores) -> *mut VrScores {
    let ids = inner.items.iter().map(|v| CString::new(v.as_str().replace('\0', " ")).expect("no nul")).collect();
    Box::into_raw(Box::new(VrScores { inner, ids }))
}

fn index_id(i: u32) -> VenueId {
    VenueId::new(i.to_string()).expect("digits are not blank")
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn vr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn vr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the dataset files in directory `dir`.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vr_dataset_load(dir: *const c_char, out: *mut *mut VrDataset) -> VrStatus {
    guard(|| {
        if out.is_null() {
            return fail(VrStatus::NullArgument, "out is null");
        }
        let dir = match str_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match load_dataset(&DatasetPaths::in_dir(Path::new(dir))) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(VrDataset { inner: ds }));
                VrStatus::Ok
            }
            Err(e) => fail(VrStatus::LoadFailed, e.to_string()),
        }
    })
}

/// # Safety
/// `ds` must be null or a handle from [`vr_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vr_dataset_free(ds: *mut VrDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of comparisons in the dataset.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn vr_dataset_comparison_count(ds: *const VrDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.comparisons.len())
}

/// Consensus fit over every comparison of `field`.
///
/// # Safety
/// `ds` must be a live dataset handle, `field` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vr_fit_field(
    ds: *const VrDataset,
    field: *const c_char,
    alpha: f64,
    out: *mut *mut VrScores,
) -> VrStatus {
    guard(|| {
        let (Some(ds), false) = (ds.as_ref(), out.is_null()) else {
            return fail(VrStatus::NullArgument, "dataset or out is null");
        };
        let field = match str_arg(field, "field") {
            Ok(f) => f,
            Err(s) => return s,
        };
        let cfg = match alpha_config(alpha) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match field_scores(&ds.inner, field, &cfg) {
            Ok(s) => {
                *out = scores_handle(s);
                VrStatus::Ok
            }
            Err(e) => fail(VrStatus::RankFailed, e.to_string()),
        }
    })
}

/// One respondent's own fit.
///
/// # Safety
/// As [`vr_fit_field`], with `respondent` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vr_fit_individual(
    ds: *const VrDataset,
    respondent: *const c_char,
    alpha: f64,
    out: *mut *mut VrScores,
) -> VrStatus {
    guard(|| {
        let (Some(ds), false) = (ds.as_ref(), out.is_null()) else {
            return fail(VrStatus::NullArgument, "dataset or out is null");
        };
        let r = match str_arg(respondent, "respondent") {
            Ok(r) => r,
            Err(s) => return s,
        };
        let cfg = match alpha_config(alpha) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match individual_scores(&ds.inner, r, &cfg) {
            Ok(s) => {
                *out = scores_handle(s);
                VrStatus::Ok
            }
            Err(e) => fail(VrStatus::RankFailed, e.to_string()),
        }
    })
}

/// Fits `n_items` items named `"0"`..`"n_items-1"` from `len` strict outcomes
/// where `winners[k]` beat `losers[k]`.
///
/// # Safety
/// `winners` and `losers` must each point to `len` readable values (or be
/// null when `len` is 0), and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vr_fit_pairs(
    n_items: u32,
    winners: *const u32,
    losers: *const u32,
    len: usize,
    alpha: f64,
    out: *mut *mut VrScores,
) -> VrStatus {
    guard(|| {
        if out.is_null() || (len > 0 && (winners.is_null() || losers.is_null())) {
            return fail(VrStatus::NullArgument, "pair arrays or out is null");
        }
        if n_items == 0 {
            return fail(VrStatus::InvalidArgument, "n_items must be positive");
        }
        let cfg = match alpha_config(alpha) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let mut m = ComparisonMatrix::empty((0..n_items).map(index_id).collect());
        if len > 0 {
            let w = std::slice::from_raw_parts(winners, len);
            let l = std::slice::from_raw_parts(losers, len);
            for (&a, &b) in w.iter().zip(l) {
                if a >= n_items || b >= n_items || a == b {
                    return fail(VrStatus::OutOfRange, format!("bad pair ({a}, {b}) for {n_items} items"));
                }
                m.add(a as usize, b as usize, 1.0);
            }
        }
        match fit_springrank(&m, &cfg) {
            Ok(s) => {
                *out = scores_handle(rescale_if_identifiable(&m, s));
                VrStatus::Ok
            }
            Err(e) => fail(VrStatus::RankFailed, e.to_string()),
        }
    })
}

/// # Safety
/// `scores` must be a live scores handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scores_len(scores: *const VrScores) -> usize {
    scores.as_ref().map_or(0, |s| s.inner.len())
}

/// Raw and min-max normalized score of item `index` (items are ordered by id).
///
/// # Safety
/// `scores` must be a live scores handle; `raw` and `normalized` may be null.
#[no_mangle]
pub unsafe extern "C" fn vr_scores_get(
    scores: *const VrScores,
    index: usize,
    raw: *mut f64,
    normalized: *mut f64,
) -> VrStatus {
    guard(|| {
        let Some(s) = scores.as_ref() else {
            return fail(VrStatus::NullArgument, "scores is null");
        };
        if index >= s.inner.len() {
            return fail(VrStatus::OutOfRange, format!("index {index} of {}", s.inner.len()));
        }
        if !raw.is_null() {
            *raw = s.inner.raw_scores[index];
        }
        if !normalized.is_null() {
            *normalized = s.inner.normalized()[index];
        }
        VrStatus::Ok
    })
}

/// Id of item `index`, owned by the handle; null when out of range.
///
/// # Safety
/// `scores` must be a live scores handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scores_id(scores: *const VrScores, index: usize) -> *const c_char {
    scores.as_ref().and_then(|s| s.ids.get(index)).map_or(ptr::null(), |c| c.as_ptr())
}

/// Fitted inverse temperature, or a negative value when it is not identifiable.
///
/// # Safety
/// `scores` must be a live scores handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scores_beta(scores: *const VrScores) -> f64 {
    scores.as_ref().and_then(|s| s.inner.inverse_temperature).unwrap_or(-1.0)
}

/// # Safety
/// `scores` must be null or a live scores handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scores_free(scores: *mut VrScores) {
    if !scores.is_null() {
        drop(Box::from_raw(scores));
    }
}

/// Scheduler over items `"0"`..`"n_items-1"` with the default completion rule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vr_scheduler_new(n_items: u32, seed: u64, out: *mut *mut VrScheduler) -> VrStatus {
    guard(|| {
        if out.is_null() {
            return fail(VrStatus::NullArgument, "out is null");
        }
        if n_items < 2 {
            return fail(VrStatus::InvalidArgument, "need at least two items");
        }
        let items = (0..n_items).map(index_id).collect();
        *out = Box::into_raw(Box::new(VrScheduler { inner: SchedulerState::new(items, seed, SchedulerConfig::default()) }));
        VrStatus::Ok
    })
}

fn schedule_status(e: ScheduleError) -> VrStatus {
    let status = match e {
        ScheduleError::Exhausted => VrStatus::Exhausted,
        ScheduleError::UnexpectedPair(..) | ScheduleError::NoOutstanding => VrStatus::UnexpectedPair,
        ScheduleError::NothingToUndo => VrStatus::NothingToUndo,
    };
    fail(status, e.to_string())
}

fn parse_index(v: &VenueId) -> u32 {
    v.as_str().parse().expect("scheduler items are indices")
}

/// Issues the outstanding pair. With `continue_past_completion` set, keeps
/// serving pairs after the stage is complete until every pair is used.
///
/// # Safety
/// `s` must be a live scheduler handle; `first`, `second` and `stage_complete`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn vr_scheduler_next(
    s: *mut VrScheduler,
    continue_past_completion: bool,
    first: *mut u32,
    second: *mut u32,
    stage_complete: *mut bool,
) -> VrStatus {
    guard(|| {
        let Some(s) = s.as_mut() else {
            return fail(VrStatus::NullArgument, "scheduler is null");
        };
        if first.is_null() || second.is_null() || stage_complete.is_null() {
            return fail(VrStatus::NullArgument, "output pointer is null");
        }
        let d = if continue_past_completion { s.inner.continue_pair(None) } else { s.inner.next_pair(None) };
        match d {
            Ok(d) => {
                *stage_complete = d.stage_complete;
                match d.pair {
                    Some((a, b)) => {
                        *first = parse_index(&a);
                        *second = parse_index(&b);
                        VrStatus::Ok
                    }
                    None => fail(VrStatus::Exhausted, "stage complete"),
                }
            }
            Err(e) => schedule_status(e),
        }
    })
}

/// Records the answer to the outstanding pair, given in issued order.
///
/// # Safety
/// `s` must be a live scheduler handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scheduler_record(s: *mut VrScheduler, first: u32, second: u32, outcome: i32) -> VrStatus {
    guard(|| {
        let Some(s) = s.as_mut() else {
            return fail(VrStatus::NullArgument, "scheduler is null");
        };
        let outcome = match outcome {
            VR_OUTCOME_FIRST => ComparisonOutcome::First,
            VR_OUTCOME_SECOND => ComparisonOutcome::Second,
            VR_OUTCOME_INDIFFERENT => ComparisonOutcome::Indifferent,
            _ => return fail(VrStatus::InvalidArgument, format!("unknown outcome {outcome}")),
        };
        match s.inner.record_outcome(&index_id(first), &index_id(second), outcome) {
            Ok(()) => VrStatus::Ok,
            Err(e) => schedule_status(e),
        }
    })
}

/// Reverts the last recorded answer.
///
/// # Safety
/// `s` must be a live scheduler handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scheduler_undo(s: *mut VrScheduler) -> VrStatus {
    guard(|| {
        let Some(s) = s.as_mut() else {
            return fail(VrStatus::NullArgument, "scheduler is null");
        };
        match s.inner.undo() {
            Ok(()) => VrStatus::Ok,
            Err(e) => schedule_status(e),
        }
    })
}

/// Number of answered pairs.
///
/// # Safety
/// `s` must be a live scheduler handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scheduler_answered(s: *const VrScheduler) -> usize {
    s.as_ref().map_or(0, |s| s.inner.asked_len())
}

/// # Safety
/// `s` must be null or a live scheduler handle.
#[no_mangle]
pub unsafe extern "C" fn vr_scheduler_free(s: *mut VrScheduler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
