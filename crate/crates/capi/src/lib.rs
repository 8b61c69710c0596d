//! C ABI for the polsense library.
//!
//! Every function returns a [`PolsenseStatus`]; results travel through
//! opaque handles or caller-provided out-parameters. On failure a
//! human-readable message is stored per thread and can be fetched with
//! [`polsense_last_error`]. Handles must be released with their matching
//! `*_free` function; all `free` functions accept NULL.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use polsense::channel::ChannelModel;
use polsense::detect::{run_detection, AlarmClass, DetectConfig, DetectionReport};
use polsense::scenario::{builtin_preset, parse_scenario, EventScript};
use polsense::sop::{SopSeries, LAUNCH_X};

/// Result of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolsenseStatus {
    /// The call succeeded.
    Ok = 0,
    /// A pointer argument was NULL or an index was out of range.
    InvalidArgument = 1,
    /// A scenario failed to parse or validate.
    BadScenario = 2,
    /// Simulation or detection failed; see `polsense_last_error`.
    RuntimeError = 3,
}

/// Alarm classes reported by the detector, mirrored as stable integers.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolsenseAlarmClass {
    PrecursorImpulsive = 0,
    PrecursorSustained = 1,
    Impulsive = 2,
    Break = 3,
    LossOfSignal = 4,
}

/// One detector alarm.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PolsenseAlarm {
    pub t_s: f64,
    pub class: PolsenseAlarmClass,
    pub score: f64,
    pub run_length_s: f64,
}

/// One Stokes sample: time, the four Stokes components, and a validity flag
/// (0 after loss of signal).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PolsenseSopSample {
    pub t_s: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub valid: u8,
}

/// Opaque handle to a validated event script.
pub struct PolsenseScenario {
    script: EventScript,
}

/// Opaque handle to a simulated Stokes time series.
pub struct PolsenseSopSeries {
    series: SopSeries,
}

/// Opaque handle to a detection report.
pub struct PolsenseReport {
    report: DetectionReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: PolsenseStatus, msg: &str) -> PolsenseStatus {
    set_error(msg);
    status
}

/// Returns the error message from the most recent failing call on this
/// thread. The pointer stays valid until the next failing call; never free
/// it.
#[no_mangle]
pub extern "C" fn polsense_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

/// Loads a built-in scenario preset (`baseline`, `break-demo`, or
/// `mains-only`) into a new handle.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polsense_scenario_preset(
    name: *const c_char,
    out: *mut *mut PolsenseScenario,
) -> PolsenseStatus {
    if out.is_null() {
        return fail(PolsenseStatus::InvalidArgument, "out is NULL");
    }
    let Some(name) = str_arg(name) else {
        return fail(PolsenseStatus::InvalidArgument, "name is NULL or not UTF-8");
    };
    match builtin_preset(name) {
        Ok(script) => {
            *out = Box::into_raw(Box::new(PolsenseScenario { script }));
            PolsenseStatus::Ok
        }
        Err(e) => fail(PolsenseStatus::BadScenario, &e.to_string()),
    }
}

/// Parses a TOML scenario into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polsense_scenario_parse(
    text: *const c_char,
    out: *mut *mut PolsenseScenario,
) -> PolsenseStatus {
    if out.is_null() {
        return fail(PolsenseStatus::InvalidArgument, "out is NULL");
    }
    let Some(text) = str_arg(text) else {
        return fail(PolsenseStatus::InvalidArgument, "text is NULL or not UTF-8");
    };
    match parse_scenario(text) {
        Ok(script) => {
            *out = Box::into_raw(Box::new(PolsenseScenario { script }));
            PolsenseStatus::Ok
        }
        Err(e) => fail(PolsenseStatus::BadScenario, &e.to_string()),
    }
}

/// Releases a scenario handle.
///
/// # Safety
/// `scenario` must have come from this library, and must not be used again.
#[no_mangle]
pub unsafe extern "C" fn polsense_scenario_free(scenario: *mut PolsenseScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulates the scenario's channel and samples the output state of
/// polarization every `period_s` seconds.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polsense_simulate_sop(
    scenario: *const PolsenseScenario,
    period_s: f64,
    out: *mut *mut PolsenseSopSeries,
) -> PolsenseStatus {
    if scenario.is_null() || out.is_null() {
        return fail(PolsenseStatus::InvalidArgument, "scenario or out is NULL");
    }
    let script = &(*scenario).script;
    let model = match ChannelModel::compile(script) {
        Ok(m) => m,
        Err(e) => return fail(PolsenseStatus::BadScenario, &e.to_string()),
    };
    match model.sop_direct_series(period_s, LAUNCH_X) {
        Ok(series) => {
            *out = Box::into_raw(Box::new(PolsenseSopSeries { series }));
            PolsenseStatus::Ok
        }
        Err(e) => fail(PolsenseStatus::RuntimeError, &e.to_string()),
    }
}

/// Number of samples in a series.
///
/// # Safety
/// `series` must be a live handle; NULL yields 0.
#[no_mangle]
pub unsafe extern "C" fn polsense_sop_len(series: *const PolsenseSopSeries) -> usize {
    if series.is_null() {
        return 0;
    }
    (*series).series.len()
}

/// Copies up to `capacity` samples starting at `offset` into `buf`, returning
/// the number copied through `copied`.
///
/// # Safety
/// `buf` must point to at least `capacity` samples; other pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn polsense_sop_copy(
    series: *const PolsenseSopSeries,
    offset: usize,
    buf: *mut PolsenseSopSample,
    capacity: usize,
    copied: *mut usize,
) -> PolsenseStatus {
    if series.is_null() || buf.is_null() || copied.is_null() {
        return fail(PolsenseStatus::InvalidArgument, "NULL pointer argument");
    }
    let s = &(*series).series;
    if offset > s.len() {
        return fail(PolsenseStatus::InvalidArgument, "offset beyond series length");
    }
    let n = capacity.min(s.len() - offset);
    for k in 0..n {
        let sample = &s.samples[offset + k];
        *buf.add(k) = PolsenseSopSample {
            t_s: s.time_at(offset + k),
            s0: sample.s.s0,
            s1: sample.s.s1,
            s2: sample.s.s2,
            s3: sample.s.s3,
            valid: sample.valid as u8,
        };
    }
    *copied = n;
    PolsenseStatus::Ok
}

/// Releases a series handle.
///
/// # Safety
/// `series` must have come from this library, and must not be used again.
#[no_mangle]
pub unsafe extern "C" fn polsense_sop_free(series: *mut PolsenseSopSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Runs the full detection pipeline on a series with default thresholds,
/// training the noise baseline on the leading `train_frac` of the record.
///
/// # Safety
/// `series` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polsense_detect(
    series: *const PolsenseSopSeries,
    train_frac: f64,
    out: *mut *mut PolsenseReport,
) -> PolsenseStatus {
    if series.is_null() || out.is_null() {
        return fail(PolsenseStatus::InvalidArgument, "series or out is NULL");
    }
    match run_detection(
        &(*series).series,
        &DetectConfig::default(),
        train_frac,
        None,
        Some(0.5),
    ) {
        Ok(report) => {
            *out = Box::into_raw(Box::new(PolsenseReport { report }));
            PolsenseStatus::Ok
        }
        Err(e) => fail(PolsenseStatus::RuntimeError, &e.to_string()),
    }
}

/// Number of alarms in a report.
///
/// # Safety
/// `report` must be a live handle; NULL yields 0.
#[no_mangle]
pub unsafe extern "C" fn polsense_report_alarm_count(report: *const PolsenseReport) -> usize {
    if report.is_null() {
        return 0;
    }
    (*report).report.alarms.len()
}

/// Fetches one alarm by index.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polsense_report_alarm(
    report: *const PolsenseReport,
    index: usize,
    out: *mut PolsenseAlarm,
) -> PolsenseStatus {
    if report.is_null() || out.is_null() {
        return fail(PolsenseStatus::InvalidArgument, "report or out is NULL");
    }
    let alarms = &(*report).report.alarms;
    let Some(a) = alarms.get(index) else {
        return fail(PolsenseStatus::InvalidArgument, "alarm index out of range");
    };
    *out = PolsenseAlarm {
        t_s: a.t_s,
        class: match a.class {
            AlarmClass::PrecursorImpulsive => PolsenseAlarmClass::PrecursorImpulsive,
            AlarmClass::PrecursorSustained => PolsenseAlarmClass::PrecursorSustained,
            AlarmClass::Impulsive => PolsenseAlarmClass::Impulsive,
            AlarmClass::Break => PolsenseAlarmClass::Break,
            AlarmClass::LossOfSignal => PolsenseAlarmClass::LossOfSignal,
        },
        score: a.score,
        run_length_s: a.run_length_s,
    };
    PolsenseStatus::Ok
}

/// Time of the loss-of-signal event, or NaN if none was detected.
///
/// # Safety
/// `report` must be a live handle; NULL yields NaN.
#[no_mangle]
pub unsafe extern "C" fn polsense_report_los_time(report: *const PolsenseReport) -> f64 {
    if report.is_null() {
        return f64::NAN;
    }
    (*report).report.los_time_s.unwrap_or(f64::NAN)
}

/// Releases a report handle.
///
/// # Safety
/// `report` must have come from this library, and must not be used again.
#[no_mangle]
pub unsafe extern "C" fn polsense_report_free(report: *mut PolsenseReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
