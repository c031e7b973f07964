// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! C interface to ctdiff.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `ctdiff_*_new`/`_assemble`/`_collect` call and released with the
//! matching `_free`. Fallible calls return a [`CtdiffStatus`] and write
//! their result through an out pointer; on failure a message is available
//! from [`ctdiff_last_error`] on the same thread. Strings returned to the
//! caller are owned by it and released with [`ctdiff_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctdiff::diff::{DiffParams, META_ENTRY};
use ctdiff::fixtures::builtin_corpus;
use ctdiff::orchestrator::{
    analyze_traces, collect_minivm_traces, program_symbols, AnalysisSettings, ExperimentError,
};
use ctdiff::report::{AnalysisReport, Classification, KnownIssueList, SymbolMap};
use ctdiff::trace::{decode_trace, encode_trace, Trace};
use ctdiff::vm::{assemble, Program};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtdiffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Assemble = 4,
    Execution = 5,
    Trace = 6,
    Analysis = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtdiffClassification {
    None = 0,
    CfOnly = 1,
    MemOnly = 2,
    Both = 3,
}

impl From<Classification> for CtdiffClassification {
    fn from(c: Classification) -> Self {
        match c {
            Classification::None => Self::None,
            Classification::ControlFlowOnly => Self::CfOnly,
            Classification::MemoryOnly => Self::MemOnly,
            Classification::Both => Self::Both,
        }
    }
}

/// An assembled MiniISA program.
pub struct CtdiffProgram {
    program: Program,
    name: String,
}

/// An ordered set of traces, one per run index.
pub struct CtdiffTraceSet {
    traces: Vec<Trace>,
    program_id: String,
    meta: BTreeMap<String, String>,
}

/// An analysis report.
pub struct CtdiffReport {
    report: AnalysisReport,
}

struct Failure(CtdiffStatus, String);

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CtdiffStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtdiffStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {what}"));
            CtdiffStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CtdiffStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(CtdiffStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn owned_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(CtdiffStatus::InvalidArgument, e.to_string()))
}

fn experiment_failure(e: ExperimentError) -> Failure {
    let status = match &e {
        ExperimentError::Assemble(_) => CtdiffStatus::Assemble,
        ExperimentError::Vm { .. } | ExperimentError::Nondeterministic { .. } => {
            CtdiffStatus::Execution
        }
        ExperimentError::Decode { .. }
        | ExperimentError::InvalidTrace { .. }
        | ExperimentError::Trace(_) => CtdiffStatus::Trace,
        ExperimentError::Config(_) => CtdiffStatus::InvalidArgument,
        _ => CtdiffStatus::Analysis,
    };
    Failure(status, e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctdiff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next ctdiff call on the same thread.
#[no_mangle]
pub extern "C" fn ctdiff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from a ctdiff call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Assembles MiniISA source text.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_program_assemble(
    source: *const c_char,
    out: *mut *mut CtdiffProgram,
) -> CtdiffStatus {
    guard(|| {
        let text = str_arg(source, "source")?;
        let program = assemble(text).map_err(|e| Failure(CtdiffStatus::Assemble, e.to_string()))?;
        put(
            out,
            boxed(CtdiffProgram {
                program,
                name: "program".into(),
            }),
        )
    })
}

/// Assembles one of the built-in fixtures by manifest name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_program_fixture(
    name: *const c_char,
    out: *mut *mut CtdiffProgram,
) -> CtdiffStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let fixture = builtin_corpus()
            .into_iter()
            .find(|f| f.entry.name == name)
            .ok_or_else(|| {
                Failure(
                    CtdiffStatus::InvalidArgument,
                    format!("unknown fixture `{name}`"),
                )
            })?;
        let program = assemble(&fixture.source_text)
            .map_err(|e| Failure(CtdiffStatus::Assemble, e.to_string()))?;
        put(
            out,
            boxed(CtdiffProgram {
                program,
                name: fixture.entry.name,
            }),
        )
    })
}

/// # Safety
/// `program` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_program_free(program: *mut CtdiffProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Creates an empty trace set for traces added with
/// [`ctdiff_trace_set_push`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_trace_set_new(out: *mut *mut CtdiffTraceSet) -> CtdiffStatus {
    guard(|| {
        put(
            out,
            boxed(CtdiffTraceSet {
                traces: Vec::new(),
                program_id: "external".into(),
                meta: BTreeMap::new(),
            }),
        )
    })
}

/// Runs `program` under run indices `0..runs` and collects the traces.
///
/// # Safety
/// `program` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_trace_set_collect(
    program: *const CtdiffProgram,
    runs: usize,
    out: *mut *mut CtdiffTraceSet,
) -> CtdiffStatus {
    guard(|| {
        let p = handle(program, "program")?;
        if runs < 2 {
            return Err(Failure(
                CtdiffStatus::InvalidArgument,
                format!("need at least 2 runs, got {runs}"),
            ));
        }
        let traces = collect_minivm_traces(&p.program, runs).map_err(experiment_failure)?;
        let meta = BTreeMap::from([
            ("producer".to_owned(), "minivm".to_owned()),
            (META_ENTRY.to_owned(), format!("{:x}", p.program.entry)),
        ]);
        put(
            out,
            boxed(CtdiffTraceSet {
                traces,
                program_id: p.name.clone(),
                meta,
            }),
        )
    })
}

/// Decodes one trace in text form and appends it to `set`.
///
/// # Safety
/// `set` must be a live handle; `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_trace_set_push(
    set: *mut CtdiffTraceSet,
    text: *const c_char,
) -> CtdiffStatus {
    guard(|| {
        let set = handle_mut(set, "set")?;
        let text = str_arg(text, "text")?;
        let trace = decode_trace(text).map_err(|e| Failure(CtdiffStatus::Trace, e.to_string()))?;
        set.traces.push(trace);
        Ok(())
    })
}

/// Number of traces in `set`; 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_trace_set_len(set: *const CtdiffTraceSet) -> usize {
    set.as_ref().map_or(0, |s| s.traces.len())
}

/// Encodes trace `index` of `set` as text.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_trace_set_encode(
    set: *const CtdiffTraceSet,
    index: usize,
    out: *mut *mut c_char,
) -> CtdiffStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let trace = set.traces.get(index).ok_or_else(|| {
            Failure(
                CtdiffStatus::InvalidArgument,
                format!("index {index} out of range ({} traces)", set.traces.len()),
            )
        })?;
        let text = encode_trace(trace).map_err(|e| Failure(CtdiffStatus::Trace, e.to_string()))?;
        put(out, owned_string(text)?)
    })
}

/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_trace_set_free(set: *mut CtdiffTraceSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Diffs every trace in `set` against run 0 and builds a report.
///
/// `program` (may be NULL) supplies function symbols. `known_issues` (may
/// be NULL) is a known-issue list in text form.
///
/// # Safety
/// `set` must be a live handle, `program` NULL or a live handle,
/// `known_issues` NULL or a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_analyze(
    set: *const CtdiffTraceSet,
    program: *const CtdiffProgram,
    window: usize,
    horizon: usize,
    known_issues: *const c_char,
    out: *mut *mut CtdiffReport,
) -> CtdiffStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let params = DiffParams::new(window, horizon)
            .map_err(|e| Failure(CtdiffStatus::InvalidArgument, e.to_string()))?;
        let symbols = match program.as_ref() {
            Some(p) => program_symbols(&p.program, None),
            None => SymbolMap::default(),
        };
        let known = match opt_str_arg(known_issues, "known_issues")? {
            Some(text) => KnownIssueList::parse(text)
                .map_err(|e| Failure(CtdiffStatus::InvalidArgument, e.to_string()))?,
            None => KnownIssueList::default(),
        };
        let settings = AnalysisSettings {
            diff: &params,
            symbols: &symbols,
            known: &known,
            scope: &[],
        };
        let (report, _) = analyze_traces(
            &set.program_id,
            BTreeMap::new(),
            &set.program_id,
            set.traces.clone(),
            set.meta.clone(),
            settings,
        )
        .map_err(experiment_failure)?;
        put(out, boxed(CtdiffReport { report }))
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_report_classification(
    report: *const CtdiffReport,
    out: *mut CtdiffClassification,
) -> CtdiffStatus {
    guard(|| {
        let r = handle(report, "report")?;
        put(out, r.report.classification.into())
    })
}

/// Number of findings, counting filtered ones only when asked.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_report_finding_count(
    report: *const CtdiffReport,
    include_filtered: bool,
    out: *mut usize,
) -> CtdiffStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let n = if include_filtered {
            r.report.findings.len()
        } else {
            r.report.unfiltered().count()
        };
        put(out, n)
    })
}

/// The report as pretty-printed JSON.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_report_to_json(
    report: *const CtdiffReport,
    out: *mut *mut c_char,
) -> CtdiffStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let text =
            ctdiff::report::render_report(&r.report, ctdiff::report::ReportFormat::Structured);
        put(out, owned_string(text)?)
    })
}

/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctdiff_report_free(report: *mut CtdiffReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
