//! C ABI over `misalign-core`.
//!
//! Every fallible function returns a [`MisalignStatus`]; on failure the
//! message is available from [`misalign_last_error_message`] on the same
//! thread. Datasets and reports are opaque handles that must be released
//! with their `_free` function. Strings returned to the caller are released
//! with [`misalign_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use misalign::metrics::MisalignmentReport;
use misalign::perm::{decide, DecisionKind, Method, PermutationConfig, DEFAULT_EXACT_THRESHOLD, DEFAULT_PERMUTATIONS};
use misalign::pipeline::{check_question_sets, run_tests, TestConfig};
use misalign::stats::{ks_statistic, t1_statistic, LogBase};
use misalign::survey::{load_dataset, load_manifest, ContingencyPair, DataFormat, Dataset, RefusedPolicy, Subgroup};
use misalign::{Error, ErrorClass};

/// Result codes. The first four match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisalignStatus {
    Ok = 0,
    /// Bad arguments or configuration.
    Usage = 1,
    /// Input data failed validation.
    Data = 2,
    /// The chat endpoint failed.
    Upstream = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
    /// The requested entry does not exist.
    NotFound = 6,
    /// Internal panic; the handle involved should be discarded.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisalignStatistic {
    T1 = 0,
    KsPermutation = 1,
    KsCritical = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisalignMethod {
    MonteCarlo = 0,
    Exact = 1,
    AsymptoticFormula = 2,
    Table = 3,
}

pub const MISALIGN_STAT_T1: u32 = 1 << 0;
pub const MISALIGN_STAT_KS_PERM: u32 = 1 << 1;
pub const MISALIGN_STAT_KS_CRITICAL: u32 = 1 << 2;

/// Test settings. Initialize with [`misalign_test_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisalignTestConfig {
    pub alpha: f64,
    pub num_permutations: u64,
    pub seed: u64,
    /// Enumerate exactly up to this many count-splits; 0 forces Monte-Carlo.
    pub exact_threshold: u64,
    /// Bitwise OR of `MISALIGN_STAT_*`.
    pub statistics: u32,
    /// Nonzero removes the refused option before testing.
    pub drop_refused: u8,
    /// Nonzero uses natural logarithms for entropy.
    pub entropy_base_e: u8,
    /// Nonzero adds per-question Wasserstein distances to the report.
    pub wasserstein: u8,
    /// Worker threads; 0 uses the default.
    pub jobs: u32,
}

/// One test outcome. Absent p-values / critical values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisalignDecision {
    pub observed: f64,
    pub p_value: f64,
    pub critical_value: f64,
    pub reject: u8,
    pub degenerate: u8,
    pub untestable: u8,
    pub method: MisalignMethod,
}

/// A ratio of rejections to testable pairs. `value` is NaN when `total` is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisalignRatio {
    pub value: f64,
    pub rejections: u64,
    pub total: u64,
}

/// Opaque loaded human + LLM data.
pub struct MisalignDataset(Dataset);

/// Opaque test report.
pub struct MisalignReport(MisalignmentReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MisalignStatus, msg: impl Into<String>) -> MisalignStatus {
    set_last_error(msg);
    status
}

fn from_error(e: Error) -> MisalignStatus {
    let status = match e.class() {
        ErrorClass::Usage => MisalignStatus::Usage,
        ErrorClass::Data => MisalignStatus::Data,
        ErrorClass::Upstream => MisalignStatus::Upstream,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MisalignStatus) -> MisalignStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MisalignStatus::Panic, "internal panic"),
    }
}

/// Borrows a C string argument as `&str`.
///
/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, MisalignStatus> {
    if p.is_null() {
        return Err(fail(MisalignStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MisalignStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn kind_of(s: MisalignStatistic) -> DecisionKind {
    match s {
        MisalignStatistic::T1 => DecisionKind::T1,
        MisalignStatistic::KsPermutation => DecisionKind::KsPermutation,
        MisalignStatistic::KsCritical => DecisionKind::KsCritical,
    }
}

fn method_of(m: Method) -> MisalignMethod {
    match m {
        Method::MonteCarlo => MisalignMethod::MonteCarlo,
        Method::Exact => MisalignMethod::Exact,
        Method::AsymptoticFormula => MisalignMethod::AsymptoticFormula,
        Method::Table => MisalignMethod::Table,
    }
}

fn test_config(c: &MisalignTestConfig) -> Result<TestConfig, MisalignStatus> {
    let statistics: Vec<DecisionKind> = [
        (MISALIGN_STAT_T1, DecisionKind::T1),
        (MISALIGN_STAT_KS_PERM, DecisionKind::KsPermutation),
        (MISALIGN_STAT_KS_CRITICAL, DecisionKind::KsCritical),
    ]
    .into_iter()
    .filter(|(bit, _)| c.statistics & bit != 0)
    .map(|(_, k)| k)
    .collect();
    if statistics.is_empty() {
        return Err(fail(MisalignStatus::Usage, "no statistics selected"));
    }
    Ok(TestConfig {
        alpha: c.alpha,
        statistics,
        num_permutations: c.num_permutations,
        seed: c.seed,
        exact_threshold: c.exact_threshold,
        refused: if c.drop_refused != 0 { RefusedPolicy::Drop } else { RefusedPolicy::Include },
        entropy_base: if c.entropy_base_e != 0 { LogBase::E } else { LogBase::Two },
        wasserstein: c.wasserstein != 0,
        jobs: (c.jobs > 0).then_some(c.jobs as usize),
    })
}

fn permutation_config(c: &MisalignTestConfig) -> PermutationConfig {
    PermutationConfig {
        num_permutations: c.num_permutations,
        seed: c.seed,
        exact_threshold: c.exact_threshold,
        alpha: c.alpha,
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn misalign_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn misalign_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn misalign_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fills `out` with the default settings (alpha 0.05, all statistics).
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn misalign_test_config_default(out: *mut MisalignTestConfig) -> MisalignStatus {
    if out.is_null() {
        return fail(MisalignStatus::NullArgument, "out is null");
    }
    out.write(MisalignTestConfig {
        alpha: 0.05,
        num_permutations: DEFAULT_PERMUTATIONS,
        seed: 0,
        exact_threshold: DEFAULT_EXACT_THRESHOLD,
        statistics: MISALIGN_STAT_T1 | MISALIGN_STAT_KS_PERM | MISALIGN_STAT_KS_CRITICAL,
        drop_refused: 0,
        entropy_base_e: 0,
        wasserstein: 0,
        jobs: 0,
    });
    MisalignStatus::Ok
}

/// Loads a question manifest plus human and LLM response files (aggregated
/// or respondent-level CSV) into a dataset handle.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_dataset_load(
    questions_path: *const c_char,
    human_path: *const c_char,
    llm_path: *const c_char,
    out: *mut *mut MisalignDataset,
) -> MisalignStatus {
    guard(|| {
        if out.is_null() {
            return fail(MisalignStatus::NullArgument, "out is null");
        }
        let (q, h, l) = match (
            arg_str(questions_path, "questions_path"),
            arg_str(human_path, "human_path"),
            arg_str(llm_path, "llm_path"),
        ) {
            (Ok(q), Ok(h), Ok(l)) => (PathBuf::from(q), PathBuf::from(h), PathBuf::from(l)),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let loaded = load_manifest(&q).and_then(|qs| {
            let human = load_dataset(&h, DataFormat::Auto, &qs)?;
            let llm = load_dataset(&l, DataFormat::Auto, &qs)?;
            check_question_sets(&human, &llm)?;
            human.merge(llm)
        });
        match loaded {
            Ok(d) => {
                out.write(Box::into_raw(Box::new(MisalignDataset(d))));
                MisalignStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from [`misalign_dataset_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn misalign_dataset_free(dataset: *mut MisalignDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Runs the configured tests over every pair of `dataset`.
///
/// # Safety
/// `dataset` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_run_tests(
    dataset: *const MisalignDataset,
    config: *const MisalignTestConfig,
    out: *mut *mut MisalignReport,
) -> MisalignStatus {
    guard(|| {
        if dataset.is_null() || config.is_null() || out.is_null() {
            return fail(MisalignStatus::NullArgument, "dataset, config and out must be non-null");
        }
        let cfg = match test_config(&*config) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match run_tests(&(*dataset).0, &cfg) {
            Ok(r) => {
                out.write(Box::into_raw(Box::new(MisalignReport(r))));
                MisalignStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from [`misalign_run_tests`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn misalign_report_free(report: *mut MisalignReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Writes report.json, s_metric.csv, q_metric.csv and decisions.csv into `dir`.
///
/// # Safety
/// `report` must be valid and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn misalign_report_write_dir(report: *const MisalignReport, dir: *const c_char) -> MisalignStatus {
    guard(|| {
        if report.is_null() {
            return fail(MisalignStatus::NullArgument, "report is null");
        }
        let dir = match arg_str(dir, "dir") {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        match (*report).0.write_dir(&dir) {
            Ok(()) => MisalignStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// The report as JSON. Release with [`misalign_string_free`].
///
/// # Safety
/// `report` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_report_to_json(report: *const MisalignReport, out: *mut *mut c_char) -> MisalignStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return fail(MisalignStatus::NullArgument, "report and out must be non-null");
        }
        match (*report).0.to_json() {
            Ok(s) => match CString::new(s) {
                Ok(c) => {
                    out.write(c.into_raw());
                    MisalignStatus::Ok
                }
                Err(_) => fail(MisalignStatus::Panic, "report JSON contains NUL"),
            },
            Err(e) => from_error(e),
        }
    })
}

fn ratio(q: Option<f64>, rejections: u64, total: u64) -> MisalignRatio {
    MisalignRatio {
        value: q.unwrap_or(f64::NAN),
        rejections,
        total,
    }
}

/// S score of `subgroup` (written `dimension:value`) for one statistic.
///
/// # Safety
/// `report` must be valid, `subgroup` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_report_s_metric(
    report: *const MisalignReport,
    subgroup: *const c_char,
    statistic: MisalignStatistic,
    out: *mut MisalignRatio,
) -> MisalignStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return fail(MisalignStatus::NullArgument, "report and out must be non-null");
        }
        let sg: Subgroup = match arg_str(subgroup, "subgroup").map(str::parse) {
            Ok(Ok(s)) => s,
            Ok(Err(e)) => return fail(MisalignStatus::Usage, e),
            Err(s) => return s,
        };
        let kind = kind_of(statistic);
        match (*report).0.s_by_subgroup.iter().find(|r| r.statistic == kind && r.subgroup == sg) {
            Some(r) => {
                out.write(ratio(r.s, r.rejections, r.total));
                MisalignStatus::Ok
            }
            None => fail(MisalignStatus::NotFound, format!("no S score for {sg} / {kind}")),
        }
    })
}

/// Q score of `question_id` for one statistic.
///
/// # Safety
/// `report` must be valid, `question_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_report_q_metric(
    report: *const MisalignReport,
    question_id: *const c_char,
    statistic: MisalignStatistic,
    out: *mut MisalignRatio,
) -> MisalignStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return fail(MisalignStatus::NullArgument, "report and out must be non-null");
        }
        let qid = match arg_str(question_id, "question_id") {
            Ok(q) => q,
            Err(s) => return s,
        };
        let kind = kind_of(statistic);
        match (*report).0.q_by_question.iter().find(|r| r.statistic == kind && r.question == qid) {
            Some(r) => {
                out.write(ratio(r.q, r.rejections, r.total));
                MisalignStatus::Ok
            }
            None => fail(MisalignStatus::NotFound, format!("no Q score for {qid} / {kind}")),
        }
    })
}

/// Builds a pair from two count arrays of length `k`.
///
/// # Safety
/// `human` and `llm` must each point to `k` readable values.
unsafe fn pair_from(human: *const u64, llm: *const u64, k: usize) -> Result<ContingencyPair, MisalignStatus> {
    if human.is_null() || llm.is_null() {
        return Err(fail(MisalignStatus::NullArgument, "count arrays must be non-null"));
    }
    let h = std::slice::from_raw_parts(human, k).to_vec();
    let l = std::slice::from_raw_parts(llm, k).to_vec();
    ContingencyPair::from_counts(h, l).map_err(from_error)
}

/// T1 statistic of two count vectors of length `k`.
///
/// # Safety
/// `human` and `llm` must each point to `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_t1_statistic(human: *const u64, llm: *const u64, k: usize, out: *mut f64) -> MisalignStatus {
    guard(|| {
        if out.is_null() {
            return fail(MisalignStatus::NullArgument, "out is null");
        }
        match pair_from(human, llm, k).map(|p| t1_statistic(&p)) {
            Ok(Ok(v)) => {
                out.write(v.value);
                MisalignStatus::Ok
            }
            Ok(Err(e)) => from_error(e),
            Err(s) => s,
        }
    })
}

/// Two-sample KS statistic of two count vectors of length `k`.
///
/// # Safety
/// `human` and `llm` must each point to `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_ks_statistic(human: *const u64, llm: *const u64, k: usize, out: *mut f64) -> MisalignStatus {
    guard(|| {
        if out.is_null() {
            return fail(MisalignStatus::NullArgument, "out is null");
        }
        match pair_from(human, llm, k).map(|p| ks_statistic(&p)) {
            Ok(Ok(v)) => {
                out.write(v.value);
                MisalignStatus::Ok
            }
            Ok(Err(e)) => from_error(e),
            Err(s) => s,
        }
    })
}

/// Tests one pair with one statistic using the alpha / permutation settings
/// of `config` (its `statistics` field is ignored).
///
/// # Safety
/// Count arrays must hold `k` values; `config` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn misalign_decide(
    human: *const u64,
    llm: *const u64,
    k: usize,
    statistic: MisalignStatistic,
    config: *const MisalignTestConfig,
    out: *mut MisalignDecision,
) -> MisalignStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail(MisalignStatus::NullArgument, "config and out must be non-null");
        }
        let pair = match pair_from(human, llm, k) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match decide(&pair, kind_of(statistic), &permutation_config(&*config)) {
            Ok(d) => {
                out.write(MisalignDecision {
                    observed: d.observed,
                    p_value: d.p_value.unwrap_or(f64::NAN),
                    critical_value: d.critical_value.unwrap_or(f64::NAN),
                    reject: d.reject as u8,
                    degenerate: d.degenerate as u8,
                    untestable: d.untestable as u8,
                    method: method_of(d.method),
                });
                MisalignStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
