//! C ABI over the `noregress` kernel.
//!
//! Every function returns an [`NrStatus`]. On failure a description is kept
//! per thread and can be read with [`nr_last_error`]. Objects cross the
//! boundary as opaque handles that the caller frees with the matching
//! `*_free` function; strings returned through out-parameters are freed with
//! [`nr_string_free`]. Panics are caught at the boundary and reported as
//! [`NrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use noregress::cluster::{inject_fault, Severity};
use noregress::command::{confine, parse};
use noregress::harness::{load_scenario, run_scenario, PolicyKind, Scenario};
use noregress::txn::{Environment, TxnEngine, TxnError, TxnStatus, Writer};
use noregress::{Ablation, Role, RunConfig, SeverityWeights};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Schema = 4,
    InvalidScenario = 5,
    InvalidArgument = 6,
    Parse = 7,
    LintRejected = 8,
    Engine = 9,
    /// A value does not fit the C representation.
    Overflow = 10,
    Panic = 11,
}

/// Confinement role.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NrRole {
    ReadOnly = 0,
    Writer = 1,
}

/// A severity value. `infinite` marks the crash state; otherwise the value
/// is `numer / denom` with `denom > 0`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NrSeverity {
    pub infinite: bool,
    pub numer: i64,
    pub denom: i64,
}

/// A loaded scenario.
pub struct NrScenario(Scenario);

/// A transaction engine over a scenario with its fault injected.
pub struct NrEngine(TxnEngine);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NrStatus, String);

impl Failure {
    fn new(status: NrStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

/// Runs `f`, records its failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NrStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("panic inside noregress");
            NrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(NrStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(NrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn non_null<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(NrStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw()
}

fn to_nr_severity(mu: &Severity) -> Result<NrSeverity, Failure> {
    match mu {
        Severity::Infinite => Ok(NrSeverity { infinite: true, numer: 0, denom: 1 }),
        Severity::Finite(r) => {
            let overflow = || Failure::new(NrStatus::Overflow, format!("severity {mu} does not fit 64 bits"));
            Ok(NrSeverity {
                infinite: false,
                numer: i64::try_from(*r.numer()).map_err(|_| overflow())?,
                denom: i64::try_from(*r.denom()).map_err(|_| overflow())?,
            })
        }
    }
}

fn engine_failure(e: TxnError) -> Failure {
    match e {
        TxnError::LintRejected(v) => Failure(NrStatus::LintRejected, v.reason),
        other => Failure(NrStatus::Engine, other.to_string()),
    }
}

/// Last error message on this thread, or null. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn nr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads and checks a scenario file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nr_scenario_load(path: *const c_char, out: *mut *mut NrScenario) -> NrStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = text(path, "path")?;
        let scenario = load_scenario(Path::new(path)).map_err(|e| {
            let status = match e {
                noregress::harness::LoadError::Io { .. } => NrStatus::Io,
                noregress::harness::LoadError::Schema { .. } => NrStatus::Schema,
                noregress::harness::LoadError::Invalid { .. } => NrStatus::InvalidScenario,
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(NrScenario(scenario)));
        Ok(())
    })
}

/// Frees a scenario. Null is ignored.
///
/// # Safety
/// `s` must come from [`nr_scenario_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nr_scenario_free(s: *mut NrScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs one episode with the scenario's playbook and returns the report as
/// JSON. `ablation` is `"full"`, `"noretry"` or `"naive"`; null means full.
///
/// # Safety
/// `s` must be a live scenario; `ablation` null or a C string; `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn nr_run_episode(
    s: *const NrScenario,
    ablation: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> NrStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let scenario = s.as_ref().ok_or_else(|| Failure::new(NrStatus::NullArgument, "scenario is null"))?;
        let ablation: Ablation = if ablation.is_null() {
            Ablation::Full
        } else {
            text(ablation, "ablation")?.parse().map_err(|e: String| Failure(NrStatus::InvalidArgument, e))?
        };
        let config = RunConfig { ablation, seed, ..RunConfig::default() };
        let report =
            run_scenario(&scenario.0, 0, &PolicyKind::Scripted, &config).map_err(|e| Failure(NrStatus::Engine, e.to_string()))?;
        let json = serde_json::to_string(&report).map_err(|e| Failure(NrStatus::Engine, e.to_string()))?;
        *out_json = to_c_string(json);
        Ok(())
    })
}

/// Confinement check. Writes whether the command is allowed and, when
/// blocked, the exact reason (null when allowed).
///
/// # Safety
/// `command` must be a C string; both out-parameters writable.
#[no_mangle]
pub unsafe extern "C" fn nr_lint(
    command: *const c_char,
    role: NrRole,
    out_allowed: *mut bool,
    out_reason: *mut *mut c_char,
) -> NrStatus {
    guard(|| {
        non_null(out_allowed, "out_allowed")?;
        non_null(out_reason, "out_reason")?;
        let command = text(command, "command")?;
        let role = match role {
            NrRole::ReadOnly => Role::ReadOnly,
            NrRole::Writer => Role::Writer,
        };
        let verdict = confine(command, role);
        *out_allowed = verdict.allowed;
        *out_reason = if verdict.allowed { ptr::null_mut() } else { to_c_string(verdict.reason) };
        Ok(())
    })
}

/// Creates an engine over the scenario's faulted state with weights 1,1,1.
///
/// # Safety
/// `s` must be a live scenario; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_new(s: *const NrScenario, out: *mut *mut NrEngine) -> NrStatus {
    guard(|| {
        non_null(out, "out")?;
        let scenario = &s.as_ref().ok_or_else(|| Failure::new(NrStatus::NullArgument, "scenario is null"))?.0;
        let rules = scenario.rules();
        let state = inject_fault(&rules, &scenario.initial_state(), &scenario.fault)
            .map_err(|e| Failure(NrStatus::InvalidScenario, e.to_string()))?;
        let engine = TxnEngine::new(Environment::new(rules, state, SeverityWeights::default()));
        *out = Box::into_raw(Box::new(NrEngine(engine)));
        Ok(())
    })
}

/// Frees an engine. Null is ignored.
///
/// # Safety
/// `e` must come from [`nr_engine_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_free(e: *mut NrEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

unsafe fn engine<'a>(e: *mut NrEngine) -> Result<&'a mut TxnEngine, Failure> {
    e.as_mut().map(|e| &mut e.0).ok_or_else(|| Failure::new(NrStatus::NullArgument, "engine is null"))
}

/// Current severity.
///
/// # Safety
/// `e` must be a live engine; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_severity(e: *mut NrEngine, out: *mut NrSeverity) -> NrStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = to_nr_severity(&engine(e)?.env().severity())?;
        Ok(())
    })
}

/// Opens a mitigation transaction with window `k`.
///
/// # Safety
/// `e` must be a live engine.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_begin(e: *mut NrEngine, k: usize) -> NrStatus {
    guard(|| engine(e)?.begin(Writer::Mitigation, k).map(drop).map_err(engine_failure))
}

/// Executes one command in the open transaction and reports the severity
/// afterwards.
///
/// # Safety
/// `e` must be a live engine; `command` a C string; `out_mu` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_step(e: *mut NrEngine, command: *const c_char, out_mu: *mut NrSeverity) -> NrStatus {
    guard(|| {
        let cmd = parse(text(command, "command")?).map_err(|err| Failure(NrStatus::Parse, err.to_string()))?;
        let obs = engine(e)?.step(&cmd).map_err(engine_failure)?;
        if !out_mu.is_null() {
            *out_mu = to_nr_severity(&obs.mu)?;
        }
        Ok(())
    })
}

/// Commits the transaction if severity did not rise, otherwise undoes it.
/// Writes whether it committed.
///
/// # Safety
/// `e` must be a live engine; `out_committed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_finalize(e: *mut NrEngine, out_committed: *mut bool) -> NrStatus {
    guard(|| {
        let summary = engine(e)?.finalize().map_err(engine_failure)?;
        if !out_committed.is_null() {
            *out_committed = summary.status == TxnStatus::Committed;
        }
        Ok(())
    })
}

/// Aborts and undoes the open transaction.
///
/// # Safety
/// `e` must be a live engine.
#[no_mangle]
pub unsafe extern "C" fn nr_engine_abort(e: *mut NrEngine) -> NrStatus {
    guard(|| engine(e)?.abort().map(drop).map_err(engine_failure))
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn nr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
