//! C ABI for the multisym workbench: opaque theory handles, error
//! codes matching the CLI exit codes, and JSON report strings.
//!
//! Every function that can fail returns an `int` status; `ms_last_error`
//! retrieves a thread-local message for the most recent failure.
//! Strings returned through out-parameters are owned by the caller and
//! must be released with `ms_string_free`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::path::Path;

use multisym::cli::{build_theory, execute, Command, Flags, Report, TheorySpec};

/// Success.
pub const MS_OK: c_int = 0;
/// At least one verified identity failed.
pub const MS_ERR_IDENTITY: c_int = 1;
/// Bad input: file, schema, expression or dimension error.
pub const MS_ERR_INPUT: c_int = 2;
/// Numeric failure (Newton divergence, CFL violation, ...).
pub const MS_ERR_NUMERIC: c_int = 3;
/// Null pointer or malformed UTF-8 argument.
pub const MS_ERR_ARGUMENT: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Opaque handle to a validated theory specification.
pub struct MsTheory {
    spec: TheorySpec,
}

/// # Safety
/// `text` must be a valid NUL-terminated string or null.
unsafe fn read_str<'a>(text: *const c_char) -> Result<&'a str, c_int> {
    if text.is_null() {
        set_error("null string argument");
        return Err(MS_ERR_ARGUMENT);
    }
    CStr::from_ptr(text).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        MS_ERR_ARGUMENT
    })
}

fn install_theory(spec: TheorySpec, out: *mut *mut MsTheory) -> c_int {
    // Validate everything up front so later calls cannot hit parse
    // errors.
    if let Err(e) = build_theory(&spec) {
        set_error(&e.to_string());
        return MS_ERR_INPUT;
    }
    let handle = Box::into_raw(Box::new(MsTheory { spec }));
    unsafe { *out = handle };
    clear_error();
    MS_OK
}

/// Parse a theory spec from a JSON string. On success stores a new
/// handle in `out` and returns `MS_OK`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_theory_from_json(
    json: *const c_char,
    out: *mut *mut MsTheory,
) -> c_int {
    if out.is_null() {
        set_error("null out-parameter");
        return MS_ERR_ARGUMENT;
    }
    let text = match read_str(json) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let spec: TheorySpec = match serde_json::from_str(text) {
        Ok(s) => s,
        Err(e) => {
            set_error(&format!("schema violation: {e}"));
            return MS_ERR_INPUT;
        }
    };
    if spec.lagrangian.is_none() && spec.hamiltonian.is_none() {
        set_error("at least one of `lagrangian` and `hamiltonian` must be present");
        return MS_ERR_INPUT;
    }
    install_theory(spec, out)
}

/// Load a theory spec from a JSON file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_theory_load(
    path: *const c_char,
    out: *mut *mut MsTheory,
) -> c_int {
    if out.is_null() {
        set_error("null out-parameter");
        return MS_ERR_ARGUMENT;
    }
    let text = match read_str(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    match multisym::cli::load_spec(Path::new(text)) {
        Ok(spec) => install_theory(spec, out),
        Err(e) => {
            set_error(&e.to_string());
            MS_ERR_INPUT
        }
    }
}

/// Release a theory handle. Passing null is a no-op.
///
/// # Safety
/// `theory` must have come from `ms_theory_load`/`ms_theory_from_json`
/// and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_theory_free(theory: *mut MsTheory) {
    if !theory.is_null() {
        drop(Box::from_raw(theory));
    }
}

/// The theory's name as a newly allocated string (release with
/// `ms_string_free`). Returns null on a null handle.
///
/// # Safety
/// `theory` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn ms_theory_name(theory: *const MsTheory) -> *mut c_char {
    if theory.is_null() {
        return std::ptr::null_mut();
    }
    CString::new((*theory).spec.name.clone())
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

fn run_command(spec: &TheorySpec, command: &str) -> Result<Report, (c_int, String)> {
    let command = match command {
        "derive" => Command::Derive,
        "classify" => Command::Classify,
        "verify" => Command::Verify,
        "solve" => Command::Solve,
        other => {
            return Err((
                MS_ERR_ARGUMENT,
                format!("unknown command `{other}` (expected derive|classify|verify|solve)"),
            ))
        }
    };
    execute(command, spec, &Flags::default())
        .map_err(|e| (e.exit_code() as c_int, e.to_string()))
}

/// Run `derive`, `classify`, `verify` or `solve` against a theory and
/// store the JSON report in `report_out` (release with
/// `ms_string_free`). The return value mirrors the CLI exit codes:
/// `MS_OK`, `MS_ERR_IDENTITY` (report still written), `MS_ERR_INPUT`
/// or `MS_ERR_NUMERIC`.
///
/// # Safety
/// `theory` must be a valid handle; `command` NUL-terminated;
/// `report_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_run(
    theory: *const MsTheory,
    command: *const c_char,
    report_out: *mut *mut c_char,
) -> c_int {
    if theory.is_null() || report_out.is_null() {
        set_error("null argument");
        return MS_ERR_ARGUMENT;
    }
    let command = match read_str(command) {
        Ok(t) => t,
        Err(code) => return code,
    };
    match run_command(&(*theory).spec, command) {
        Ok(report) => {
            let json = report.to_json();
            match CString::new(json) {
                Ok(c) => {
                    *report_out = c.into_raw();
                    let code = report.exit_code() as c_int;
                    if code == MS_OK {
                        clear_error();
                    } else {
                        set_error("one or more identities failed; see report");
                    }
                    code
                }
                Err(_) => {
                    set_error("report contained an interior NUL byte");
                    MS_ERR_INPUT
                }
            }
        }
        Err((code, message)) => {
            set_error(&message);
            code
        }
    }
}

/// Release a string returned by this library. Passing null is a no-op.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn ms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next failing call on the same thread;
/// do not free it.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}
