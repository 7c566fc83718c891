//! C ABI for steering-core: opaque handles, integer status codes, JSON for
//! structured data. Every function is panic-safe and returns `SlStatus`;
//! outputs are written through pointers. Strings returned by this library
//! must be released with `sl_string_free`, handles with their `_free`
//! function.

use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use steering_core::assemblage::{
    assemblage_fidelity, behavior_from_assemblage, validate, Assemblage,
};
use steering_core::exposure::{
    charlie_chsh_povm, chsh_value, ghz_assemblage, noisy_w_assemblage, universal_initial, wire,
    FamilyParams, Wiring,
};
use steering_core::presets::{eq56_witness, ns_lhs_witness};
use steering_core::steering::{
    gms_test, lhs_test, ns_lhs_test, optimal_witness, robustness, to_lhs_test, witness_evaluate,
    MembershipResult, Model, NoiseModel, SteeringError, Witness,
};

/// Status codes returned by every API function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    /// Success.
    SlOk = 0,
    /// Null pointer, malformed JSON or an out-of-range argument.
    SlInvalidArgument = 1,
    /// Structurally valid input rejected by a domain rule (e.g. a
    /// signaling assemblage passed to a membership test).
    SlDomainError = 2,
    /// The embedded SDP solver failed to produce a certified result.
    SlSolverFailure = 3,
    /// Internal panic; the library state is still valid.
    SlInternalError = 4,
}

/// Opaque assemblage handle.
pub struct SlAssemblage {
    inner: Assemblage,
}

/// Opaque steering-witness handle.
pub struct SlWitness {
    inner: Witness,
}

/// Model selector for membership tests and witness extraction.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SlModel {
    SlModelLhs = 0,
    SlModelNsLhs = 1,
    SlModelToLhs = 2,
    SlModelGms = 3,
}

thread_local! {
    static LAST_ERROR: std::cell::RefCell<Option<CString>> =
        const { std::cell::RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SteeringError) -> SlStatus {
    match e {
        SteeringError::SolverFailure(_) | SteeringError::Sdp(_) => SlStatus::SlSolverFailure,
        _ => SlStatus::SlDomainError,
    }
}

fn guard<F: FnOnce() -> SlStatus>(f: F) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            SlStatus::SlInternalError
        }
    }
}

unsafe fn parse_cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

fn to_cstring(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Returns the message of the last error raised on this thread, or null.
/// The pointer stays valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn sl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an assemblage from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn sl_assemblage_from_json(
    json: *const c_char,
    out: *mut *mut SlAssemblage,
) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let Some(text) = parse_cstr(json) else {
            set_error("json argument is null or not UTF-8".into());
            return SlStatus::SlInvalidArgument;
        };
        match serde_json::from_str::<Assemblage>(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlAssemblage { inner }));
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(format!("bad assemblage JSON: {e}"));
                SlStatus::SlInvalidArgument
            }
        }
    })
}

/// Serializes an assemblage to JSON (release with `sl_string_free`).
#[no_mangle]
pub unsafe extern "C" fn sl_assemblage_to_json(
    handle: *const SlAssemblage,
    out: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let json = serde_json::to_string(&(*handle).inner).expect("assemblage serializes");
        *out = to_cstring(json);
        SlStatus::SlOk
    })
}

/// Releases an assemblage handle.
#[no_mangle]
pub unsafe extern "C" fn sl_assemblage_free(handle: *mut SlAssemblage) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// The built-in tripartite GHZ assemblage.
#[no_mangle]
pub unsafe extern "C" fn sl_assemblage_ghz(out: *mut *mut SlAssemblage) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        *out = Box::into_raw(Box::new(SlAssemblage {
            inner: ghz_assemblage(),
        }));
        SlStatus::SlOk
    })
}

/// The built-in noisy-W assemblage with visibility `v` and measurement
/// parameter `eta`.
#[no_mangle]
pub unsafe extern "C" fn sl_assemblage_noisy_w(
    v: c_double,
    eta: c_double,
    out: *mut *mut SlAssemblage,
) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let params = match FamilyParams::new(v, eta) {
            Ok(p) => p,
            Err(e) => {
                set_error(e.to_string());
                return SlStatus::SlInvalidArgument;
            }
        };
        match noisy_w_assemblage(params) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlAssemblage { inner }));
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                SlStatus::SlDomainError
            }
        }
    })
}

/// Validates an assemblage: PSD elements, normalization, no-signaling.
#[no_mangle]
pub unsafe extern "C" fn sl_assemblage_validate(
    handle: *const SlAssemblage,
    all_ok: *mut c_int,
    max_violation: *mut c_double,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || all_ok.is_null() || max_violation.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let report = validate(&(*handle).inner);
        *all_ok = report.all_ok() as c_int;
        *max_violation = report.max_violation;
        SlStatus::SlOk
    })
}

/// Applies the y = a wiring to a tripartite assemblage.
#[no_mangle]
pub unsafe extern "C" fn sl_wire(
    handle: *const SlAssemblage,
    out: *mut *mut SlAssemblage,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match wire(&(*handle).inner, Wiring::default()) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlAssemblage { inner }));
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                SlStatus::SlDomainError
            }
        }
    })
}

/// The universal LHS-member initial assemblage whose wiring reproduces the
/// given bipartite target.
#[no_mangle]
pub unsafe extern "C" fn sl_universal_initial(
    target: *const SlAssemblage,
    out: *mut *mut SlAssemblage,
) -> SlStatus {
    guard(|| {
        if target.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match universal_initial(&(*target).inner) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlAssemblage { inner }));
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                SlStatus::SlDomainError
            }
        }
    })
}

fn run_membership(
    handle: &Assemblage,
    model: SlModel,
) -> Result<MembershipResult, SteeringError> {
    match model {
        SlModel::SlModelLhs => lhs_test(handle),
        SlModel::SlModelNsLhs => ns_lhs_test(handle),
        SlModel::SlModelToLhs => to_lhs_test(handle),
        SlModel::SlModelGms => gms_test(handle),
    }
}

/// Membership test against the chosen model. `member` receives 0/1,
/// `optimum` the SDP optimum (nonnegative for members up to tolerance).
#[no_mangle]
pub unsafe extern "C" fn sl_membership_test(
    handle: *const SlAssemblage,
    model: SlModel,
    member: *mut c_int,
    optimum: *mut c_double,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || member.is_null() || optimum.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match run_membership(&(*handle).inner, model) {
            Ok(res) => {
                *member = res.member as c_int;
                *optimum = res.optimum;
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Full membership report (verdict, optimum, certificate, diagnostics) as
/// JSON (release with `sl_string_free`).
#[no_mangle]
pub unsafe extern "C" fn sl_membership_report_json(
    handle: *const SlAssemblage,
    model: SlModel,
    out: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match run_membership(&(*handle).inner, model) {
            Ok(res) => {
                *out = to_cstring(res.to_json().to_string());
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// LHS-noise steering robustness.
#[no_mangle]
pub unsafe extern "C" fn sl_robustness(
    handle: *const SlAssemblage,
    out: *mut c_double,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match robustness(&(*handle).inner, NoiseModel::Lhs) {
            Ok(r) => {
                *out = r;
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// CHSH value of a bipartite assemblage under the built-in trusted bases.
#[no_mangle]
pub unsafe extern "C" fn sl_chsh(handle: *const SlAssemblage, out: *mut c_double) -> SlStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let beh = match behavior_from_assemblage(&(*handle).inner, &charlie_chsh_povm()) {
            Ok(b) => b,
            Err(e) => {
                set_error(e.to_string());
                return SlStatus::SlDomainError;
            }
        };
        match chsh_value(&beh) {
            Ok(s) => {
                *out = s;
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                SlStatus::SlDomainError
            }
        }
    })
}

/// Fidelity between two assemblages of the same scenario.
#[no_mangle]
pub unsafe extern "C" fn sl_fidelity(
    a1: *const SlAssemblage,
    a2: *const SlAssemblage,
    out: *mut c_double,
) -> SlStatus {
    guard(|| {
        if a1.is_null() || a2.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match assemblage_fidelity(&(*a1).inner, &(*a2).inner) {
            Ok(f) => {
                *out = f;
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                SlStatus::SlDomainError
            }
        }
    })
}

/// The built-in bound-1 bipartite steering witness.
#[no_mangle]
pub unsafe extern "C" fn sl_witness_eq56(out: *mut *mut SlWitness) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        *out = Box::into_raw(Box::new(SlWitness {
            inner: eq56_witness(),
        }));
        SlStatus::SlOk
    })
}

/// The built-in tripartite NS-LHS table witness.
#[no_mangle]
pub unsafe extern "C" fn sl_witness_ns_lhs(out: *mut *mut SlWitness) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        *out = Box::into_raw(Box::new(SlWitness {
            inner: ns_lhs_witness(),
        }));
        SlStatus::SlOk
    })
}

/// Parses a witness from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn sl_witness_from_json(
    json: *const c_char,
    out: *mut *mut SlWitness,
) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let Some(text) = parse_cstr(json) else {
            set_error("json argument is null or not UTF-8".into());
            return SlStatus::SlInvalidArgument;
        };
        match serde_json::from_str::<Witness>(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlWitness { inner }));
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(format!("bad witness JSON: {e}"));
                SlStatus::SlInvalidArgument
            }
        }
    })
}

/// Serializes a witness to JSON (release with `sl_string_free`).
#[no_mangle]
pub unsafe extern "C" fn sl_witness_to_json(
    w: *const SlWitness,
    out: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        if w.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let json = serde_json::to_string(&(*w).inner).expect("witness serializes");
        *out = to_cstring(json);
        SlStatus::SlOk
    })
}

/// Releases a witness handle.
#[no_mangle]
pub unsafe extern "C" fn sl_witness_free(w: *mut SlWitness) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Extracts the optimal witness for the LHS or NS-LHS model from the
/// membership dual (models TO-LHS/GMS are not supported here).
#[no_mangle]
pub unsafe extern "C" fn sl_optimal_witness(
    handle: *const SlAssemblage,
    model: SlModel,
    out: *mut *mut SlWitness,
) -> SlStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        let m = match model {
            SlModel::SlModelLhs => Model::Lhs,
            SlModel::SlModelNsLhs => Model::NsLhs,
            _ => {
                set_error("optimal witness supports the LHS and NS-LHS models".into());
                return SlStatus::SlInvalidArgument;
            }
        };
        match optimal_witness(&(*handle).inner, m) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlWitness { inner }));
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Evaluates a witness: `value` receives the witness value, `violated`
/// 0/1 depending on the witness bound and direction.
#[no_mangle]
pub unsafe extern "C" fn sl_witness_evaluate(
    w: *const SlWitness,
    handle: *const SlAssemblage,
    value: *mut c_double,
    violated: *mut c_int,
) -> SlStatus {
    guard(|| {
        if w.is_null() || handle.is_null() || value.is_null() || violated.is_null() {
            return SlStatus::SlInvalidArgument;
        }
        match witness_evaluate(&(*w).inner, &(*handle).inner) {
            Ok((v, viol)) => {
                *value = v;
                *violated = viol as c_int;
                SlStatus::SlOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}
