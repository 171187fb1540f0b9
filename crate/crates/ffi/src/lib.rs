//! C ABI over the equilibrium solver.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released with the matching `*_free`. Every fallible function
//! returns an [`EirStatus`]; on failure, [`eir_last_error`] describes the
//! problem until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use eir_eq::market::{validate, MarketDesign, MarketInstance};
use eir_eq::model::{MarketModel, RiskForm};
use eir_eq::oracle::{check_equilibrium, money_balance, MONEY_TOL};
use eir_eq::solver::{solve_model, SolveOptions, SolveReport, SolveStatus};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EirStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidInstance = 4,
    NotConverged = 5,
    NotCertified = 6,
    OutOfRange = 7,
    UnknownName = 8,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EirDesignKind {
    Emo = 0,
    Emir = 1,
    EmoLf = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EirSolveOptions {
    pub tol: f64,
    pub max_iters: u32,
    pub restarts: u32,
    pub seed: u64,
}

/// Opaque market instance.
pub struct EirInstance {
    inner: MarketInstance,
}

/// Opaque solved equilibrium, with the model it was solved on.
pub struct EirSolution {
    model: MarketModel,
    report: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: EirStatus, msg: impl Into<String>) -> EirStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`EirStatus::Internal`].
fn guard(f: impl FnOnce() -> EirStatus) -> EirStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(EirStatus::Internal, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, EirStatus> {
    if p.is_null() {
        return Err(fail(EirStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(EirStatus::InvalidUtf8, e.to_string()))
}

macro_rules! handle {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(h) => h,
            None => return fail(EirStatus::NullPointer, "null handle"),
        }
    };
}

macro_rules! out {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(o) => o,
            None => return fail(EirStatus::NullPointer, "null output pointer"),
        }
    };
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn eir_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eir_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn eir_solve_options_default() -> EirSolveOptions {
    let d = SolveOptions::default();
    EirSolveOptions {
        tol: d.tol,
        max_iters: d.max_iters as u32,
        restarts: d.restarts as u32,
        seed: d.seed,
    }
}

/// Parses and validates a JSON instance.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eir_instance_from_json(json: *const c_char, out: *mut *mut EirInstance) -> EirStatus {
    guard(|| {
        let out = out!(out);
        *out = ptr::null_mut();
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let inst = match MarketInstance::from_json(text) {
            Ok(i) => i,
            Err(eir_eq::Error::Invalid(v)) => {
                let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                return fail(EirStatus::InvalidInstance, msg.join("; "));
            }
            Err(e) => return fail(EirStatus::Parse, e.to_string()),
        };
        *out = Box::into_raw(Box::new(EirInstance { inner: inst }));
        EirStatus::Ok
    })
}

/// Serializes an instance; free the result with [`eir_string_free`].
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eir_instance_to_json(inst: *const EirInstance, out: *mut *mut c_char) -> EirStatus {
    guard(|| {
        let inst = handle!(inst);
        let out = out!(out);
        *out = CString::new(inst.inner.to_json()).expect("json has no nul").into_raw();
        EirStatus::Ok
    })
}

/// Replaces the market design. `k` is ignored unless the design is EMIR and
/// `fer` is ignored for energy-only.
///
/// # Safety
/// `inst` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eir_instance_set_design(
    inst: *mut EirInstance,
    kind: EirDesignKind,
    k: f64,
    fer: f64,
) -> EirStatus {
    guard(|| {
        let inst = out!(inst);
        let design = match kind {
            EirDesignKind::Emo => MarketDesign::Emo,
            EirDesignKind::Emir => MarketDesign::Emir { k, fer },
            EirDesignKind::EmoLf => MarketDesign::EmoLf { fer },
        };
        revalidate(inst, inst.inner.with_design(design))
    })
}

/// Sets every generator's risk level.
///
/// # Safety
/// `inst` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eir_instance_set_generator_alpha(inst: *mut EirInstance, alpha: f64) -> EirStatus {
    guard(|| {
        let inst = out!(inst);
        revalidate(inst, inst.inner.with_generator_alpha(alpha))
    })
}

/// # Safety
/// `inst` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eir_instance_set_demand_alpha(inst: *mut EirInstance, alpha: f64) -> EirStatus {
    guard(|| {
        let inst = out!(inst);
        revalidate(inst, inst.inner.with_demand_alpha(alpha))
    })
}

fn revalidate(inst: &mut EirInstance, next: MarketInstance) -> EirStatus {
    let v = validate(&next);
    if !v.is_empty() {
        let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return fail(EirStatus::InvalidInstance, msg.join("; "));
    }
    inst.inner = next;
    EirStatus::Ok
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eir_instance_free(inst: *mut EirInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Solves the CVaR equilibrium from the default start. A handle is produced
/// whenever the solver ran; the status is [`EirStatus::NotConverged`] if it
/// did not reach the tolerance. `opts` may be null for defaults.
///
/// # Safety
/// `inst` must be a live handle; `opts` null or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eir_solve(
    inst: *const EirInstance,
    opts: *const EirSolveOptions,
    out: *mut *mut EirSolution,
) -> EirStatus {
    guard(|| {
        let inst = handle!(inst);
        let out = out!(out);
        *out = ptr::null_mut();
        let mut o = SolveOptions::default();
        if let Some(c) = opts.as_ref() {
            if !(c.tol > 0.0) || c.max_iters == 0 {
                return fail(EirStatus::OutOfRange, "tol must be positive and max_iters at least 1");
            }
            o.tol = c.tol;
            o.max_iters = c.max_iters as usize;
            o.restarts = c.restarts as usize;
            o.seed = c.seed;
        }
        let model = match MarketModel::assemble(&inst.inner, RiskForm::Cvar) {
            Ok(m) => m,
            Err(e) => return fail(EirStatus::InvalidInstance, e.to_string()),
        };
        let report = match solve_model(&model, &o) {
            Ok(r) => r,
            Err(e) => return fail(EirStatus::Internal, e.to_string()),
        };
        let status = report.status;
        let error = report.error;
        *out = Box::into_raw(Box::new(EirSolution { model, report }));
        if status == SolveStatus::Converged {
            EirStatus::Ok
        } else {
            fail(EirStatus::NotConverged, format!("{status:?}, complementarity error {error:e}"))
        }
    })
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_free(sol: *mut EirSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Complementarity error of the solved point.
///
/// # Safety
/// `sol` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_error(sol: *const EirSolution, out: *mut f64) -> EirStatus {
    guard(|| {
        let sol = handle!(sol);
        *out!(out) = sol.report.error;
        EirStatus::Ok
    })
}

/// Checks every agent's best response and the money balance. Writes the
/// largest best-response gap to `max_gap` (if non-null).
///
/// # Safety
/// `sol` must be a live handle; `max_gap` null or writable.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_certify(sol: *const EirSolution, max_gap: *mut f64) -> EirStatus {
    guard(|| {
        let sol = handle!(sol);
        let z = &sol.report.point;
        let br = match check_equilibrium(&sol.model, z) {
            Ok(b) => b,
            Err(e) => return fail(EirStatus::NotCertified, e.to_string()),
        };
        if let Some(g) = max_gap.as_mut() {
            *g = br.max_gap;
        }
        let money = match money_balance(&sol.model, z) {
            Ok(m) => m.into_iter().fold(0.0_f64, |a, x| a.max(x.abs())),
            Err(e) => return fail(EirStatus::NotCertified, e.to_string()),
        };
        if !sol.report.converged() {
            fail(EirStatus::NotConverged, "solution did not converge")
        } else if !br.certified || money > MONEY_TOL {
            fail(
                EirStatus::NotCertified,
                format!(
                    "max gap {:e}, clearing violation {:e}, money residual {money:e}",
                    br.max_gap, br.clearing_violation
                ),
            )
        } else {
            EirStatus::Ok
        }
    })
}

/// Aggregate results of a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EirSummary {
    pub lam_da: f64,
    pub expected_lam_rt: f64,
    pub rho: f64,
    pub lam_lf: f64,
    pub total_v_da: f64,
    pub total_g_da: f64,
    pub total_e: f64,
    pub d_da: f64,
}

/// # Safety
/// `sol` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_summary(sol: *const EirSolution, out: *mut EirSummary) -> EirStatus {
    guard(|| {
        let sol = handle!(sol);
        let v = sol.model.view(&sol.report.point);
        *out!(out) = EirSummary {
            lam_da: v.lam_da(),
            expected_lam_rt: v.expected_lam_rt(),
            rho: v.rho(),
            lam_lf: v.lam_lf(),
            total_v_da: v.total_v_da(),
            total_g_da: v.total_g_da(),
            total_e: v.total_e(),
            d_da: v.d_da(),
        };
        EirStatus::Ok
    })
}

/// Copies the real-time prices into `buf`. `len` is the capacity on entry
/// and the number of scenarios on return; if the buffer is too small nothing
/// is copied and the status is [`EirStatus::OutOfRange`].
///
/// # Safety
/// `sol` must be a live handle; `len` writable; `buf` valid for `*len` doubles.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_lam_rt(sol: *const EirSolution, buf: *mut f64, len: *mut usize) -> EirStatus {
    guard(|| {
        let sol = handle!(sol);
        let len = out!(len);
        let prices = sol.model.view(&sol.report.point).lam_rt_all();
        let cap = *len;
        *len = prices.len();
        if cap < prices.len() || buf.is_null() {
            return fail(EirStatus::OutOfRange, format!("need room for {} prices", prices.len()));
        }
        std::slice::from_raw_parts_mut(buf, prices.len()).copy_from_slice(&prices);
        EirStatus::Ok
    })
}

/// Value of a variable by name, e.g. `"lam_da"` or `"g_da[1]"`.
///
/// # Safety
/// `sol` must be a live handle; `name` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_variable(
    sol: *const EirSolution,
    name: *const c_char,
    out: *mut f64,
) -> EirStatus {
    guard(|| {
        let sol = handle!(sol);
        let out = out!(out);
        let name = match str_arg(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        match sol.model.system().index_of(name) {
            Some(j) => {
                *out = sol.report.point[j];
                EirStatus::Ok
            }
            None => fail(EirStatus::UnknownName, format!("no variable named '{name}'")),
        }
    })
}

/// Every variable by name as a JSON object; free with [`eir_string_free`].
///
/// # Safety
/// `sol` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eir_solution_to_json(sol: *const EirSolution, out: *mut *mut c_char) -> EirStatus {
    guard(|| {
        let sol = handle!(sol);
        let out = out!(out);
        let vars: serde_json::Map<String, serde_json::Value> = sol
            .model
            .system()
            .variables()
            .iter()
            .zip(&sol.report.point)
            .map(|(v, &x)| (v.name.clone(), serde_json::Value::from(x)))
            .collect();
        let text = serde_json::to_string(&vars).expect("finite values serialize");
        *out = CString::new(text).expect("json has no nul").into_raw();
        EirStatus::Ok
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eir_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
