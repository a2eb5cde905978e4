//! C interface to `bitmat`.
//!
//! Data and fits live behind opaque handles that the caller releases with
//! the matching `_free` function. Every fallible call returns a
//! [`BitmatStatus`]; on failure the message is available from
//! [`bitmat_last_error`] until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bitmat::connectivity::check_connectivity;
use bitmat::estimator::{fit, FitConfig, FitReport};
use bitmat::inference::{test_difference, wald_interval, InferenceResult, VarianceMethod};
use bitmat::model::{LinearForm, ObservedBinaryMatrix};
use bitmat::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitmatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The design does not identify the parameters.
    NotIdentified = 3,
    /// The computation broke down numerically.
    Numerical = 4,
    Panic = 5,
}

/// Observed cells of a binary matrix.
pub struct BitmatData {
    inner: ObservedBinaryMatrix,
}

/// A fitted model together with the data it was fitted to.
pub struct BitmatFit {
    report: FitReport,
    data: ObservedBinaryMatrix,
}

/// Estimate, standard error, interval and two-sided test of `g = 0`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BitmatInference {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
    pub log10_p_value: f64,
}

impl From<InferenceResult> for BitmatInference {
    fn from(r: InferenceResult) -> Self {
        Self {
            estimate: r.estimate,
            se: r.se,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            z: r.z_stat,
            p_value: r.p_value,
            log10_p_value: r.log10_p_value,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BitmatStatus {
    match e.exit_code() {
        3 => BitmatStatus::NotIdentified,
        4 => BitmatStatus::Numerical,
        _ => BitmatStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (BitmatStatus, String)>) -> BitmatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BitmatStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BitmatStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (BitmatStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BitmatStatus, String) {
    (BitmatStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bitmat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a data handle from `n_obs` cells `(rows[k], cols[k], values[k])`.
///
/// # Safety
/// `rows`, `cols` and `values` must each point to `n_obs` readable elements
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bitmat_data_new(
    n_rows: usize,
    n_cols: usize,
    rows: *const usize,
    cols: *const usize,
    values: *const u8,
    n_obs: usize,
    out: *mut *mut BitmatData,
) -> BitmatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_obs > 0 && (rows.is_null() || cols.is_null() || values.is_null()) {
            return Err(null("cell array"));
        }
        let (r, c, v) = if n_obs == 0 {
            (&[][..], &[][..], &[][..])
        } else {
            (
                std::slice::from_raw_parts(rows, n_obs),
                std::slice::from_raw_parts(cols, n_obs),
                std::slice::from_raw_parts(values, n_obs),
            )
        };
        let entries = (0..n_obs).map(|k| (r[k], c[k], v[k])).collect();
        let inner = ObservedBinaryMatrix::new(n_rows, n_cols, entries).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BitmatData { inner }));
        Ok(())
    })
}

/// Releases a data handle. Null is ignored.
///
/// # Safety
/// `data` must come from [`bitmat_data_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bitmat_data_free(data: *mut BitmatData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Writes the number of connected components of the row/column graph.
/// The parameters are identified exactly when it is one.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bitmat_data_components(data: *const BitmatData, out: *mut usize) -> BitmatStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = check_connectivity(&data.inner).components.len();
        Ok(())
    })
}

/// Fits the model with default settings and the given seed.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bitmat_fit(data: *const BitmatData, seed: u64, out: *mut *mut BitmatFit) -> BitmatStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = FitConfig {
            seed,
            ..FitConfig::default()
        };
        let report = fit(&data.inner, &config).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BitmatFit {
            report,
            data: data.inner.clone(),
        }));
        Ok(())
    })
}

/// Releases a fit handle. Null is ignored.
///
/// # Safety
/// `fit` must come from [`bitmat_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bitmat_fit_free(fit: *mut BitmatFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Writes 1 when the fit is certified optimal and every estimate exists.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bitmat_fit_converged(fit: *const BitmatFit, out: *mut i32) -> BitmatStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = i32::from(fit.report.converged);
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (BitmatStatus, String)> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len != src.len() {
        return Err((
            BitmatStatus::InvalidArgument,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
    Ok(())
}

/// Copies the `N` row effects into `buf`, which must hold exactly `len = N`.
///
/// # Safety
/// `fit` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn bitmat_fit_theta(fit: *const BitmatFit, buf: *mut f64, len: usize) -> BitmatStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(&fit.report.params.theta, buf, len)
    })
}

/// Copies the `J` column effects into `buf`, which must hold exactly
/// `len = J`.
///
/// # Safety
/// `fit` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn bitmat_fit_beta(fit: *const BitmatFit, buf: *mut f64, len: usize) -> BitmatStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(&fit.report.params.beta, buf, len)
    })
}

/// Plug-in Wald inference for `g = sum w_i theta_i + sum v_j beta_j`.
///
/// # Safety
/// `fit` must be a live handle, `row_weights` readable for `n_rows`
/// values, `col_weights` for `n_cols` values, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bitmat_wald(
    fit: *const BitmatFit,
    row_weights: *const f64,
    n_rows: usize,
    col_weights: *const f64,
    n_cols: usize,
    level: f64,
    out: *mut BitmatInference,
) -> BitmatStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if row_weights.is_null() || col_weights.is_null() || out.is_null() {
            return Err(null("weights or out"));
        }
        if n_rows != fit.data.n_rows() || n_cols != fit.data.n_cols() {
            return Err((
                BitmatStatus::InvalidArgument,
                format!(
                    "weights are {n_rows} x {n_cols}, fit is {} x {}",
                    fit.data.n_rows(),
                    fit.data.n_cols()
                ),
            ));
        }
        let g = LinearForm::new(
            std::slice::from_raw_parts(row_weights, n_rows).to_vec(),
            std::slice::from_raw_parts(col_weights, n_cols).to_vec(),
        );
        let r = wald_interval(&g, &fit.report, &fit.data, level, VarianceMethod::PlugIn, None).map_err(lib_err)?;
        *out = r.into();
        Ok(())
    })
}

/// Two-sided z-test of `theta_i = theta_k`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bitmat_test_difference(
    fit: *const BitmatFit,
    i: usize,
    k: usize,
    level: f64,
    out: *mut BitmatInference,
) -> BitmatStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = test_difference(i, k, &fit.report, &fit.data, level).map_err(lib_err)?;
        *out = r.into();
        Ok(())
    })
}
