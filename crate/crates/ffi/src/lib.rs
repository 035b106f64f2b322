//! C interface to bmckit.
//!
//! Objects live behind opaque handles created by `bmc_*_new`-style functions
//! and released with the matching `bmc_*_free`. Every fallible call returns
//! a [`BmcStatus`]; on failure `bmc_last_error()` describes the problem for
//! the calling thread. Kernels cross the boundary as row-major `n * n`
//! arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bmckit::cluster::{cluster_pipeline, misclassification_ratio, ClusterAssignment};
use bmckit::counts::{frequency_matrix, trim};
use bmckit::model::{ClusterModel, StateKernel};
use bmckit::modelsel::{confidence_halfwidth, kl_rate_diff, select_order};
use bmckit::simulate::{sample_bmc, SamplePath, Start};
use bmckit::spectra::{limiting_density, BlockVarianceProfile};
use bmckit::BmcError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    NotErgodic = 4,
    DimensionMismatch = 5,
    SupportMismatch = 6,
    ZeroProbability = 7,
    EmptyCluster = 8,
    NoConvergence = 9,
    Parse = 10,
    Io = 11,
    Panic = 12,
}

/// A cluster model: cluster transition matrix plus state labels.
pub struct BmcModel {
    inner: ClusterModel,
}

/// A sample path over states `0..n`.
pub struct BmcPath {
    inner: SamplePath,
}

/// A hard assignment of states to clusters.
pub struct BmcAssignment {
    inner: ClusterAssignment,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &BmcError) -> BmcStatus {
    match e {
        BmcError::InvalidModel(_) | BmcError::NotStochastic { .. } => BmcStatus::InvalidModel,
        BmcError::NonErgodic(_) => BmcStatus::NotErgodic,
        BmcError::DimensionMismatch { .. } => BmcStatus::DimensionMismatch,
        BmcError::SupportMismatch { .. } => BmcStatus::SupportMismatch,
        BmcError::ZeroProbabilityTransition { .. } | BmcError::MissingRow { .. } => BmcStatus::ZeroProbability,
        BmcError::EmptyCluster(_) | BmcError::ZeroMassCluster(_) => BmcStatus::EmptyCluster,
        BmcError::NoConvergence { .. } => BmcStatus::NoConvergence,
        BmcError::Parse(_) | BmcError::Json(_) => BmcStatus::Parse,
        BmcError::Io(_) => BmcStatus::Io,
        _ => BmcStatus::InvalidArgument,
    }
}

struct Failure(BmcStatus, String);

impl From<BmcError> for Failure {
    fn from(e: BmcError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(BmcStatus::NullPointer, format!("{name} is NULL"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BmcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BmcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            BmcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = value;
    Ok(())
}

unsafe fn kernel(p: *const f64, n: usize, name: &str) -> Result<StateKernel, Failure> {
    let n2 = n.checked_mul(n).ok_or_else(|| Failure(BmcStatus::InvalidArgument, "n too large".into()))?;
    Ok(StateKernel::new(n, input(p, n2, name)?.to_vec())?)
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn bmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a model from `n` state labels and a row-major `m * m` matrix `p`.
///
/// # Safety
/// `sigma` must point to `n` values, `p` to `m * m` values and `out` to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bmc_model_new(
    m: usize,
    sigma: *const usize,
    n: usize,
    p: *const f64,
    out: *mut *mut BmcModel,
) -> BmcStatus {
    guard(|| {
        let sigma = input(sigma, n, "sigma")?.to_vec();
        let flat = input(p, m.saturating_mul(m), "p")?;
        let rows = flat.chunks(m.max(1)).map(<[f64]>::to_vec).collect();
        store(out, BmcModel { inner: ClusterModel::new(m, sigma, rows)? })
    })
}

/// Parses a model from its JSON form (`m`, `sigma`, `p`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_model_from_json(json: *const c_char, out: *mut *mut BmcModel) -> BmcStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(BmcStatus::Parse, e.to_string()))?;
        let inner: ClusterModel = serde_json::from_str(text).map_err(BmcError::from)?;
        store(out, BmcModel { inner })
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bmc_model_free(model: *mut BmcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of states, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bmc_model_n(model: *const BmcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n())
}

/// Number of clusters, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bmc_model_m(model: *const BmcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.m())
}

/// Samples `length` states starting from equilibrium.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_sample(model: *const BmcModel, length: usize, seed: u64, out: *mut *mut BmcPath) -> BmcStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        store(out, BmcPath { inner: sample_bmc(&model.inner, length, Start::Equilibrium, seed)? })
    })
}

/// Wraps `len` state ids in `0..n`.
///
/// # Safety
/// `symbols` must point to `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_path_new(n: usize, symbols: *const usize, len: usize, out: *mut *mut BmcPath) -> BmcStatus {
    guard(|| store(out, BmcPath { inner: SamplePath::new(n, input(symbols, len, "symbols")?.to_vec())? }))
}

/// # Safety
/// `path` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bmc_path_free(path: *mut BmcPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Path length, or 0 for NULL.
///
/// # Safety
/// `path` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bmc_path_len(path: *const BmcPath) -> usize {
    path.as_ref().map_or(0, |p| p.inner.len())
}

/// Copies the state ids into `buf`, which must hold `bmc_path_len` values.
///
/// # Safety
/// `path` must be a live handle and `buf` point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn bmc_path_symbols(path: *const BmcPath, buf: *mut usize, cap: usize) -> BmcStatus {
    guard(|| {
        let path = borrow(path, "path")?;
        let symbols = path.inner.symbols();
        if cap < symbols.len() {
            return Err(Failure(BmcStatus::DimensionMismatch, format!("buffer holds {cap}, need {}", symbols.len())));
        }
        output(buf, symbols.len(), "buf")?.copy_from_slice(symbols);
        Ok(())
    })
}

/// Wraps `n` labels in `0..m`.
///
/// # Safety
/// `labels` must point to `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_assignment_new(m: usize, labels: *const usize, n: usize, out: *mut *mut BmcAssignment) -> BmcStatus {
    guard(|| store(out, BmcAssignment { inner: ClusterAssignment::new(m, input(labels, n, "labels")?.to_vec())? }))
}

/// The model's own clusters.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_assignment_from_model(model: *const BmcModel, out: *mut *mut BmcAssignment) -> BmcStatus {
    guard(|| store(out, BmcAssignment { inner: ClusterAssignment::from_model(&borrow(model, "model")?.inner) }))
}

/// # Safety
/// `assignment` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bmc_assignment_free(assignment: *mut BmcAssignment) {
    if !assignment.is_null() {
        drop(Box::from_raw(assignment));
    }
}

/// Copies the labels into `buf`, which must hold one value per state.
///
/// # Safety
/// `assignment` must be a live handle and `buf` point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn bmc_assignment_labels(assignment: *const BmcAssignment, buf: *mut usize, cap: usize) -> BmcStatus {
    guard(|| {
        let labels = borrow(assignment, "assignment")?.inner.labels();
        if cap < labels.len() {
            return Err(Failure(BmcStatus::DimensionMismatch, format!("buffer holds {cap}, need {}", labels.len())));
        }
        output(buf, labels.len(), "buf")?.copy_from_slice(labels);
        Ok(())
    })
}

/// Trims the `gamma` highest-degree states, then runs spectral clustering and
/// `iterations` improvement passes on the path's transition counts.
///
/// # Safety
/// `path` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_cluster(
    path: *const BmcPath,
    m: usize,
    gamma: usize,
    iterations: usize,
    seed: u64,
    out: *mut *mut BmcAssignment,
) -> BmcStatus {
    guard(|| {
        let path = &borrow(path, "path")?.inner;
        let counts = trim(&frequency_matrix(path)?, gamma)?;
        store(out, BmcAssignment { inner: cluster_pipeline(&counts, path.len(), m, iterations, seed)? })
    })
}

/// Fraction of misclassified states under the best relabelling.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_misclassification(
    truth: *const BmcAssignment,
    estimate: *const BmcAssignment,
    out: *mut f64,
) -> BmcStatus {
    guard(|| {
        let e = misclassification_ratio(&borrow(truth, "truth")?.inner, &borrow(estimate, "estimate")?.inner)?;
        write(out, e)
    })
}

/// Per-step log-likelihood ratio of `p` over `q` along the path.
///
/// # Safety
/// `p` and `q` must each point to `n * n` values, with `n` the path's state
/// count, and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_kl_rate_diff(path: *const BmcPath, p: *const f64, q: *const f64, out: *mut f64) -> BmcStatus {
    guard(|| {
        let path = &borrow(path, "path")?.inner;
        let n = path.n();
        write(out, kl_rate_diff(path, &kernel(p, n, "p")?, &kernel(q, n, "q")?)?)
    })
}

/// Half-width of the confidence interval for the KL rate difference.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bmc_confidence_halfwidth(delta: f64, length: usize, tau_mix: usize, z: f64, out: *mut f64) -> BmcStatus {
    guard(|| write(out, confidence_halfwidth(delta, length, tau_mix, z)?))
}

/// CAIC order selection over `0..=r_max`. `caic` receives `r_max + 1` values
/// and may be NULL.
///
/// # Safety
/// `path` must be a live handle, `out_r` writable and `caic` NULL or
/// pointing to `r_max + 1` writable values.
#[no_mangle]
pub unsafe extern "C" fn bmc_select_order(path: *const BmcPath, r_max: usize, out_r: *mut usize, caic: *mut f64) -> BmcStatus {
    guard(|| {
        let selection = select_order(&borrow(path, "path")?.inner, r_max)?;
        if !caic.is_null() {
            let buf = output(caic, selection.table.len(), "caic")?;
            for (slot, &(_, c)) in buf.iter_mut().zip(&selection.table) {
                *slot = c;
            }
        }
        write(out_r, selection.r)
    })
}

/// Limiting singular-value density of a block variance profile with
/// row-major `m * m` entries `s` and cluster fractions `alpha`, evaluated at
/// `len` grid points.
///
/// # Safety
/// `s` must point to `m * m` values, `alpha` to `m`, `grid` to `len` and
/// `density` to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn bmc_limiting_density(
    s: *const f64,
    alpha: *const f64,
    m: usize,
    grid: *const f64,
    len: usize,
    eta: f64,
    density: *mut f64,
) -> BmcStatus {
    guard(|| {
        let flat = input(s, m.saturating_mul(m), "s")?;
        let rows = flat.chunks(m.max(1)).map(<[f64]>::to_vec).collect();
        let profile = BlockVarianceProfile::new(rows, input(alpha, m, "alpha")?.to_vec())?;
        let result = limiting_density(&profile, input(grid, len, "grid")?, eta)?;
        output(density, len, "density")?.copy_from_slice(&result.density);
        Ok(())
    })
}
