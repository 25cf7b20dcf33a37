//! C ABI over `bkt-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`BktStatus`]; on failure the message is available from
//! [`bkt_last_error_message`] on the same thread. Panics are caught and
//! reported as [`BktStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use bkt_core::inference::{gibbs_run, ChainConfig};
use bkt_core::kernel::{median_heuristic, subsample_eval_points};
use bkt_core::{BktError, ChainOutput, Evaluator, JacobianPolicy, KernelParam, PairedDataset, SigmaMethod};
use nalgebra::DMatrix;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BktStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or configuration value is out of range.
    InvalidArgument = 2,
    /// Input data could not be read or is unusable.
    DataError = 3,
    /// A numerical step failed (non-positive-definite matrix, degenerate Jacobian).
    NumericalError = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

/// Paired samples `(x_i, y_i)`.
pub struct BktDataset(PairedDataset);

/// Output of a joint sampler run.
pub struct BktChainOutput(ChainOutput);

/// Sampler settings. Obtain defaults from [`bkt_chain_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BktChainConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub hmc_steps: usize,
    pub leapfrog_steps: usize,
    pub seed: u64,
    pub prior_odds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &BktError) -> BktStatus {
    match e {
        BktError::Config(_) | BktError::InvalidTheta(_) => BktStatus::InvalidArgument,
        BktError::DimensionMismatch { .. }
        | BktError::DegenerateData(_)
        | BktError::Input(_)
        | BktError::Parse { .. }
        | BktError::Io(_)
        | BktError::Json(_) => BktStatus::DataError,
        BktError::SingularCovariance(_)
        | BktError::DegenerateJacobian { .. }
        | BktError::OracleTooLarge(_)
        | BktError::Numerical(_) => BktStatus::NumericalError,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guarded(f: impl FnOnce() -> Result<(), (BktStatus, String)>) -> BktStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BktStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BktStatus::Panic
        }
    }
}

fn core<T>(r: bkt_core::Result<T>) -> Result<T, (BktStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, (BktStatus, String)> {
    // SAFETY: the caller guarantees that a non-null pointer refers to a live object.
    unsafe { p.as_ref() }.ok_or_else(|| (BktStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<&'static mut T, (BktStatus, String)> {
    // SAFETY: the caller guarantees that a non-null pointer is valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| (BktStatus::NullPointer, format!("{name} is null")))
}

fn method_of(sigma_method: u8) -> Result<SigmaMethod, (BktStatus, String)> {
    core(SigmaMethod::from_index(sigma_method))
}

fn evaluator(ds: &BktDataset, s: usize, seed: u64, sigma_method: u8) -> Result<Evaluator, (BktStatus, String)> {
    let z = core(subsample_eval_points(&ds.0, s, seed))?;
    core(Evaluator::new(ds.0.clone(), z, method_of(sigma_method)?, JacobianPolicy::Strict))
}

/// Copies the last error message of this thread into `buf` (nul
/// terminated, truncated to `len`). Returns the full message length
/// without the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn bkt_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn bkt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a dataset from row-major `n x dim` arrays `x` and `y`.
///
/// # Safety
/// `x` and `y` must each be valid for `n * dim` reads; `out` must be valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn bkt_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut BktDataset,
) -> BktStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        non_null(x, "x")?;
        non_null(y, "y")?;
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| (BktStatus::InvalidArgument, "n * dim overflows".to_string()))?;
        let xs = std::slice::from_raw_parts(x, len);
        let ys = std::slice::from_raw_parts(y, len);
        let data = core(PairedDataset::new(
            DMatrix::from_row_slice(n, dim, xs),
            DMatrix::from_row_slice(n, dim, ys),
        ))?;
        *out = Box::into_raw(Box::new(BktDataset(data)));
        Ok(())
    })
}

/// Reads a paired CSV file (header `x1..xD,y1..yD`).
///
/// # Safety
/// `path` must be a valid nul-terminated string; `out` must be valid for a
/// write.
#[no_mangle]
pub unsafe extern "C" fn bkt_dataset_read_csv(path: *const c_char, out: *mut *mut BktDataset) -> BktStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        non_null(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (BktStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let data = core(bkt_core::io::read_paired_csv(Path::new(path)))?;
        *out = Box::into_raw(Box::new(BktDataset(data)));
        Ok(())
    })
}

/// Number of pairs, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bkt_dataset_len(ds: *const BktDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Dimension of each sample, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bkt_dataset_dim(ds: *const BktDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// Frees a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bkt_dataset_free(ds: *mut BktDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Median-heuristic kernel parameter of the pooled sample.
///
/// # Safety
/// `ds` must be a live handle; `theta` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn bkt_median_heuristic(ds: *const BktDataset, theta: *mut f64) -> BktStatus {
    guarded(|| {
        let ds = non_null(ds, "dataset")?;
        let theta = out_ptr(theta, "theta")?;
        *theta = core(median_heuristic(&ds.0))?.theta();
        Ok(())
    })
}

/// Natural log of the Bayes factor (null over alternative) at a fixed
/// `theta`, with `s` evaluation points drawn using `seed`. `sigma_method`
/// is 1 or 2.
///
/// # Safety
/// `ds` must be a live handle; `log_bf` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn bkt_log_bf(
    ds: *const BktDataset,
    s: usize,
    seed: u64,
    sigma_method: u8,
    theta: f64,
    log_bf: *mut f64,
) -> BktStatus {
    guarded(|| {
        let ds = non_null(ds, "dataset")?;
        let log_bf = out_ptr(log_bf, "log_bf")?;
        let p = core(KernelParam::new(theta))?;
        *log_bf = core(evaluator(ds, s, seed, sigma_method)?.log_bf(p))?;
        Ok(())
    })
}

/// Default sampler settings.
#[no_mangle]
pub extern "C" fn bkt_chain_config_default() -> BktChainConfig {
    let d = ChainConfig::default();
    BktChainConfig {
        iters: d.m_tilde,
        burnin: d.burnin,
        thin: d.thin,
        hmc_steps: d.n_tilde,
        leapfrog_steps: d.leapfrog_steps,
        seed: d.seed,
        prior_odds: d.prior_odds,
    }
}

/// Runs the joint sampler over the hypothesis and `theta`. Evaluation points
/// are drawn with the chain seed.
///
/// # Safety
/// `ds` and `cfg` must be live; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn bkt_chain_run(
    ds: *const BktDataset,
    s: usize,
    sigma_method: u8,
    cfg: *const BktChainConfig,
    out: *mut *mut BktChainOutput,
) -> BktStatus {
    guarded(|| {
        let ds = non_null(ds, "dataset")?;
        let c = non_null(cfg, "config")?;
        let out = out_ptr(out, "out")?;
        let d = ChainConfig::default();
        let chain_cfg = ChainConfig {
            m_tilde: c.iters,
            burnin: c.burnin,
            thin: c.thin,
            n_tilde: c.hmc_steps,
            warmup_inner: d.warmup_inner.min(c.hmc_steps),
            leapfrog_steps: c.leapfrog_steps,
            seed: c.seed,
            prior_odds: c.prior_odds,
            ..d
        };
        core(chain_cfg.validate())?;
        let chain = core(gibbs_run(&evaluator(ds, s, c.seed, sigma_method)?, &chain_cfg))?;
        *out = Box::into_raw(Box::new(BktChainOutput(chain)));
        Ok(())
    })
}

/// Posterior probability of the alternative, or NaN for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bkt_chain_p_h1(chain: *const BktChainOutput) -> f64 {
    chain.as_ref().map_or(f64::NAN, |c| c.0.p_h1)
}

/// HMC acceptance rate, or NaN for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bkt_chain_acceptance_rate(chain: *const BktChainOutput) -> f64 {
    chain.as_ref().map_or(f64::NAN, |c| c.0.acceptance_rate)
}

/// Number of retained samples, or 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bkt_chain_len(chain: *const BktChainOutput) -> usize {
    chain.as_ref().map_or(0, |c| c.0.theta_samples.len())
}

/// Copies up to `len` retained samples into `theta` and `model` (0 for the
/// null, 1 for the alternative; either may be null). Returns the number
/// copied.
///
/// # Safety
/// `chain` must be null or live; non-null `theta` and `model` must be valid
/// for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bkt_chain_samples(
    chain: *const BktChainOutput,
    theta: *mut f64,
    model: *mut u8,
    len: usize,
) -> usize {
    let Some(c) = chain.as_ref() else { return 0 };
    let k = len.min(c.0.theta_samples.len());
    if !theta.is_null() {
        std::ptr::copy_nonoverlapping(c.0.theta_samples.as_ptr(), theta, k);
    }
    if !model.is_null() {
        for (i, m) in c.0.m_samples.iter().take(k).enumerate() {
            *model.add(i) = m.as_index();
        }
    }
    k
}

/// Frees a chain output. Null is ignored.
///
/// # Safety
/// `chain` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bkt_chain_free(chain: *mut BktChainOutput) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}
