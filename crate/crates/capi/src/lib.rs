//! C ABI for the balancereg library.
//!
//! Handles are opaque pointers created and destroyed by this library; every
//! fallible call returns a [`BalanceregStatus`] and stores a human-readable
//! message retrievable with [`balancereg_last_error`]. All pointers passed in
//! must be valid for the duration of the call; arrays are row-major f64.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use balancereg::data::{load_ihdp_csv, synth_generate, CausalDataset, SynthConfig};
use balancereg::estimation::{
    aggregate_metrics, impacts_inductive, impacts_transductive, InferenceMode, RunMetrics,
};
use balancereg::losses::{LossWeights, PrgVariant};
use balancereg::model::{Model, ModelKind};
use balancereg::trainer::{train_run, TrainConfig};
use balancereg::{Array, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalanceregStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid argument or contract violation (bad shapes, bad enum value,
    /// invalid configuration).
    InvalidArgument = 2,
    /// File could not be read, written or parsed.
    Io = 3,
    /// A numeric precondition failed (e.g. degenerate data).
    Numeric = 4,
    /// Internal panic; the library state is still consistent.
    Internal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> BalanceregStatus {
    match err {
        Error::Io { .. } | Error::Format { .. } => BalanceregStatus::Io,
        Error::UndefinedCorrelation | Error::GroupAbsent => BalanceregStatus::Numeric,
        _ => BalanceregStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> BalanceregStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null_arg(name: &str) -> BalanceregStatus {
    set_error(&format!("{name} must not be null"));
    BalanceregStatus::NullPointer
}

/// Run `f`, converting panics into `Internal` instead of unwinding across
/// the FFI boundary.
fn guarded<F: FnOnce() -> BalanceregStatus>(f: F) -> BalanceregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            BalanceregStatus::Internal
        }
    }
}

/// Copy the message for the most recent error on this thread into `buf`
/// (NUL-terminated, truncated to `cap` bytes). Returns the full message
/// length in bytes, excluding the terminator; call with `buf = NULL` or
/// `cap = 0` to query the length.
#[no_mangle]
pub unsafe extern "C" fn balancereg_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

// ---- dataset handle ----------------------------------------------------

/// Opaque handle to a loaded or generated dataset.
pub struct BalanceregDataset {
    inner: CausalDataset,
}

/// Synthetic-generator configuration; mirrors the library defaults when
/// initialized with `balancereg_synth_config_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BalanceregSynthConfig {
    pub n: usize,
    pub d: usize,
    pub treated_fraction: f64,
    pub coefficient_sparsity: f64,
    pub noise_scale: f64,
    pub target_mean_effect: f64,
    pub seed: u64,
}

impl BalanceregSynthConfig {
    fn to_core(self) -> SynthConfig {
        SynthConfig {
            n: self.n,
            d: self.d,
            treated_fraction: self.treated_fraction,
            coefficient_sparsity: self.coefficient_sparsity,
            noise_scale: self.noise_scale,
            target_mean_effect: self.target_mean_effect,
            seed: self.seed,
        }
    }
}

/// Fill `out` with the default synthetic-generator configuration.
#[no_mangle]
pub unsafe extern "C" fn balancereg_synth_config_default(
    out: *mut BalanceregSynthConfig,
) -> BalanceregStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let d = SynthConfig::default();
    *out = BalanceregSynthConfig {
        n: d.n,
        d: d.d,
        treated_fraction: d.treated_fraction,
        coefficient_sparsity: d.coefficient_sparsity,
        noise_scale: d.noise_scale,
        target_mean_effect: d.target_mean_effect,
        seed: d.seed,
    };
    BalanceregStatus::Ok
}

/// Generate a synthetic dataset. On success writes a new handle to `out`;
/// free it with `balancereg_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn balancereg_dataset_synth(
    config: *const BalanceregSynthConfig,
    out: *mut *mut BalanceregDataset,
) -> BalanceregStatus {
    if config.is_null() {
        return null_arg("config");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let config = (*config).to_core();
    guarded(|| match synth_generate(&config) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(BalanceregDataset { inner }));
            BalanceregStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Load a dataset from a CSV file with columns
/// t, y_factual, y_cfactual, mu0, mu1, x1..xd. On success writes a new
/// handle to `out`; free it with `balancereg_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn balancereg_dataset_from_csv(
    path: *const c_char,
    has_header: bool,
    out: *mut *mut BalanceregDataset,
) -> BalanceregStatus {
    if path.is_null() {
        return null_arg("path");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => PathBuf::from(s),
        Err(_) => {
            set_error("path is not valid UTF-8");
            return BalanceregStatus::InvalidArgument;
        }
    };
    guarded(|| match load_ihdp_csv(&path, has_header) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(BalanceregDataset { inner }));
            BalanceregStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Number of units in the dataset; 0 if `dataset` is null.
#[no_mangle]
pub unsafe extern "C" fn balancereg_dataset_len(dataset: *const BalanceregDataset) -> usize {
    if dataset.is_null() {
        0
    } else {
        (*dataset).inner.len()
    }
}

/// Covariate dimension of the dataset; 0 if `dataset` is null.
#[no_mangle]
pub unsafe extern "C" fn balancereg_dataset_dim(dataset: *const BalanceregDataset) -> usize {
    if dataset.is_null() {
        0
    } else {
        (*dataset).inner.dim()
    }
}

/// Destroy a dataset handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn balancereg_dataset_free(dataset: *mut BalanceregDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// ---- model handle ------------------------------------------------------

/// Opaque handle to a trained model.
pub struct BalanceregModel {
    inner: Model,
}

/// Model architecture selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalanceregModelKind {
    TwoHead = 0,
    SeparateHeads = 1,
}

/// Prognostic-regularizer variant selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalanceregPrgVariant {
    SoftKs = 0,
    Smd = 1,
}

/// Training options; initialize with `balancereg_train_options_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BalanceregTrainOptions {
    pub model_kind: BalanceregModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub prg_variant: BalanceregPrgVariant,
}

/// Fill `out` with the default training options (two-head model, 50 epochs,
/// batch 64, learning rate 1e-4, no balance regularization).
#[no_mangle]
pub unsafe extern "C" fn balancereg_train_options_default(
    out: *mut BalanceregTrainOptions,
) -> BalanceregStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let c = TrainConfig::default();
    *out = BalanceregTrainOptions {
        model_kind: BalanceregModelKind::TwoHead,
        seed: c.seed,
        epochs: c.epochs,
        batch_size: c.batch_size,
        lr: c.lr,
        rho: c.weights.rho,
        gamma: 0.0,
        lambda: 0.0,
        prg_variant: BalanceregPrgVariant::SoftKs,
    };
    BalanceregStatus::Ok
}

fn train_config(opts: &BalanceregTrainOptions) -> TrainConfig {
    let weights = LossWeights {
        rho: opts.rho,
        gamma: opts.gamma,
        lambda: opts.lambda,
        prg_variant: match opts.prg_variant {
            BalanceregPrgVariant::SoftKs => PrgVariant::SoftKs,
            BalanceregPrgVariant::Smd => PrgVariant::Smd,
        },
        ..LossWeights::default()
    };
    TrainConfig {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        lr: opts.lr,
        weights,
        model_kind: match opts.model_kind {
            BalanceregModelKind::TwoHead => ModelKind::TwoHead,
            BalanceregModelKind::SeparateHeads => ModelKind::SeparateHeads,
        },
        seed: opts.seed,
    }
}

/// Train a model on every unit of `dataset`. On success writes a new handle
/// to `out`; free it with `balancereg_model_free`.
#[no_mangle]
pub unsafe extern "C" fn balancereg_train(
    dataset: *const BalanceregDataset,
    options: *const BalanceregTrainOptions,
    out: *mut *mut BalanceregModel,
) -> BalanceregStatus {
    if dataset.is_null() {
        return null_arg("dataset");
    }
    if options.is_null() {
        return null_arg("options");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let config = train_config(&*options);
    let view = (*dataset).inner.full_view();
    guarded(|| match train_run(&view, &config) {
        Ok((inner, _trace)) => {
            *out = Box::into_raw(Box::new(BalanceregModel { inner }));
            BalanceregStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Total number of trainable parameters; 0 if `model` is null.
#[no_mangle]
pub unsafe extern "C" fn balancereg_model_param_count(model: *const BalanceregModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).inner.param_count()
    }
}

/// Inductive impact estimates for `n` units with covariates `x`
/// (row-major, `n` by `d`). Writes `n` values to `out`.
#[no_mangle]
pub unsafe extern "C" fn balancereg_predict_impacts(
    model: *const BalanceregModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> BalanceregStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if x.is_null() {
        return null_arg("x");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let data = std::slice::from_raw_parts(x, n * d).to_vec();
    let x = Array::from_vec(n, d, data);
    guarded(|| match impacts_inductive(&(*model).inner, &x) {
        Ok(impacts) => {
            std::ptr::copy_nonoverlapping(impacts.as_ptr(), out, n);
            BalanceregStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Transductive impact estimates: the factual outcome `y` replaces the
/// predicted head for each unit's observed arm (`t` in {0, 1}). Writes `n`
/// values to `out`.
#[no_mangle]
pub unsafe extern "C" fn balancereg_predict_impacts_transductive(
    model: *const BalanceregModel,
    x: *const f64,
    t: *const u8,
    y: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> BalanceregStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if x.is_null() || t.is_null() || y.is_null() {
        return null_arg("x/t/y");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let data = std::slice::from_raw_parts(x, n * d).to_vec();
    let x = Array::from_vec(n, d, data);
    let t = std::slice::from_raw_parts(t, n);
    let y = std::slice::from_raw_parts(y, n);
    guarded(|| match impacts_transductive(&(*model).inner, &x, t, y) {
        Ok(impacts) => {
            std::ptr::copy_nonoverlapping(impacts.as_ptr(), out, n);
            BalanceregStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Destroy a model handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn balancereg_model_free(model: *mut BalanceregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- metric aggregation ------------------------------------------------

/// Cross-run error decomposition; `mse_mean = bias_sq + variance` exactly.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct BalanceregMetrics {
    pub bias_sq: f64,
    pub variance: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

/// Aggregate `n_runs` repeated estimates of the same `n_units` true effects
/// into the bias-squared / variance / MSE decomposition. `estimates` is
/// row-major, `n_runs` by `n_units`.
#[no_mangle]
pub unsafe extern "C" fn balancereg_aggregate(
    truth: *const f64,
    n_units: usize,
    estimates: *const f64,
    n_runs: usize,
    out: *mut BalanceregMetrics,
) -> BalanceregStatus {
    if truth.is_null() {
        return null_arg("truth");
    }
    if estimates.is_null() {
        return null_arg("estimates");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let truth = std::slice::from_raw_parts(truth, n_units);
    let estimates = std::slice::from_raw_parts(estimates, n_runs * n_units);
    let runs: Vec<RunMetrics> = (0..n_runs)
        .map(|r| RunMetrics {
            run_id: (r, 0),
            im_hat: estimates[r * n_units..(r + 1) * n_units].to_vec(),
            mode: InferenceMode::Inductive,
        })
        .collect();
    guarded(|| match aggregate_metrics(truth, &runs) {
        Ok(agg) => {
            *out = BalanceregMetrics {
                bias_sq: agg.bias_sq,
                variance: agg.variance,
                mse_mean: agg.mse_mean,
                mse_std: agg.mse_std,
            };
            BalanceregStatus::Ok
        }
        Err(e) => fail(e),
    })
}
