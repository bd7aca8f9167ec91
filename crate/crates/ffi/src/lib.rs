//! C interface to the dsfacto trainer.
//!
//! Datasets and models are opaque handles owned by the caller and released
//! with `dsf_dataset_free` / `dsf_model_free`. Every fallible call returns a
//! [`DsfStatus`]; on failure a description is available from
//! `dsf_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use dsfacto::{cli, data, fm, metrics};
use dsfacto::{Dataset, Error, FmModel, LossKind, Mode, Routing, RunConfig, SparseExample, Task};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    Null = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Runtime = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

pub const DSF_TASK_REGRESSION: u32 = 0;
pub const DSF_TASK_CLASSIFICATION: u32 = 1;

pub const DSF_LOSS_SQUARED: u32 = 0;
pub const DSF_LOSS_LOGISTIC: u32 = 1;

pub const DSF_MODE_SERIAL_BATCH: u32 = 0;
pub const DSF_MODE_SERIAL_INCREMENTAL: u32 = 1;
pub const DSF_MODE_DSFACTO: u32 = 2;

pub const DSF_ROUTING_RING: u32 = 0;
pub const DSF_ROUTING_RANDOM: u32 = 1;

/// Training settings. Fill with `dsf_train_config_default` before changing
/// individual fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DsfTrainConfig {
    /// One of the `DSF_TASK_*` constants.
    pub task: u32,
    /// One of the `DSF_LOSS_*` constants.
    pub loss: u32,
    /// One of the `DSF_MODE_*` constants.
    pub mode: u32,
    /// One of the `DSF_ROUTING_*` constants.
    pub routing: u32,
    pub k: usize,
    pub epochs: usize,
    pub workers: usize,
    pub eta: f64,
    pub decay: f64,
    pub lambda_w: f64,
    pub lambda_v: f64,
    pub init_sd: f64,
    pub seed: u64,
    pub local_a_refresh: bool,
    pub deterministic: bool,
}

/// Opaque dataset handle.
pub struct DsfDataset {
    inner: Dataset,
}

/// Opaque model handle.
pub struct DsfModel {
    inner: FmModel,
    task: Task,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(DsfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => DsfStatus::Parse,
            Error::Io(_) => DsfStatus::Io,
            Error::Engine(_) => DsfStatus::Runtime,
            _ => DsfStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DsfStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Fail {
    Fail(DsfStatus::Null, format!("{what} is null"))
}

/// Runs `body`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Fail>>(body: F) -> DsfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DsfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
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
            DsfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_of<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn task_of(code: u32) -> Result<Task, Fail> {
    match code {
        DSF_TASK_REGRESSION => Ok(Task::Regression),
        DSF_TASK_CLASSIFICATION => Ok(Task::Classification),
        _ => Err(invalid(format!("unknown task code {code}"))),
    }
}

fn task_code(task: Task) -> u32 {
    match task {
        Task::Regression => DSF_TASK_REGRESSION,
        Task::Classification => DSF_TASK_CLASSIFICATION,
    }
}

impl DsfTrainConfig {
    fn to_run_config(self) -> Result<RunConfig, Fail> {
        let loss = match self.loss {
            DSF_LOSS_SQUARED => LossKind::Squared,
            DSF_LOSS_LOGISTIC => LossKind::Logistic,
            c => return Err(invalid(format!("unknown loss code {c}"))),
        };
        let mode = match self.mode {
            DSF_MODE_SERIAL_BATCH => Mode::SerialBatch,
            DSF_MODE_SERIAL_INCREMENTAL => Mode::SerialIncremental,
            DSF_MODE_DSFACTO => Mode::Dsfacto,
            c => return Err(invalid(format!("unknown mode code {c}"))),
        };
        let routing = match self.routing {
            DSF_ROUTING_RING => Routing::Ring,
            DSF_ROUTING_RANDOM => Routing::Random,
            c => return Err(invalid(format!("unknown routing code {c}"))),
        };
        let config = RunConfig {
            task: task_of(self.task)?,
            loss,
            mode,
            routing,
            k: self.k,
            epochs: self.epochs,
            workers: self.workers,
            eta: self.eta,
            decay: self.decay,
            lambda_w: self.lambda_w,
            lambda_v: self.lambda_v,
            init_sd: self.init_sd,
            seed: self.seed,
            local_a_refresh: self.local_a_refresh,
            deterministic: self.deterministic,
            ..RunConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. The pointer stays valid until the next `dsf_*` call on
/// the same thread.
#[no_mangle]
pub extern "C" fn dsf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Writes the library defaults (dsfacto mode, one worker, ring routing) for
/// `task` into `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `DsfTrainConfig`.
#[no_mangle]
pub unsafe extern "C" fn dsf_train_config_default(
    task: u32,
    out: *mut DsfTrainConfig,
) -> DsfStatus {
    guard(|| {
        let task = task_of(task)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = RunConfig::default();
        *out = DsfTrainConfig {
            task: task_code(task),
            loss: match task.default_loss() {
                LossKind::Squared => DSF_LOSS_SQUARED,
                LossKind::Logistic => DSF_LOSS_LOGISTIC,
            },
            mode: DSF_MODE_DSFACTO,
            routing: DSF_ROUTING_RING,
            k: d.k,
            epochs: d.epochs,
            workers: d.workers,
            eta: d.eta,
            decay: d.decay,
            lambda_w: d.lambda_w,
            lambda_v: d.lambda_v,
            init_sd: d.init_sd,
            seed: d.seed,
            local_a_refresh: d.local_a_refresh,
            deterministic: d.deterministic,
        };
        Ok(())
    })
}

/// Loads a LIBSVM file. `dim = 0` infers the dimension from the largest
/// index.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dsf_dataset_load_libsvm(
    path: *const c_char,
    task: u32,
    dim: usize,
    out: *mut *mut DsfDataset,
) -> DsfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let task = task_of(task)?;
        let file = File::open(path).map_err(|e| Fail(DsfStatus::Io, format!("{path}: {e}")))?;
        let ds = data::parse_libsvm(BufReader::new(file), task, (dim > 0).then_some(dim))?;
        *out = Box::into_raw(Box::new(DsfDataset { inner: ds }));
        Ok(())
    })
}

/// Builds a dataset from compressed sparse rows. Row `i` holds entries
/// `row_ptr[i]..row_ptr[i+1]` of `indices` (1-based) and `values`.
///
/// # Safety
/// `row_ptr` must hold `n + 1` entries, `labels` `n` entries, and
/// `indices` / `values` `row_ptr[n]` entries each.
#[no_mangle]
pub unsafe extern "C" fn dsf_dataset_from_csr(
    n: usize,
    row_ptr: *const usize,
    indices: *const u32,
    values: *const f64,
    labels: *const f64,
    dim: usize,
    task: u32,
    out: *mut *mut DsfDataset,
) -> DsfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let task = task_of(task)?;
        let row_ptr = slice_of(row_ptr, n + 1, "row_ptr")?;
        let labels = slice_of(labels, n, "labels")?;
        let nnz = row_ptr[n];
        if row_ptr[0] != 0 || row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("row_ptr must start at 0 and be non-decreasing"));
        }
        let indices = slice_of(indices, nnz, "indices")?;
        let values = slice_of(values, nnz, "values")?;
        let rows = (0..n)
            .map(|i| {
                let span = row_ptr[i]..row_ptr[i + 1];
                let feats = indices[span.clone()]
                    .iter()
                    .copied()
                    .zip(values[span].iter().copied());
                let label = match (task, labels[i]) {
                    (Task::Classification, 0.0) => -1.0,
                    (_, y) => y,
                };
                SparseExample::new(feats.collect(), label)
            })
            .collect::<dsfacto::Result<Vec<_>>>()?;
        let ds = Dataset::new(rows, dim, task)?;
        *out = Box::into_raw(Box::new(DsfDataset { inner: ds }));
        Ok(())
    })
}

/// Number of examples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsf_dataset_len(ds: *const DsfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsf_dataset_dim(ds: *const DsfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsf_dataset_free(ds: *mut DsfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a model. `test` may be null. When `final_objective` is non-null
/// it receives the training objective of the returned model.
///
/// # Safety
/// Handles must be live; `config` must point to an initialized config;
/// `out` must be null or writable; `final_objective` null or writable.
#[no_mangle]
pub unsafe extern "C" fn dsf_train(
    config: *const DsfTrainConfig,
    train: *const DsfDataset,
    test: *const DsfDataset,
    out: *mut *mut DsfModel,
    final_objective: *mut f64,
) -> DsfStatus {
    guard(|| {
        let config = deref(config, "config")?.to_run_config()?;
        let train = &deref(train, "train")?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if train.task() != config.task {
            return Err(invalid("dataset task does not match config task"));
        }
        let test = test.as_ref().map(|t| &t.inner);
        let (model, _) = cli::train_model(&config, train, test)?;
        if let Some(obj) = final_objective.as_mut() {
            *obj = fm::objective(&model, train.examples(), &config.hyperparams())?;
        }
        *out = Box::into_raw(Box::new(DsfModel {
            inner: model,
            task: config.task,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsf_model_dim(model: *const DsfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsf_model_k(model: *const DsfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.k())
}

/// Writes the raw score of every example in `ds` to `out[0..len)`.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dsf_model_score(
    model: *const DsfModel,
    ds: *const DsfDataset,
    out: *mut f64,
    out_len: usize,
) -> DsfStatus {
    guard(|| {
        let model = &deref(model, "model")?.inner;
        let ds = &deref(ds, "dataset")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != ds.len() {
            return Err(invalid(format!(
                "output holds {out_len} scores, dataset has {} examples",
                ds.len()
            )));
        }
        let out = slice::from_raw_parts_mut(out, out_len);
        for (slot, x) in out.iter_mut().zip(ds.examples()) {
            *slot = fm::score(model, x)?;
        }
        Ok(())
    })
}

/// RMSE (regression) or accuracy (classification) of `model` on `ds`.
///
/// # Safety
/// Handles must be live; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dsf_model_evaluate(
    model: *const DsfModel,
    ds: *const DsfDataset,
    out: *mut f64,
) -> DsfStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let ds = &deref(ds, "dataset")?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if ds.task() != model.task {
            return Err(invalid("dataset task does not match the model"));
        }
        *out = metrics::evaluate(&model.inner, ds)?;
        Ok(())
    })
}

/// Copies the parameters out. `w` receives `dim` values and `v` receives
/// `dim * k` values in row-major order (row `j - 1` for feature `j`). Any
/// of the output pointers may be null to skip that part.
///
/// # Safety
/// `model` must be live; non-null outputs must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dsf_model_params(
    model: *const DsfModel,
    w0: *mut f64,
    w: *mut f64,
    w_len: usize,
    v: *mut f64,
    v_len: usize,
) -> DsfStatus {
    guard(|| {
        let model = &deref(model, "model")?.inner;
        if let Some(w0) = w0.as_mut() {
            *w0 = model.w0();
        }
        for (p, len, src, what) in [(w, w_len, model.w(), "w"), (v, v_len, model.v(), "v")] {
            if p.is_null() {
                continue;
            }
            if len != src.len() {
                return Err(invalid(format!(
                    "{what} holds {len} values, model has {}",
                    src.len()
                )));
            }
            slice::from_raw_parts_mut(p, len).copy_from_slice(src);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsf_model_free(model: *mut DsfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
