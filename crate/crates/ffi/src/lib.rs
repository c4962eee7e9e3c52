//! C ABI over the morphnet library.
//!
//! Every function returns a [`MorphnetStatus`]; on failure a message is
//! available from [`morphnet_last_error`] on the same thread. Models are
//! opaque handles owned by the caller and released with
//! [`morphnet_model_free`]. Panics never cross the boundary.
//!
//! Matrices are row-major. Inputs to a forward pass are `batch × d_in`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use morphnet::checkpoint::Checkpoint;
use morphnet::heads::{build_head, HeadSpec, ModelParams, Variant};
use morphnet::pruning::{apply_plan, build_prune_plan};
use morphnet::tropical::max_plus_matmul;
use morphnet::{Error, Tensor, TropicalMatrix};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    UndefinedOutput = 4,
    NonFinite = 5,
    UndefinedMetric = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphnetVariant {
    Relu = 0,
    Maxout = 1,
    Zhang = 2,
    DenseMorph = 3,
    SparseMorph = 4,
}

impl From<MorphnetVariant> for Variant {
    fn from(v: MorphnetVariant) -> Self {
        match v {
            MorphnetVariant::Relu => Variant::Relu,
            MorphnetVariant::Maxout => Variant::Maxout,
            MorphnetVariant::Zhang => Variant::Zhang,
            MorphnetVariant::DenseMorph => Variant::DenseMorph,
            MorphnetVariant::SparseMorph => Variant::SparseMorph,
        }
    }
}

/// Opaque model handle.
pub struct MorphnetModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MorphnetStatus {
    match e {
        Error::ShapeMismatch { .. } => MorphnetStatus::ShapeMismatch,
        Error::UndefinedOutput { .. } => MorphnetStatus::UndefinedOutput,
        Error::NonFinite(_) | Error::Diverged { .. } => MorphnetStatus::NonFinite,
        Error::UndefinedMetric(_) => MorphnetStatus::UndefinedMetric,
        Error::Io { .. } => MorphnetStatus::Io,
        Error::Parse { .. } | Error::Schema(_) | Error::Json(_) | Error::Csv(_) => MorphnetStatus::Parse,
        _ => MorphnetStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MorphnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MorphnetStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MorphnetStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            MorphnetStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MorphnetStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const MorphnetModel) -> Result<&'a ModelParams, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or(Fail::Null("model"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next morphnet call on the same thread.
#[no_mangle]
pub extern "C" fn morphnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds and initializes a head. `pooling` is the maxout piece count and
/// the sparse budget factor.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_build(
    variant: MorphnetVariant,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    pooling: usize,
    batchnorm: bool,
    seed: u64,
    out: *mut *mut MorphnetModel,
) -> MorphnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = HeadSpec::new(variant.into(), d_in, d_hidden, d_out)
            .with_pooling(pooling)
            .with_batchnorm(batchnorm)
            .with_seed(seed);
        let model = build_head(&spec)?;
        out.write(Box::into_raw(Box::new(MorphnetModel { inner: model })));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_free(model: *mut MorphnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_load(path: *const c_char, out: *mut *mut MorphnetModel) -> MorphnetStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ck = Checkpoint::load(path)?;
        out.write(Box::into_raw(Box::new(MorphnetModel { inner: ck.model })));
        Ok(())
    })
}

/// Writes the model as a checkpoint (epoch 0, no optimizer state).
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_save(model: *const MorphnetModel, path: *const c_char) -> MorphnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        Checkpoint::new(m.clone(), 0).save(path_arg(path)?)?;
        Ok(())
    })
}

/// Input width, output width and active parameter count.
///
/// # Safety
/// `model` must be a live handle; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_info(
    model: *const MorphnetModel,
    d_in: *mut usize,
    d_out: *mut usize,
    census: *mut usize,
) -> MorphnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(d_in, m.spec.d_in, "d_in")?;
        write_out(d_out, m.spec.d_out, "d_out")?;
        write_out(census, m.census(), "census")
    })
}

/// Inference-mode forward pass. `x` is `batch × d_in`, `out` receives
/// `batch × d_out` logits.
///
/// # Safety
/// `x` must hold `batch · d_in` values and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_forward(
    model: *const MorphnetModel,
    x: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> MorphnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (d, o) = (m.spec.d_in, m.spec.d_out);
        if batch == 0 {
            return Err(Fail::Arg("batch must be positive".into()));
        }
        if out_len != batch * o {
            return Err(Fail::Arg(format!("out_len {out_len}, expected {}", batch * o)));
        }
        let rows = slice(x, batch * d, "x")?;
        let out = slice_mut(out, out_len, "out")?;
        // Columns are samples inside the library.
        let mut cols = vec![0.0; d * batch];
        for (s, row) in rows.chunks(d).enumerate() {
            for (f, &v) in row.iter().enumerate() {
                cols[f * batch + s] = v;
            }
        }
        let logits = m.forward(&Tensor::new(vec![d, batch], cols)?)?;
        for k in 0..o {
            for s in 0..batch {
                out[s * o + k] = logits.data()[k * batch + s];
            }
        }
        Ok(())
    })
}

/// Prunes the model in place at `(r1, r2)` under the equal-count protocol
/// and reports the remaining parameter count and the number of max-plus
/// rows left undefined.
///
/// # Safety
/// `model` must be a live handle; out pointers writable or null.
#[no_mangle]
pub unsafe extern "C" fn morphnet_model_prune(
    model: *mut MorphnetModel,
    r1: f64,
    r2: f64,
    remaining: *mut usize,
    undefined_rows: *mut usize,
) -> MorphnetStatus {
    guard(|| {
        let m = model.as_mut().map(|m| &mut m.inner).ok_or(Fail::Null("model"))?;
        let plan = build_prune_plan(m.spec.variant, r1, r2, &m.spec)?;
        let outcome = apply_plan(m, &plan)?;
        if !remaining.is_null() {
            remaining.write(outcome.census);
        }
        if !undefined_rows.is_null() {
            undefined_rows.write(outcome.undefined_rows.len());
        }
        Ok(())
    })
}

/// Remaining parameter count of a head pruned at `(r1, r2)`, without
/// building it.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn morphnet_prune_remaining(
    variant: MorphnetVariant,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    pooling: usize,
    r1: f64,
    r2: f64,
    out: *mut usize,
) -> MorphnetStatus {
    guard(|| {
        let spec = HeadSpec::new(variant.into(), d_in, d_hidden, d_out).with_pooling(pooling);
        let plan = build_prune_plan(variant.into(), r1, r2, &spec)?;
        write_out(out, plan.remaining, "out")
    })
}

/// Max-plus product `W ⊞ x` for an `rows × cols` weight matrix with an
/// activity mask (nonzero byte = active) and a `cols × batch` input.
/// Rows with no active entry produce `-INFINITY`.
///
/// # Safety
/// Buffers must hold `rows·cols`, `rows·cols`, `cols·batch` and
/// `rows·batch` elements respectively.
#[no_mangle]
pub unsafe extern "C" fn morphnet_max_plus_matmul(
    weights: *const f64,
    active: *const u8,
    rows: usize,
    cols: usize,
    x: *const f64,
    batch: usize,
    out: *mut f64,
) -> MorphnetStatus {
    guard(|| {
        let w = slice(weights, rows * cols, "weights")?;
        let a: Vec<bool> = slice(active, rows * cols, "active")?.iter().map(|&b| b != 0).collect();
        let x = slice(x, cols * batch, "x")?;
        let out = slice_mut(out, rows * batch, "out")?;
        let m = TropicalMatrix::new(rows, cols, w.to_vec(), a)?;
        let (y, _) = max_plus_matmul(&m, &Tensor::new(vec![cols, batch], x.to_vec())?)?;
        for r in 0..rows {
            for b in 0..batch {
                out[r * batch + b] = y.get(r, b).value().unwrap_or(f64::NEG_INFINITY);
            }
        }
        Ok(())
    })
}

unsafe fn binary_metric(
    f: fn(&[f64], &[bool]) -> morphnet::Result<f64>,
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> MorphnetStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&b| b != 0).collect();
        write_out(out, f(s, &l)?, "out")
    })
}

/// ROC-AUC of `n` scores against binary labels (nonzero = positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn morphnet_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> MorphnetStatus {
    binary_metric(morphnet::metrics::roc_auc, scores, labels, n, out)
}

/// Average precision of `n` scores against binary labels.
///
/// # Safety
/// As for [`morphnet_roc_auc`].
#[no_mangle]
pub unsafe extern "C" fn morphnet_pr_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> MorphnetStatus {
    binary_metric(morphnet::metrics::pr_auc, scores, labels, n, out)
}
