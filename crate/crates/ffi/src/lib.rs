//! C ABI over the tracklet-reid library.
//!
//! Every fallible call returns a [`ReidStatus`]; on failure the message is
//! available from [`reid_last_error`] on the same thread. Models are opaque
//! handles released with [`reid_model_free`]. Frame matrices are row-major
//! `n_frames × feature_dim` arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use tracklet_reid::benchmark::BenchmarkConfig;
use tracklet_reid::data::{Frame, TrackletRecord};
use tracklet_reid::diffcore::Tensor;
use tracklet_reid::encoders::{weights, ReidModel};
use tracklet_reid::metrics::roc_auc;
use tracklet_reid::reid::{calibrate_threshold, represent, score_reprs, Scorer};
use tracklet_reid::training::{nt_xent_loss, LossConfig};
use tracklet_reid::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Contract = 5,
    InsufficientData = 6,
    Panic = 7,
}

/// Pair scoring technique.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReidScorer {
    LateMin = 0,
    LateMax = 1,
    LateMean = 2,
    MvAverage = 3,
    MvJoint = 4,
}

impl From<ReidScorer> for Scorer {
    fn from(s: ReidScorer) -> Self {
        match s {
            ReidScorer::LateMin => Scorer::LateMin,
            ReidScorer::LateMax => Scorer::LateMax,
            ReidScorer::LateMean => Scorer::LateMean,
            ReidScorer::MvAverage => Scorer::MvAverage,
            ReidScorer::MvJoint => Scorer::MvJoint,
        }
    }
}

/// Opaque trained or initialized model.
pub struct ReidModelHandle {
    model: ReidModel,
}

struct Failure {
    status: ReidStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => ReidStatus::Io,
            Error::Format { .. } | Error::Checksum { .. } | Error::Json(_) | Error::Csv(_) => ReidStatus::Format,
            Error::Config(_) | Error::Dimension { .. } | Error::EmptyInput(_) | Error::EmptyTracklet => {
                ReidStatus::InvalidArgument
            }
            Error::InsufficientData { .. } => ReidStatus::InsufficientData,
            _ => ReidStatus::Contract,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: ReidStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ReidStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ReidStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("internal panic");
            ReidStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ReidStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn model_ref<'a>(m: *const ReidModelHandle) -> Result<&'a ReidModel, Failure> {
    m.as_ref()
        .map(|h| &h.model)
        .ok_or_else(|| fail(ReidStatus::NullPointer, "model is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(ReidStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ReidStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(ReidStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn tracklet(frames: *const f64, n_frames: usize, feature_dim: usize, model: &ReidModel) -> Result<TrackletRecord, Failure> {
    if feature_dim != model.config.feature_dim {
        return Err(fail(
            ReidStatus::InvalidArgument,
            format!("feature_dim {feature_dim} does not match the model's {}", model.config.feature_dim),
        ));
    }
    let n = n_frames
        .checked_mul(feature_dim)
        .ok_or_else(|| fail(ReidStatus::InvalidArgument, "frame matrix size overflows"))?;
    let data = input(frames, n, "frames")?;
    Ok(TrackletRecord {
        tracklet_id: 0,
        procedure_id: 0,
        entity_id: None,
        frames: data
            .chunks(feature_dim.max(1))
            .enumerate()
            .map(|(i, f)| Frame {
                frame_index: i as u64,
                timestamp: i as f64,
                confidence: 1.0,
                features: f.to_vec(),
            })
            .collect(),
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn reid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn reid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Freshly initialized model with the default encoder shape for
/// `feature_dim` inputs.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn reid_model_init(feature_dim: usize, seed: u64, out: *mut *mut ReidModelHandle) -> ReidStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let mut cfg = BenchmarkConfig::default().train.encoder;
        cfg.feature_dim = feature_dim;
        let model = ReidModel::init(&cfg, seed)?;
        *out = Box::into_raw(Box::new(ReidModelHandle { model }));
        Ok(())
    })
}

/// Loads a TRW1 weights file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reid_model_load(path: *const c_char, out: *mut *mut ReidModelHandle) -> ReidStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let model = weights::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(ReidModelHandle { model }));
        Ok(())
    })
}

/// Writes the model as a TRW1 weights file.
///
/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn reid_model_save(model: *const ReidModelHandle, path: *const c_char) -> ReidStatus {
    guard(|| {
        weights::save(model_ref(model)?, &path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reid_model_free(model: *mut ReidModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input feature dimension, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn reid_model_feature_dim(model: *const ReidModelHandle) -> usize {
    model.as_ref().map_or(0, |h| h.model.config.feature_dim)
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn reid_model_embed_dim(model: *const ReidModelHandle) -> usize {
    model.as_ref().map_or(0, |h| h.model.config.embed_dim)
}

/// Unit-norm tracklet embedding from the joint or averaging encoder;
/// `out_len` must equal the embedding dimension.
///
/// # Safety
/// `frames` must hold `n_frames × feature_dim` doubles and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn reid_embed_tracklet(
    model: *const ReidModelHandle,
    frames: *const f64,
    n_frames: usize,
    feature_dim: usize,
    scorer: ReidScorer,
    out: *mut f64,
    out_len: usize,
) -> ReidStatus {
    guard(|| {
        let model = model_ref(model)?;
        out_ptr(out, "out")?;
        if !matches!(scorer, ReidScorer::MvAverage | ReidScorer::MvJoint) {
            return Err(fail(ReidStatus::InvalidArgument, "only mv_average and mv_joint produce one vector"));
        }
        if out_len != model.config.embed_dim {
            return Err(fail(
                ReidStatus::InvalidArgument,
                format!("out_len {out_len} differs from embedding dimension {}", model.config.embed_dim),
            ));
        }
        let t = tracklet(frames, n_frames, feature_dim, model)?;
        let repr = represent(model, &t, scorer.into())?;
        let v = repr.as_vector().expect("vector scorer");
        slice::from_raw_parts_mut(out, out_len).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Similarity of two tracklets under `scorer`.
///
/// # Safety
/// `a` and `b` must hold `n_a × feature_dim` and `n_b × feature_dim`
/// doubles; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reid_score_pair(
    model: *const ReidModelHandle,
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    feature_dim: usize,
    scorer: ReidScorer,
    out_score: *mut f64,
) -> ReidStatus {
    guard(|| {
        let model = model_ref(model)?;
        out_ptr(out_score, "out_score")?;
        let ta = tracklet(a, n_a, feature_dim, model)?;
        let tb = tracklet(b, n_b, feature_dim, model)?;
        let sc: Scorer = scorer.into();
        *out_score = score_reprs(&represent(model, &ta, sc)?, &represent(model, &tb, sc)?, sc)?;
        Ok(())
    })
}

/// Contrastive loss of `rows` unit-norm embeddings where rows `k` and
/// `k + rows/2` are positives; the gradient is written to `out_grad` when
/// it is not NULL.
///
/// # Safety
/// `embeddings` must hold `rows × cols` doubles, `out_grad` (if not NULL)
/// the same, and `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reid_nt_xent_loss(
    embeddings: *const f64,
    rows: usize,
    cols: usize,
    temperature: f64,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> ReidStatus {
    guard(|| {
        out_ptr(out_loss, "out_loss")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(ReidStatus::InvalidArgument, "matrix size overflows"))?;
        let e = Tensor::from_vec(rows, cols, input(embeddings, n, "embeddings")?.to_vec())?;
        let out = nt_xent_loss(&e, &LossConfig { temperature })?;
        *out_loss = out.loss;
        if !out_grad.is_null() {
            slice::from_raw_parts_mut(out_grad, n).copy_from_slice(out.grad.data());
        }
        Ok(())
    })
}

/// Area under the ROC curve; `labels` are 0 or nonzero.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn reid_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ReidStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let s = input(scores, n, "scores")?;
        let l: Vec<bool> = input(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        *out = roc_auc(s, &l)?;
        Ok(())
    })
}

/// Smallest threshold whose false positive rate on the labelled scores is
/// at most `target_fpr`.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn reid_calibrate_threshold(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    target_fpr: f64,
    out: *mut f64,
) -> ReidStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let s = input(scores, n, "scores")?;
        let l = input(labels, n, "labels")?;
        let pairs: Vec<(f64, bool)> = s.iter().zip(l).map(|(&x, &y)| (x, y != 0)).collect();
        *out = calibrate_threshold(&pairs, target_fpr)?;
        Ok(())
    })
}
