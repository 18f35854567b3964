//! C ABI for the saliency engine.
//!
//! Every fallible function returns a [`VcxStatus`]. On failure a message is
//! kept per thread and can be read with [`vcx_last_error_message`].
//! Handles ([`VcxOracle`], [`VcxExplanation`]) are opaque and must be
//! released with their `_free` function. Pointers returned by accessors
//! borrow from the handle and stay valid until it is freed.
//!
//! Images are passed as row-major `H × W × C` float32 arrays with values in
//! `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vitcx::eval::PerturbationCurve;
use vitcx::raster::write_vcx1;
use vitcx::{
    BoundingBox, Error, ExplainConfig, Explanation, Image, ImageTensor, MaskMode, ModelOracle, OracleSpec,
    SaliencyKind, SaliencyMap, ScoreMode,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Oracle = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcxMaskMode {
    Vit = 0,
    VitUnclustered = 1,
    Random = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcxScoreMode {
    Debiased = 0,
    Raw = 1,
}

/// Explanation parameters. Obtain defaults from
/// [`vcx_explain_config_default`] and override fields as needed. Enum
/// fields must hold one of their declared enumerators.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcxExplainConfig {
    /// Block whose embeddings become masks; negative selects the last block.
    pub block_index: i64,
    pub delta: f64,
    pub sigma: f64,
    pub mask_mode: VcxMaskMode,
    pub num_random_masks: usize,
    pub random_grid: usize,
    pub random_keep_prob: f64,
    pub score_mode: VcxScoreMode,
    pub pcb: bool,
    pub seed: u64,
    /// Class to explain; negative selects the oracle's top-1 class.
    pub target_class: i64,
    pub batch_size: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VcxOracleInfo {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub num_blocks: usize,
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VcxBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// A connected classifier.
pub struct VcxOracle {
    inner: Box<dyn ModelOracle + Send>,
}

/// The result of one explanation run.
pub struct VcxExplanation {
    inner: Explanation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> VcxStatus {
    if err.is_oracle_failure() {
        VcxStatus::Oracle
    } else if err.is_io_failure() {
        VcxStatus::Io
    } else {
        VcxStatus::InvalidArgument
    }
}

struct Failure(VcxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(VcxStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> VcxStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => VcxStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            VcxStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VcxStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn checked_len(dims: &[usize]) -> Result<usize, Failure> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Failure(VcxStatus::InvalidArgument, "dimensions overflow".into()))
}

/// Text of the last error raised on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vcx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vcx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn vcx_explain_config_default() -> VcxExplainConfig {
    let d = ExplainConfig::default();
    VcxExplainConfig {
        block_index: -1,
        delta: d.delta,
        sigma: d.sigma,
        mask_mode: VcxMaskMode::Vit,
        num_random_masks: d.num_random_masks,
        random_grid: d.random_grid,
        random_keep_prob: d.random_keep_prob,
        score_mode: VcxScoreMode::Debiased,
        pcb: d.pcb,
        seed: d.seed,
        target_class: -1,
        batch_size: d.batch_size,
    }
}

fn to_config(c: &VcxExplainConfig) -> ExplainConfig {
    ExplainConfig {
        block_index: usize::try_from(c.block_index).ok(),
        delta: c.delta,
        sigma: c.sigma,
        mask_mode: match c.mask_mode {
            VcxMaskMode::Vit => MaskMode::Vit,
            VcxMaskMode::VitUnclustered => MaskMode::VitUnclustered,
            VcxMaskMode::Random => MaskMode::Random,
        },
        num_random_masks: c.num_random_masks,
        random_grid: c.random_grid,
        random_keep_prob: c.random_keep_prob,
        score_mode: match c.score_mode {
            VcxScoreMode::Debiased => ScoreMode::Debiased,
            VcxScoreMode::Raw => ScoreMode::Raw,
        },
        pcb: c.pcb,
        seed: c.seed,
        target_class: usize::try_from(c.target_class).ok(),
        batch_size: c.batch_size,
    }
}

/// Open an oracle from a spec string: `builtin-toy`,
/// `subprocess:<command>` or `tcp:<host:port>`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vcx_oracle_open(spec: *const c_char, out: *mut *mut VcxOracle) -> VcxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let spec: OracleSpec = str_arg(spec, "spec")?.parse()?;
        let oracle = VcxOracle { inner: spec.connect()? };
        *out = Box::into_raw(Box::new(oracle));
        Ok(())
    })
}

/// # Safety
/// `oracle` must come from [`vcx_oracle_open`] and not be used afterwards.
/// Null is accepted.
#[no_mangle]
pub unsafe extern "C" fn vcx_oracle_free(oracle: *mut VcxOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// # Safety
/// `oracle` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vcx_oracle_info(oracle: *const VcxOracle, out: *mut VcxOracleInfo) -> VcxStatus {
    guard(|| {
        let oracle = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let info = oracle.inner.info()?;
        *out = VcxOracleInfo {
            input_height: info.input_height,
            input_width: info.input_width,
            channels: info.channels,
            num_classes: info.num_classes,
            num_blocks: info.available_blocks.len(),
        };
        Ok(())
    })
}

/// Explain one image. `pixels` holds `height * width * channels` values.
/// A null `config` uses the defaults.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcx_explain(
    oracle: *const VcxOracle,
    pixels: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    config: *const VcxExplainConfig,
    out: *mut *mut VcxExplanation,
) -> VcxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let oracle = oracle.as_ref().ok_or_else(|| null("oracle"))?;
        let len = checked_len(&[height, width, channels])?;
        let data = slice_arg(pixels, len, "pixels")?.to_vec();
        let image = Image::try_from(ImageTensor::new(height, width, channels, data)?)?;
        let cfg = match config.as_ref() {
            Some(c) => to_config(c),
            None => ExplainConfig::default(),
        };
        let inner = vitcx::explain(oracle.inner.as_ref(), &image, &cfg)?;
        *out = Box::into_raw(Box::new(VcxExplanation { inner }));
        Ok(())
    })
}

/// # Safety
/// `explanation` must come from [`vcx_explain`] and not be used afterwards.
/// Null is accepted.
#[no_mangle]
pub unsafe extern "C" fn vcx_explanation_free(explanation: *mut VcxExplanation) {
    if !explanation.is_null() {
        drop(Box::from_raw(explanation));
    }
}

/// Borrow the normalized saliency map (`height * width` values in `[0, 1]`).
///
/// # Safety
/// `explanation` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcx_explanation_saliency(
    explanation: *const VcxExplanation,
    data: *mut *const f32,
    height: *mut usize,
    width: *mut usize,
) -> VcxStatus {
    guard(|| {
        let e = explanation.as_ref().ok_or_else(|| null("explanation"))?;
        if data.is_null() || height.is_null() || width.is_null() {
            return Err(null("output pointer"));
        }
        let map = &e.inner.saliency;
        *data = map.values().as_ptr();
        *height = map.height();
        *width = map.width();
        Ok(())
    })
}

/// Borrow the per-mask scores used for aggregation.
///
/// # Safety
/// `explanation` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcx_explanation_scores(
    explanation: *const VcxExplanation,
    data: *mut *const f64,
    len: *mut usize,
) -> VcxStatus {
    guard(|| {
        let e = explanation.as_ref().ok_or_else(|| null("explanation"))?;
        if data.is_null() || len.is_null() {
            return Err(null("output pointer"));
        }
        *data = e.inner.scores.as_ptr();
        *len = e.inner.scores.len();
        Ok(())
    })
}

/// Target class, mask count, and mean score `μ` of an explanation.
///
/// # Safety
/// `explanation` must be a live handle; out-pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn vcx_explanation_summary(
    explanation: *const VcxExplanation,
    target_class: *mut usize,
    num_masks: *mut usize,
    mu: *mut f64,
) -> VcxStatus {
    guard(|| {
        let e = explanation.as_ref().ok_or_else(|| null("explanation"))?;
        if let Some(t) = target_class.as_mut() {
            *t = e.inner.target_class;
        }
        if let Some(k) = num_masks.as_mut() {
            *k = e.inner.num_masks();
        }
        if let Some(m) = mu.as_mut() {
            *m = e.inner.decomposition.mu;
        }
        Ok(())
    })
}

/// Write the normalized saliency map as a VCX1 raw file.
///
/// # Safety
/// `explanation` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vcx_explanation_write_vcx1(
    explanation: *const VcxExplanation,
    path: *const c_char,
) -> VcxStatus {
    guard(|| {
        let e = explanation.as_ref().ok_or_else(|| null("explanation"))?;
        let path = str_arg(path, "path")?;
        let map = &e.inner.saliency;
        write_vcx1(Path::new(path), map.height(), map.width(), map.values())?;
        Ok(())
    })
}

/// `noisy_masked + (clean_full − noisy_full)`.
#[no_mangle]
pub extern "C" fn vcx_debiased_score(noisy_masked: f64, clean_full: f64, noisy_full: f64) -> f64 {
    vitcx::debiased_score(noisy_masked, clean_full, noisy_full)
}

/// Trapezoidal area under a curve whose fractions ascend from 0 to 1.
///
/// # Safety
/// `fractions` and `scores` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcx_auc(fractions: *const f64, scores: *const f64, len: usize, out: *mut f64) -> VcxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let curve = PerturbationCurve::new(
            slice_arg(fractions, len, "fractions")?.to_vec(),
            slice_arg(scores, len, "scores")?.to_vec(),
        )?;
        *out = vitcx::auc(&curve);
        Ok(())
    })
}

/// Whether the peak of `saliency` (lowest row-major index on ties) falls in
/// any of `boxes`.
///
/// # Safety
/// `saliency` must hold `height * width` values, `boxes` `num_boxes`
/// entries; `hit` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcx_pointing_game(
    saliency: *const f32,
    height: usize,
    width: usize,
    boxes: *const VcxBox,
    num_boxes: usize,
    hit: *mut bool,
) -> VcxStatus {
    guard(|| {
        let hit = hit.as_mut().ok_or_else(|| null("hit"))?;
        let len = checked_len(&[height, width])?;
        let map = SaliencyMap::new(
            height,
            width,
            slice_arg(saliency, len, "saliency")?.to_vec(),
            SaliencyKind::Normalized,
        )?;
        let boxes = slice_arg(boxes, num_boxes, "boxes")?
            .iter()
            .map(|b| BoundingBox::new(b.x0, b.y0, b.x1, b.y1, width, height))
            .collect::<Result<Vec<_>, _>>()?;
        *hit = vitcx::pointing_game(&map, &boxes)?;
        Ok(())
    })
}
