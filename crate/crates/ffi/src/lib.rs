//! C ABI over `celldet`.
//!
//! Every fallible call returns a [`CelldetStatus`]; on failure the message is
//! kept per thread and can be copied out with [`celldet_last_error`].
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use celldet::assignment::{solve_assignment, CostMatrix};
use celldet::container::load_params;
use celldet::decoder::{decoder_forward, DecoderParams};
use celldet::eval::{average_precision, column_rmse, CountMatrix};
use celldet::tensor::FeatureGrid;
use celldet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CelldetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Io = 5,
    Parse = 6,
    Divergence = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for CelldetStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => CelldetStatus::Config,
            Error::Shape(_) | Error::MissingCache(_) => CelldetStatus::Shape,
            Error::Io { .. } => CelldetStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Image(_) => CelldetStatus::Parse,
            Error::Divergence { .. } => CelldetStatus::Divergence,
            _ => CelldetStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: CelldetStatus, msg: impl Into<String>) -> CelldetStatus {
    set_error(msg);
    status
}

/// Run `f`, translating errors and panics into a status.
fn guard<F>(f: F) -> CelldetStatus
where
    F: FnOnce() -> Result<(), CelldetStatus>,
{
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CelldetStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(CelldetStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: celldet::Result<T>) -> Result<T, CelldetStatus> {
    r.map_err(|e| fail(CelldetStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), CelldetStatus> {
    if p.is_null() {
        Err(fail(CelldetStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Borrow `len` elements; a null pointer is accepted only when `len == 0`.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], CelldetStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], CelldetStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Opaque decoder: trained parameters plus the number of slots per cell.
pub struct CelldetDecoder {
    params: DecoderParams,
    steps: usize,
}

/// Layout of a loaded decoder.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CelldetDecoderInfo {
    pub feature_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub coord_arity: usize,
    /// Slots decoded per cell.
    pub steps: usize,
    /// Values per slot record, `2 + num_classes + coord_arity`.
    pub slot_width: usize,
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn celldet_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Load decoder parameters from a tensor container file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn celldet_decoder_load(
    path: *const c_char,
    steps: usize,
    out: *mut *mut CelldetDecoder,
) -> CelldetStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if steps == 0 {
            return Err(fail(CelldetStatus::InvalidArgument, "steps must be >= 1"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(CelldetStatus::InvalidArgument, "path is not UTF-8"))?;
        let params = lift(load_params(Path::new(path)))?;
        *out = Box::into_raw(Box::new(CelldetDecoder { params, steps }));
        Ok(())
    })
}

/// Release a decoder. Null is ignored.
///
/// # Safety
/// `decoder` must come from [`celldet_decoder_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn celldet_decoder_free(decoder: *mut CelldetDecoder) {
    if !decoder.is_null() {
        drop(Box::from_raw(decoder));
    }
}

/// # Safety
/// `decoder` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn celldet_decoder_info(
    decoder: *const CelldetDecoder,
    out: *mut CelldetDecoderInfo,
) -> CelldetStatus {
    guard(|| {
        non_null(decoder, "decoder")?;
        non_null(out, "out")?;
        let d = &*decoder;
        let c = d.params.config();
        *out = CelldetDecoderInfo {
            feature_dim: c.feature_dim,
            hidden_size: c.hidden_size,
            num_layers: c.num_layers,
            num_classes: c.num_classes,
            coord_arity: c.coord_arity,
            steps: d.steps,
            slot_width: c.output_width(),
        };
        Ok(())
    })
}

/// Decode a `batch × height × width × feature_dim` feature grid into
/// `batch × height × width × steps × slot_width` prediction values.
///
/// # Safety
/// `features` must hold the full grid and `out` must have `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn celldet_decoder_forward(
    decoder: *const CelldetDecoder,
    features: *const f64,
    batch: usize,
    height: usize,
    width: usize,
    feature_dim: usize,
    out: *mut f64,
    out_len: usize,
) -> CelldetStatus {
    guard(|| {
        non_null(decoder, "decoder")?;
        let d = &*decoder;
        let n = batch
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(feature_dim))
            .ok_or_else(|| fail(CelldetStatus::InvalidArgument, "grid size overflows"))?;
        let values = slice(features, n, "features")?.to_vec();
        let grid = lift(FeatureGrid::new(batch, height, width, feature_dim, values))?;
        let pred = lift(decoder_forward(&grid, &d.params, d.steps))?;
        if out_len < pred.data.len() {
            return Err(fail(
                CelldetStatus::BufferTooSmall,
                format!("output needs {} values, buffer has {out_len}", pred.data.len()),
            ));
        }
        slice_mut(out, pred.data.len(), "out")?.copy_from_slice(&pred.data);
        Ok(())
    })
}

/// Minimum-cost assignment of a row-major `rows × cols` cost matrix, `rows >= cols`.
/// `matches[j]` receives the row matched to column `j`.
///
/// # Safety
/// `cost` must hold `rows * cols` values and `matches` must have `cols` writable slots.
#[no_mangle]
pub unsafe extern "C" fn celldet_solve_assignment(
    cost: *const f64,
    rows: usize,
    cols: usize,
    matches: *mut usize,
    total_cost: *mut f64,
) -> CelldetStatus {
    guard(|| {
        non_null(total_cost, "total_cost")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(CelldetStatus::InvalidArgument, "matrix size overflows"))?;
        let c = lift(CostMatrix::new(rows, cols, slice(cost, n, "cost")?.to_vec()))?;
        let a = lift(solve_assignment(&c))?;
        slice_mut(matches, cols, "matches")?.copy_from_slice(&a.matches);
        *total_cost = a.total_cost;
        Ok(())
    })
}

/// All-points average precision of `n` scored detections (`flags[i]` nonzero = true positive).
///
/// # Safety
/// `flags` and `scores` must each hold `n` values; `ap` must be writable.
#[no_mangle]
pub unsafe extern "C" fn celldet_average_precision(
    flags: *const u8,
    scores: *const f64,
    n: usize,
    n_gt: usize,
    ap: *mut f64,
) -> CelldetStatus {
    guard(|| {
        non_null(ap, "ap")?;
        let flags: Vec<bool> = slice(flags, n, "flags")?.iter().map(|f| *f != 0).collect();
        let scores = slice(scores, n, "scores")?;
        if scores.iter().any(|s| s.is_nan()) {
            return Err(fail(CelldetStatus::InvalidArgument, "scores contain NaN"));
        }
        let curve = lift(average_precision(&flags, scores, n_gt))?;
        *ap = curve.ap;
        Ok(())
    })
}

/// Column-wise count RMSE over row-major `n_images × n_classes` count matrices.
///
/// # Safety
/// `truth` and `predicted` must hold `n_images * n_classes` values,
/// `per_class` must have `n_classes` writable slots (or be null), `mean` must be writable.
#[no_mangle]
pub unsafe extern "C" fn celldet_column_rmse(
    truth: *const u64,
    predicted: *const u64,
    n_images: usize,
    n_classes: usize,
    per_class: *mut f64,
    mean: *mut f64,
) -> CelldetStatus {
    guard(|| {
        non_null(mean, "mean")?;
        let n = n_images
            .checked_mul(n_classes)
            .ok_or_else(|| fail(CelldetStatus::InvalidArgument, "matrix size overflows"))?;
        let m = CountMatrix::new(
            n_images,
            n_classes,
            slice(truth, n, "truth")?.to_vec(),
            slice(predicted, n, "predicted")?.to_vec(),
        );
        let (per, avg) = lift(m.and_then(|m| column_rmse(&m)))?;
        if !per_class.is_null() {
            slice_mut(per_class, n_classes, "per_class")?.copy_from_slice(&per);
        }
        *mean = avg;
        Ok(())
    })
}
