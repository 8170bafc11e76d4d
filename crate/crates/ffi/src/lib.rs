//! C ABI over the `nwsr` library.
//!
//! Layouts and models are opaque handles created and destroyed through this
//! interface. Images cross the boundary as row-major `double` buffers owned by
//! the caller. Every fallible call returns an [`NwsrStatus`]; on failure the
//! message is available from [`nwsr_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nwsr::baseline::{default_sigma, delaunay_triangulate, interpolate_linear, mean_fiber_spacing, nw_gaussian_reconstruct};
use nwsr::error::Error;
use nwsr::imaging::{CartesianImage, FiberLayout};
use nwsr::network::{ArchKind, NetInput, Network};
use nwsr::tensor::Tensor;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NwsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Layout = 4,
    Degenerate = 5,
    Io = 6,
    Checkpoint = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// Fiber layout handle.
pub struct NwsrLayout {
    inner: FiberLayout,
}

/// Trained network handle.
pub struct NwsrModel {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> NwsrStatus {
    match err {
        Error::Shape(_) | Error::Size(_) => NwsrStatus::Shape,
        Error::Layout(_) | Error::Collision { .. } | Error::OutOfBounds { .. } | Error::EmptyCell(_) => {
            NwsrStatus::Layout
        }
        Error::Degenerate(_) | Error::DegenerateFrame(_) | Error::ZeroKernel(_) => NwsrStatus::Degenerate,
        Error::Io(_) | Error::Png(_) | Error::Parse { .. } => NwsrStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => NwsrStatus::Checkpoint,
        _ => NwsrStatus::InvalidArgument,
    }
}

struct Fail(NwsrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: NwsrStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NwsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NwsrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NwsrStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(NwsrStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if ptr.is_null() {
        return fail(NwsrStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref()
        .ok_or_else(|| Fail(NwsrStatus::NullPointer, format!("{what} is null")))
}

fn pixels(width: usize, height: usize) -> Result<usize, Fail> {
    match width.checked_mul(height) {
        Some(n) if n > 0 => Ok(n),
        _ => fail(NwsrStatus::InvalidArgument, format!("bad image size {width}x{height}")),
    }
}

fn write_image(img: &CartesianImage, out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out_len < img.len() {
        return fail(
            NwsrStatus::BufferTooSmall,
            format!("output holds {out_len} values, need {}", img.len()),
        );
    }
    let dst = unsafe { slice_mut(out, img.len(), "output buffer")? };
    dst.copy_from_slice(img.data());
    Ok(())
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nwsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nwsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a seeded hexagonal-jitter layout inside a circular field of view.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_generate(
    fov_radius: f64,
    mean_spacing: f64,
    seed: u64,
    out: *mut *mut NwsrLayout,
) -> NwsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(NwsrStatus::NullPointer, "out is null");
        }
        let inner = nwsr::simulate::generate_layout(fov_radius, mean_spacing, seed)?;
        *out = Box::into_raw(Box::new(NwsrLayout { inner }));
        Ok(())
    })
}

/// Builds a layout from `n` interleaved `(x, y)` centres.
///
/// # Safety
/// `xy` must point to `2 * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_from_centres(
    xy: *const f64,
    n: usize,
    fov_cx: f64,
    fov_cy: f64,
    fov_radius: f64,
    out: *mut *mut NwsrLayout,
) -> NwsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(NwsrStatus::NullPointer, "out is null");
        }
        let flat = slice(xy, n.saturating_mul(2), "xy")?;
        let centres = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let inner = FiberLayout::new(centres, (fov_cx, fov_cy), fov_radius)?;
        *out = Box::into_raw(Box::new(NwsrLayout { inner }));
        Ok(())
    })
}

/// Number of fibers; 0 for a null handle.
///
/// # Safety
/// `layout` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_len(layout: *const NwsrLayout) -> usize {
    layout.as_ref().map_or(0, |l| l.inner.len())
}

/// Side of the square image grid enclosing the field of view; 0 for null.
///
/// # Safety
/// `layout` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_side(layout: *const NwsrLayout) -> usize {
    layout.as_ref().map_or(0, |l| l.inner.bounding_box_side())
}

/// Writes the field-of-view centre and radius.
///
/// # Safety
/// `cx`, `cy` and `radius` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_fov(
    layout: *const NwsrLayout,
    cx: *mut f64,
    cy: *mut f64,
    radius: *mut f64,
) -> NwsrStatus {
    guard(|| {
        let l = handle(layout, "layout")?;
        if cx.is_null() || cy.is_null() || radius.is_null() {
            return fail(NwsrStatus::NullPointer, "output pointer is null");
        }
        let (x, y) = l.inner.fov_centre();
        *cx = x;
        *cy = y;
        *radius = l.inner.fov_radius();
        Ok(())
    })
}

/// Copies the centres as interleaved `(x, y)` pairs into `out`.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_centres(
    layout: *const NwsrLayout,
    out: *mut f64,
    out_len: usize,
) -> NwsrStatus {
    guard(|| {
        let l = handle(layout, "layout")?;
        let need = 2 * l.inner.len();
        if out_len < need {
            return fail(NwsrStatus::BufferTooSmall, format!("output holds {out_len} values, need {need}"));
        }
        let dst = slice_mut(out, need, "output buffer")?;
        for (d, &(x, y)) in dst.chunks_exact_mut(2).zip(l.inner.centres()) {
            d[0] = x;
            d[1] = y;
        }
        Ok(())
    })
}

/// # Safety
/// `layout` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nwsr_layout_free(layout: *mut NwsrLayout) {
    if !layout.is_null() {
        drop(Box::from_raw(layout));
    }
}

/// Averages a `width x height` image over each fiber's Voronoi cell.
///
/// # Safety
/// `hr` must point to `width * height` doubles and `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn nwsr_voronoi_downsample(
    layout: *const NwsrLayout,
    hr: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> NwsrStatus {
    guard(|| {
        let l = handle(layout, "layout")?;
        let n = pixels(width, height)?;
        let img = CartesianImage::from_vec(width, height, slice(hr, n, "hr")?.to_vec())?;
        let sig = nwsr::simulate::voronoi_downsample(&img, &l.inner)?;
        if out_len < sig.len() {
            return fail(NwsrStatus::BufferTooSmall, format!("output holds {out_len} values, need {}", sig.len()));
        }
        slice_mut(out, sig.len(), "output buffer")?.copy_from_slice(&sig);
        Ok(())
    })
}

/// Delaunay (INTER) reconstruction; pixels outside the hull are 0.
///
/// # Safety
/// `signals` must point to one double per fiber; `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nwsr_reconstruct_delaunay(
    layout: *const NwsrLayout,
    signals: *const f64,
    n_signals: usize,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> NwsrStatus {
    guard(|| {
        let l = handle(layout, "layout")?;
        pixels(width, height)?;
        let s = slice(signals, n_signals, "signals")?;
        let tri = delaunay_triangulate(&l.inner)?;
        write_image(&interpolate_linear(s, &tri, width, height)?, out, out_len)
    })
}

/// Gaussian Nadaraya-Watson reconstruction. A `sigma <= 0` picks the
/// default width from the mean fiber spacing.
///
/// # Safety
/// `signals` must point to one double per fiber; `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nwsr_reconstruct_nw_gauss(
    layout: *const NwsrLayout,
    signals: *const f64,
    n_signals: usize,
    sigma: f64,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> NwsrStatus {
    guard(|| {
        let l = handle(layout, "layout")?;
        pixels(width, height)?;
        let s = slice(signals, n_signals, "signals")?;
        let sigma = if sigma > 0.0 {
            sigma
        } else {
            default_sigma(mean_fiber_spacing(&l.inner))
        };
        write_image(&nw_gaussian_reconstruct(s, &l.inner, sigma, width, height)?, out, out_len)
    })
}

unsafe fn image_pair(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
) -> Result<(CartesianImage, CartesianImage), Fail> {
    let n = pixels(width, height)?;
    Ok((
        CartesianImage::from_vec(width, height, slice(a, n, "pred")?.to_vec())?,
        CartesianImage::from_vec(width, height, slice(b, n, "reference")?.to_vec())?,
    ))
}

/// PSNR in dB; infinite for identical images.
///
/// # Safety
/// `pred` and `reference` must each point to `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn nwsr_psnr(
    pred: *const f64,
    reference: *const f64,
    width: usize,
    height: usize,
    data_range: f64,
    out: *mut f64,
) -> NwsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(NwsrStatus::NullPointer, "out is null");
        }
        let (a, b) = image_pair(pred, reference, width, height)?;
        *out = nwsr::iqa::psnr(&a, &b, data_range)?;
        Ok(())
    })
}

/// Mean SSIM with an 11x11 Gaussian window.
///
/// # Safety
/// `pred` and `reference` must each point to `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn nwsr_ssim(
    pred: *const f64,
    reference: *const f64,
    width: usize,
    height: usize,
    data_range: f64,
    out: *mut f64,
) -> NwsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(NwsrStatus::NullPointer, "out is null");
        }
        let (a, b) = image_pair(pred, reference, width, height)?;
        *out = nwsr::iqa::ssim(&a, &b, data_range)?;
        Ok(())
    })
}

/// Loads a checkpoint descriptor (JSON) and its parameter blob.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nwsr_model_load(path: *const c_char, out: *mut *mut NwsrModel) -> NwsrStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(NwsrStatus::NullPointer, "path or out is null");
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(NwsrStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = nwsr::checkpoint::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(NwsrModel { inner }));
        Ok(())
    })
}

/// 1 if the model consumes a sparse signal plus mask, 0 for a dense image,
/// -1 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nwsr_model_is_sparse(model: *const NwsrModel) -> i32 {
    match model.as_ref() {
        None => -1,
        Some(m) => i32::from(m.inner.architecture().kind == ArchKind::Nw),
    }
}

/// Runs the network on a normalized frame. Dense models ignore `mask`,
/// which may be null; sparse models require it.
///
/// # Safety
/// `input` (and `mask` when used) must point to `width * height` doubles;
/// `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nwsr_model_predict(
    model: *const NwsrModel,
    input: *const f64,
    mask: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> NwsrStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let n = pixels(width, height)?;
        let x = Tensor::from_vec(1, height, width, slice(input, n, "input")?.to_vec())?;
        let net_in = match m.inner.architecture().kind {
            ArchKind::Cnn => NetInput::Dense(x),
            ArchKind::Nw => {
                if mask.is_null() {
                    return fail(NwsrStatus::NullPointer, "sparse model needs a mask");
                }
                let mk = Tensor::from_vec(1, height, width, slice(mask, n, "mask")?.to_vec())?;
                NetInput::Sparse { s: x, m: mk }
            }
        };
        let y = m.inner.predict(&net_in)?;
        write_image(&y.to_image()?, out, out_len)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nwsr_model_free(model: *mut NwsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
