//! C ABI over `aisc-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_load`
//! and released with the matching `*_free`. Every fallible function returns
//! an [`AiscStatus`]; on failure a description is available from
//! [`aisc_last_error_message`] on the same thread. Matrices are row-major
//! `double` arrays. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aisc_core::checkpoint::load_checkpoint;
use aisc_core::data::{self, Label, PairSample};
use aisc_core::appearance::AppearanceVector;
use aisc_core::network::PairModel;
use aisc_core::{Aisc, Error, LandmarkShape, Matrix};

/// Result of every fallible call. Values 2 to 5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AiscStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    Config = 2,
    /// Invalid input data, file or format error.
    Data = 3,
    /// Singular-value degeneracy on the SVD path or a rank-deficient shape.
    Degenerate = 4,
    Divergence = 5,
    /// Internal panic; the library state is still usable.
    Internal = 6,
}

/// Which backward path [`aisc_backward`] uses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AiscBackwardPath {
    Svd = 0,
    Projector = 1,
}

/// Landmark shape handle.
pub struct AiscShape {
    inner: LandmarkShape,
}

/// Trained model handle.
pub struct AiscModel {
    inner: PairModel,
}

/// Output of [`aisc_model_predict`]. Branch probabilities that the model
/// does not produce are reported as NaN with the matching flag cleared.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AiscScore {
    pub p_appearance: f64,
    pub p_shape: f64,
    pub p_fused: f64,
    pub has_appearance: bool,
    pub has_shape: bool,
    pub is_kin: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AiscStatus {
    match e.exit_code() {
        2 => AiscStatus::Config,
        4 => AiscStatus::Degenerate,
        5 => AiscStatus::Divergence,
        _ => AiscStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AiscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AiscStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} must not be null"));
            AiscStatus::NullArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            AiscStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Core(Error::InvalidInput("path is not valid UTF-8".into())))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// so a caller can size the buffer with a first call passing `len = 0`.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len = 0`.
#[no_mangle]
pub unsafe extern "C" fn aisc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a shape from `m` landmarks given as `x0, y0, x1, y1, ...`.
///
/// # Safety
/// `xy` must point to `2 * m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aisc_shape_new(xy: *const f64, m: usize, out: *mut *mut AiscShape) -> AiscStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let values = slice(xy, 2 * m, "xy")?;
        let inner = LandmarkShape::new(Matrix::from_vec(m, 2, values.to_vec())?)?;
        *out = Box::into_raw(Box::new(AiscShape { inner }));
        Ok(())
    })
}

/// Loads a text or binary landmark file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aisc_shape_load(path: *const c_char, out: *mut *mut AiscShape) -> AiscStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = data::load_landmarks(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(AiscShape { inner }));
        Ok(())
    })
}

/// Number of landmarks, or 0 for a null handle.
///
/// # Safety
/// `shape` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aisc_shape_landmark_count(shape: *const AiscShape) -> usize {
    shape.as_ref().map_or(0, |s| s.inner.landmark_count())
}

/// Releases a shape. Null is ignored.
///
/// # Safety
/// `shape` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aisc_shape_free(shape: *mut AiscShape) {
    if !shape.is_null() {
        drop(Box::from_raw(shape));
    }
}

/// Computes the comparison matrix of two shapes with the same landmark count.
///
/// `b_out` (m × m) and `angles_out` (2 principal angles, ascending) may be
/// null when not wanted; `norm_out` receives the Frobenius norm when non-null.
///
/// # Safety
/// Handles must be live; non-null outputs must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn aisc_compare(
    a: *const AiscShape,
    b: *const AiscShape,
    centering: bool,
    b_out: *mut f64,
    norm_out: *mut f64,
    angles_out: *mut f64,
) -> AiscStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        let aisc = Aisc::new(centering);
        let (feature, d0, d1) = aisc.forward_with_decompositions(&a.inner, &b.inner)?;
        if !b_out.is_null() {
            let v = feature.b.as_slice();
            ptr::copy_nonoverlapping(v.as_ptr(), b_out, v.len());
        }
        if !norm_out.is_null() {
            *norm_out = feature.frobenius_norm();
        }
        if !angles_out.is_null() {
            let angles = aisc.geodesic_info(&feature, &d0, &d1)?.principal_angles();
            ptr::copy_nonoverlapping(angles.as_ptr(), angles_out, angles.len());
        }
        Ok(())
    })
}

/// Gradient of a loss with respect to both shapes, given its gradient with
/// respect to the comparison matrix (`upstream`, m × m). Outputs are m × 2.
///
/// The SVD path returns `AiscStatus::Degenerate` when a shape's two singular
/// values nearly coincide; the projector path has no such restriction.
///
/// # Safety
/// Handles must be live; `upstream` holds m·m doubles, `grad_a`/`grad_b`
/// each have room for 2·m.
#[no_mangle]
pub unsafe extern "C" fn aisc_backward(
    a: *const AiscShape,
    b: *const AiscShape,
    centering: bool,
    path: AiscBackwardPath,
    upstream: *const f64,
    grad_a: *mut f64,
    grad_b: *mut f64,
) -> AiscStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        if grad_a.is_null() || grad_b.is_null() {
            return Err(Failure::Null("gradient output"));
        }
        let m = a.inner.landmark_count();
        let g = Matrix::from_vec(m, m, slice(upstream, m * m, "upstream")?.to_vec())?;
        let aisc = Aisc::new(centering);
        let (_, d0, d1) = aisc.forward_with_decompositions(&a.inner, &b.inner)?;
        let (ga, gb) = match path {
            AiscBackwardPath::Svd => aisc.backward_svd(&d0, &d1, &g)?,
            AiscBackwardPath::Projector => aisc.backward_projector(&d0, &d1, &g)?,
        };
        ptr::copy_nonoverlapping(ga.as_slice().as_ptr(), grad_a, 2 * m);
        ptr::copy_nonoverlapping(gb.as_slice().as_ptr(), grad_b, 2 * m);
        Ok(())
    })
}

/// Loads a checkpoint written by `aisc train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aisc_model_load(path: *const c_char, out: *mut *mut AiscModel) -> AiscStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = load_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(AiscModel { inner }));
        Ok(())
    })
}

/// Landmark count the model was trained on, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aisc_model_landmark_count(model: *const AiscModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.landmark_count)
}

/// Appearance vector length the model expects; 0 when it uses shape only.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aisc_model_appearance_dim(model: *const AiscModel) -> usize {
    model.as_ref().and_then(|m| m.inner.appearance_dim).unwrap_or(0)
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aisc_model_free(model: *mut AiscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores one pair. `appearance_a`/`appearance_b` hold `dim` values each and
/// must be null (with `dim = 0`) for shape-only models.
///
/// # Safety
/// Handles must be live; appearance pointers must hold `dim` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aisc_model_predict(
    model: *const AiscModel,
    a: *const AiscShape,
    b: *const AiscShape,
    appearance_a: *const f64,
    appearance_b: *const f64,
    dim: usize,
    out: *mut AiscScore,
) -> AiscStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let appearance = if dim == 0 {
            None
        } else {
            Some((
                AppearanceVector::new(slice(appearance_a, dim, "appearance_a")?.to_vec())?,
                AppearanceVector::new(slice(appearance_b, dim, "appearance_b")?.to_vec())?,
            ))
        };
        // The label is not used for scoring.
        let sample = PairSample::new(a.inner.clone(), b.inner.clone(), appearance, Label::NonKin)?;
        let score = model.inner.predict(&sample)?;
        *out = AiscScore {
            p_appearance: score.p_appearance.unwrap_or(f64::NAN),
            p_shape: score.p_shape.unwrap_or(f64::NAN),
            p_fused: score.p_fused,
            has_appearance: score.p_appearance.is_some(),
            has_shape: score.p_shape.is_some(),
            is_kin: score.is_kin(),
        };
        Ok(())
    })
}
