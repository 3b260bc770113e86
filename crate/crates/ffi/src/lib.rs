//! C ABI for `ttriem`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_read`
//! style constructors and released with the matching `*_free`. Every
//! fallible call returns a [`TtriemStatus`]; on failure a description is
//! available from [`ttriem_last_error`] on the same thread. Outputs are
//! written through pointer arguments only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use rand::{rngs::StdRng, SeedableRng};
use ttriem::baselines::clip_ranks;
use ttriem::objectives::{IndexSet, Objective};
use ttriem::tt_manifold::{hess_vec_tt, project_tt, value_and_riemannian_grad, TtTangent};
use ttriem::{DenseTensor, Error, TtMatrix, TtTensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtriemStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Oversize = 3,
    InvalidValue = 4,
    Format = 5,
    Unsupported = 6,
    InvalidTangent = 7,
    DegeneratePoint = 8,
    Index = 9,
    InvalidData = 10,
    Unavailable = 11,
    Io = 12,
    Internal = 13,
    Panic = 14,
}

impl TtriemOperatorObjective {
    fn from_raw(kind: u32) -> Option<Self> {
        [Self::Quadratic, Self::Gram, Self::Rayleigh].into_iter().find(|k| *k as u32 == kind)
    }
}

impl From<&Error> for TtriemStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => Self::Dimension,
            Error::Oversize { .. } => Self::Oversize,
            Error::InvalidValue(_) => Self::InvalidValue,
            Error::Format(_) => Self::Format,
            Error::UnsupportedOperation(_) => Self::Unsupported,
            Error::InvalidTangent(_) | Error::InvalidPair => Self::InvalidTangent,
            Error::DegeneratePoint(_) => Self::DegeneratePoint,
            Error::Index(_) => Self::Index,
            Error::InvalidData(_) => Self::InvalidData,
            Error::Unavailable(_) => Self::Unavailable,
            Error::Io(_) => Self::Io,
            Error::InvalidVariable => Self::Internal,
        }
    }
}

/// A tensor in TT format.
pub struct TtriemTensor(TtTensor);

/// A linear operator in TT-matrix format.
pub struct TtriemOperator(TtMatrix);

/// A differentiable objective.
pub struct TtriemObjective(Objective);

/// A tangent vector together with the point it is attached to.
pub struct TtriemTangent(TtTangent);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> FfiResult<()>) -> TtriemStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TtriemStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            TtriemStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            TtriemStatus::from(&e)
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {what}"));
            TtriemStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> FfiResult<String> {
    if path.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Lib(Error::InvalidValue("path is not valid UTF-8".into())))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Description of the last failure on this thread, or NULL if none.
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ttriem_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttriem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a tensor from `d` cores stored back to back, core `k` shaped
/// `(ranks[k], modes[k], ranks[k+1])` with the last index fastest.
/// `ranks` has `d + 1` entries, the first and last equal to 1.
///
/// # Safety
/// `modes` must point to `d` values, `ranks` to `d + 1` and `data` to
/// `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_from_cores(
    d: usize,
    modes: *const usize,
    ranks: *const usize,
    data: *const f64,
    len: usize,
    out: *mut *mut TtriemTensor,
) -> TtriemStatus {
    guard(|| {
        let modes = slice(modes, d, "modes")?;
        let ranks = slice(ranks, d + 1, "ranks")?;
        let data = slice(data, len, "data")?;
        let mut cores = Vec::with_capacity(d);
        let mut offset = 0usize;
        for k in 0..d {
            let size = ranks[k]
                .checked_mul(modes[k])
                .and_then(|s| s.checked_mul(ranks[k + 1]))
                .ok_or_else(|| Error::InvalidValue("core size overflows".into()))?;
            let end = offset
                .checked_add(size)
                .filter(|&e| e <= data.len())
                .ok_or_else(|| Error::Dimension(format!("{len} values are too few for the declared cores")))?;
            cores.push(DenseTensor::new(vec![ranks[k], modes[k], ranks[k + 1]], data[offset..end].to_vec())?);
            offset = end;
        }
        if offset != data.len() {
            return Err(Error::Dimension(format!("{len} values given, cores hold {offset}")).into());
        }
        write_handle(out, TtriemTensor(TtTensor::new(cores)?))
    })
}

/// Random tensor with standard normal cores and interior ranks
/// `min(rank, feasible)`.
///
/// # Safety
/// `modes` must point to `d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_random(
    d: usize,
    modes: *const usize,
    rank: usize,
    seed: u64,
    out: *mut *mut TtriemTensor,
) -> TtriemStatus {
    guard(|| {
        let modes = slice(modes, d, "modes")?;
        let mut rng = StdRng::seed_from_u64(seed);
        let x = TtTensor::random(modes, &clip_ranks(modes, rank), &mut rng)?;
        write_handle(out, TtriemTensor(x))
    })
}

/// Reads a tensor in TTv1 format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_read(path: *const c_char, out: *mut *mut TtriemTensor) -> TtriemStatus {
    guard(|| {
        let x = ttriem::io::tt_read(path_arg(path)?)?;
        write_handle(out, TtriemTensor(x))
    })
}

/// Writes a tensor in TTv1 format.
///
/// # Safety
/// `x` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_write(x: *const TtriemTensor, path: *const c_char) -> TtriemStatus {
    guard(|| {
        let x = borrow(x, "x")?;
        ttriem::io::tt_write(&x.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of modes.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_order(x: *const TtriemTensor, out: *mut usize) -> TtriemStatus {
    guard(|| write_out(out, borrow(x, "x")?.0.d(), "out"))
}

/// Copies the `d + 1` TT-ranks into `out`, which holds `cap` entries.
///
/// # Safety
/// `x` must be a live handle and `out` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_ranks(x: *const TtriemTensor, out: *mut usize, cap: usize) -> TtriemStatus {
    guard(|| {
        let ranks = borrow(x, "x")?.0.ranks();
        if cap < ranks.len() {
            return Err(Error::Dimension(format!("{} ranks do not fit in {cap}", ranks.len())).into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        ptr::copy_nonoverlapping(ranks.as_ptr(), out, ranks.len());
        Ok(())
    })
}

/// Frobenius norm.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_norm(x: *const TtriemTensor, out: *mut f64) -> TtriemStatus {
    guard(|| write_out(out, borrow(x, "x")?.0.norm()?, "out"))
}

/// Single entry at the multi-index `index` of length `d`.
///
/// # Safety
/// `x` must be a live handle, `index` must hold `d` values and `out` be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_entry(
    x: *const TtriemTensor,
    index: *const usize,
    d: usize,
    out: *mut f64,
) -> TtriemStatus {
    guard(|| {
        let x = borrow(x, "x")?;
        write_out(out, x.0.entry(slice(index, d, "index")?)?, "out")
    })
}

/// TT rounding to interior ranks at most `max_rank` and relative accuracy
/// `tol`.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_round(
    x: *const TtriemTensor,
    max_rank: usize,
    tol: f64,
    out: *mut *mut TtriemTensor,
) -> TtriemStatus {
    guard(|| {
        let y = borrow(x, "x")?.0.round(&[max_rank], tol)?;
        write_handle(out, TtriemTensor(y))
    })
}

/// # Safety
/// `x` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tensor_free(x: *mut TtriemTensor) {
    free_handle(x)
}

/// Identity operator on tensors with the given modes.
///
/// # Safety
/// `modes` must point to `d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_operator_identity(
    d: usize,
    modes: *const usize,
    out: *mut *mut TtriemOperator,
) -> TtriemStatus {
    guard(|| write_handle(out, TtriemOperator(TtMatrix::identity(slice(modes, d, "modes")?))))
}

/// Random symmetric operator of TT-rank at most `2 * rank`.
///
/// # Safety
/// `modes` must point to `d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_operator_random_symmetric(
    d: usize,
    modes: *const usize,
    rank: usize,
    seed: u64,
    out: *mut *mut TtriemOperator,
) -> TtriemStatus {
    guard(|| {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = TtMatrix::random_symmetric(slice(modes, d, "modes")?, rank, &mut rng)?;
        write_handle(out, TtriemOperator(a))
    })
}

/// Reads an operator in TMv1 format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_operator_read(path: *const c_char, out: *mut *mut TtriemOperator) -> TtriemStatus {
    guard(|| {
        let a = ttriem::io::ttmat_read(path_arg(path)?)?;
        write_handle(out, TtriemOperator(a))
    })
}

/// # Safety
/// `a` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ttriem_operator_free(a: *mut TtriemOperator) {
    free_handle(a)
}

/// Which quadratic functional of an operator to build.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtriemOperatorObjective {
    /// `⟨AX, X⟩` for symmetric `A`.
    Quadratic = 0,
    /// `⟨AX, AX⟩`.
    Gram = 1,
    /// `⟨AX, X⟩ / ⟨X, X⟩` for symmetric `A`.
    Rayleigh = 2,
}

/// Objective built from an operator; the operator is copied. `kind` is a
/// `TtriemOperatorObjective` value.
///
/// # Safety
/// `a` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_objective_from_operator(
    kind: u32,
    a: *const TtriemOperator,
    out: *mut *mut TtriemObjective,
) -> TtriemStatus {
    guard(|| {
        let kind = TtriemOperatorObjective::from_raw(kind)
            .ok_or_else(|| Error::InvalidValue(format!("unknown operator objective {kind}")))?;
        let a = borrow(a, "a")?.0.clone();
        let obj = match kind {
            TtriemOperatorObjective::Quadratic => Objective::quadratic_form(a)?,
            TtriemOperatorObjective::Gram => Objective::gram_quadratic_form(a)?,
            TtriemOperatorObjective::Rayleigh => Objective::rayleigh_quotient(a)?,
        };
        write_handle(out, TtriemObjective(obj))
    })
}

/// `⟨X, X⟩`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_objective_frobenius(out: *mut *mut TtriemObjective) -> TtriemStatus {
    guard(|| write_handle(out, TtriemObjective(Objective::frobenius())))
}

/// Squared error over `count` observed entries. `indices` holds `count`
/// multi-indices of length `d` back to back; `lambda > 0` adds
/// `lambda * ⟨X, X⟩`.
///
/// # Safety
/// `modes` must point to `d` values, `indices` to `count * d` values and
/// `values` to `count` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_objective_completion(
    d: usize,
    modes: *const usize,
    count: usize,
    indices: *const usize,
    values: *const f64,
    lambda: f64,
    out: *mut *mut TtriemObjective,
) -> TtriemStatus {
    guard(|| {
        let modes = slice(modes, d, "modes")?;
        let total = count
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidValue("index array size overflows".into()))?;
        let flat = slice(indices, total, "indices")?;
        let values = slice(values, count, "values")?;
        let rows = if d == 0 { Vec::new() } else { flat.chunks(d).map(<[usize]>::to_vec).collect() };
        let omega = IndexSet::new(modes, rows, values.to_vec())?;
        let obj = if lambda == 0.0 {
            Objective::completion_loss(omega)
        } else {
            Objective::regularized_completion(omega, lambda)?
        };
        write_handle(out, TtriemObjective(obj))
    })
}

/// Objective value at `x`.
///
/// # Safety
/// `obj` and `x` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_objective_value(
    obj: *const TtriemObjective,
    x: *const TtriemTensor,
    out: *mut f64,
) -> TtriemStatus {
    guard(|| {
        let (obj, x) = (borrow(obj, "obj")?, borrow(x, "x")?);
        write_out(out, obj.0.evaluate(&x.0)?, "out")
    })
}

/// # Safety
/// `obj` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ttriem_objective_free(obj: *mut TtriemObjective) {
    free_handle(obj)
}

/// Riemannian gradient of `obj` at `x`. `value` may be NULL; otherwise it
/// receives `f(x)`.
///
/// # Safety
/// `obj` and `x` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_riemannian_grad(
    obj: *const TtriemObjective,
    x: *const TtriemTensor,
    value: *mut f64,
    out: *mut *mut TtriemTangent,
) -> TtriemStatus {
    guard(|| {
        let (obj, x) = (borrow(obj, "obj")?, borrow(x, "x")?);
        let base = Arc::new(x.0.orthogonalize()?);
        let (f, g) = value_and_riemannian_grad(&obj.0, &base)?;
        if !value.is_null() {
            value.write(f);
        }
        write_handle(out, TtriemTangent(g))
    })
}

/// Riemannian Hessian applied to `z`, at the point `z` is attached to.
///
/// # Safety
/// `obj` and `z` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_hess_vec(
    obj: *const TtriemObjective,
    z: *const TtriemTangent,
    out: *mut *mut TtriemTangent,
) -> TtriemStatus {
    guard(|| {
        let (obj, z) = (borrow(obj, "obj")?, borrow(z, "z")?);
        write_handle(out, TtriemTangent(hess_vec_tt(&obj.0, &z.0)?))
    })
}

/// Orthogonal projection of `z` onto the tangent space at `x`.
///
/// # Safety
/// `x` and `z` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_project(
    x: *const TtriemTensor,
    z: *const TtriemTensor,
    out: *mut *mut TtriemTangent,
) -> TtriemStatus {
    guard(|| {
        let (x, z) = (borrow(x, "x")?, borrow(z, "z")?);
        let base = Arc::new(x.0.orthogonalize()?);
        write_handle(out, TtriemTangent(project_tt(&base, &z.0)?))
    })
}

/// Inner product of two tangent vectors at the same point.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tangent_dot(
    a: *const TtriemTangent,
    b: *const TtriemTangent,
    out: *mut f64,
) -> TtriemStatus {
    guard(|| {
        let (a, b) = (borrow(a, "a")?, borrow(b, "b")?);
        write_out(out, a.0.dot(&b.0)?, "out")
    })
}

/// Norm of a tangent vector.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tangent_norm(t: *const TtriemTangent, out: *mut f64) -> TtriemStatus {
    guard(|| write_out(out, borrow(t, "t")?.0.norm(), "out"))
}

/// Worst violation of the gauge condition, relative to the vector's size.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tangent_gauge_residual(t: *const TtriemTangent, out: *mut f64) -> TtriemStatus {
    guard(|| write_out(out, borrow(t, "t")?.0.gauge_residual(), "out"))
}

/// The tangent vector as a TT tensor of doubled rank.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tangent_to_tensor(t: *const TtriemTangent, out: *mut *mut TtriemTensor) -> TtriemStatus {
    guard(|| {
        let x = borrow(t, "t")?.0.to_tt()?;
        write_handle(out, TtriemTensor(x))
    })
}

/// # Safety
/// `t` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ttriem_tangent_free(t: *mut TtriemTangent) {
    free_handle(t)
}
