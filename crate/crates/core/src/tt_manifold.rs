//! The manifold of TT tensors with fixed TT-ranks.
//!
//! A tangent vector at `X` is stored as delta cores `S^δ_1, …, S^δ_d`
//! shaped like the cores of `X`, under the gauge
//! `Σ_i U_k[i]ᵀ S^δ_k[i] = 0` for `k < d`. It represents
//!
//! ```text
//! Σ_k  U_1 ⋯ U_{k-1} S^δ_k V_{k+1} ⋯ V_d
//! ```
//!
//! Riemannian gradients are obtained by differentiating `f` at the
//! tangent-space parametrization of `X` with respect to the delta cores.
//! Hessian-vector products differentiate the inner product of that
//! gradient with a fixed tangent vector once more.

use std::sync::Arc;

use crate::ad::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::taped;
use crate::tensor::{contract, DenseTensor};
use crate::tt::{MuOrthogonal, TtMatrix, TtTensor};

/// Gauge violations up to this size are accepted as they are.
pub const GAUGE_TOL: f64 = 1e-10;
/// Gauge violations above this size are rejected; in between, inputs are
/// re-gauged.
pub const GAUGE_REJECT: f64 = 1e-8;

/// A scalar function recorded over the cores of a TT tensor.
pub trait TtProgram {
    fn eval<'t>(&self, tape: &'t Tape, cores: &[Var<'t>]) -> Result<Var<'t>>;
}

impl<F> TtProgram for F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, tape: &'t Tape, cores: &[Var<'t>]) -> Result<Var<'t>> {
        self(tape, cores)
    }
}

/// Pins the signature of a closure so it is accepted as a [`TtProgram`]
/// for every tape lifetime.
///
/// ```
/// use ttriem::tt_manifold::{program, riemannian_grad_tt};
/// use ttriem::{taped, TtTensor};
///
/// let f = program(|_, c| taped::dot(c, c));
/// let g = riemannian_grad_tt(&f, &TtTensor::ones(&[2, 2, 2])).unwrap();
/// assert!((g.norm() - 32f64.sqrt()).abs() < 1e-12);
/// ```
pub fn program<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

/// Element of the tangent space at the base point.
#[derive(Clone, Debug)]
pub struct TtTangent {
    base: Arc<MuOrthogonal>,
    deltas: Vec<DenseTensor>,
}

fn same_base(a: &Arc<MuOrthogonal>, b: &Arc<MuOrthogonal>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

fn check_delta_shapes(base: &MuOrthogonal, deltas: &[DenseTensor]) -> Result<()> {
    if deltas.len() != base.d() {
        return Err(dim_err!("{} delta cores for d = {}", deltas.len(), base.d()));
    }
    for (k, dk) in deltas.iter().enumerate() {
        if dk.shape() != base.s(k).shape() {
            return Err(dim_err!(
                "delta core {k} has shape {:?}, expected {:?}",
                dk.shape(),
                base.s(k).shape()
            ));
        }
    }
    Ok(())
}

/// `Σ_i U[i]ᵀ D[i]`, an `r_k × r_k` matrix.
fn u_t_d(u: &DenseTensor, d: &DenseTensor) -> DenseTensor {
    contract(u, d, &[(0, 0), (1, 1)]).expect("matching core shapes")
}

/// `D − U (Uᵀ D)` on the unfolding `(r_{k-1} n_k) × r_k`.
fn gauge_core(u: &DenseTensor, d: &DenseTensor) -> DenseTensor {
    let m = u_t_d(u, d);
    d.sub(&contract(u, &m, &[(2, 0)]).expect("matching core shapes"))
        .expect("matching core shapes")
}

fn gauge_core_taped<'t>(u: Var<'t>, d: Var<'t>) -> Result<Var<'t>> {
    let m = u.contract(d, &[(0, 0), (1, 1)])?;
    d.sub(u.contract(m, &[(2, 0)])?)
}

fn gauge_all(base: &MuOrthogonal, deltas: Vec<DenseTensor>) -> Vec<DenseTensor> {
    let d = base.d();
    deltas
        .into_iter()
        .enumerate()
        .map(|(k, dk)| if k + 1 < d { gauge_core(base.u(k), &dk) } else { dk })
        .collect()
}

impl TtTangent {
    /// Validates shapes and the gauge. Violations between [`GAUGE_TOL`] and
    /// [`GAUGE_REJECT`] are repaired by projecting onto the gauge
    /// complement; larger ones are rejected.
    pub fn new(base: Arc<MuOrthogonal>, deltas: Vec<DenseTensor>) -> Result<Self> {
        check_delta_shapes(&base, &deltas)?;
        Self { base, deltas }.checked()
    }

    /// Projects arbitrary deltas onto the gauge complement.
    pub fn gauged(base: Arc<MuOrthogonal>, deltas: Vec<DenseTensor>) -> Result<Self> {
        check_delta_shapes(&base, &deltas)?;
        let deltas = gauge_all(&base, deltas);
        Ok(Self { base, deltas })
    }

    pub fn zeros(base: Arc<MuOrthogonal>) -> Self {
        let deltas = (0..base.d()).map(|k| DenseTensor::zeros(base.s(k).shape())).collect();
        Self { base, deltas }
    }

    /// The tangent vector representing `X` itself. Only the last delta
    /// is free of the gauge, so `S^δ_d = S_d` and the rest vanish.
    pub fn point(base: Arc<MuOrthogonal>) -> Self {
        let mut t = Self::zeros(base);
        let last = t.d() - 1;
        t.deltas[last] = t.base.s(last).clone();
        t
    }

    pub(crate) fn from_parts(base: Arc<MuOrthogonal>, deltas: Vec<DenseTensor>) -> Self {
        Self { base, deltas }
    }

    fn checked(self) -> Result<Self> {
        let res = self.gauge_residual();
        if res <= GAUGE_TOL {
            Ok(self)
        } else if res <= GAUGE_REJECT {
            Ok(self.regauged())
        } else {
            Err(Error::InvalidTangent(format!("gauge violated by {res:.3e}")))
        }
    }

    pub fn base(&self) -> &Arc<MuOrthogonal> {
        &self.base
    }

    pub fn deltas(&self) -> &[DenseTensor] {
        &self.deltas
    }

    pub fn into_deltas(self) -> Vec<DenseTensor> {
        self.deltas
    }

    pub fn d(&self) -> usize {
        self.deltas.len()
    }

    /// `max_k ‖Σ_i U_k[i]ᵀ S^δ_k[i]‖_F`, relative to `max(1, ‖deltas‖)`.
    pub fn gauge_residual(&self) -> f64 {
        let d = self.d();
        let worst = (0..d.saturating_sub(1))
            .map(|k| u_t_d(self.base.u(k), &self.deltas[k]).norm())
            .fold(0.0, f64::max);
        worst / self.delta_norm().max(1.0)
    }

    pub fn regauged(&self) -> Self {
        Self {
            base: Arc::clone(&self.base),
            deltas: gauge_all(&self.base, self.deltas.clone()),
        }
    }

    fn delta_norm(&self) -> f64 {
        self.deltas.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt()
    }

    /// TT cores of rank `2r` representing this tangent vector.
    pub fn to_tt(&self) -> Result<TtTensor> {
        deltas_to_cores(&self.base, &self.deltas)
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_tt()?.to_dense()
    }

    pub fn dot(&self, other: &TtTangent) -> Result<f64> {
        tangent_dot_tt(self, other)
    }

    /// Norm of the represented tensor.
    pub fn norm(&self) -> f64 {
        self.delta_norm()
    }

    /// `alpha·self + other` in the same tangent space.
    pub fn axpy(&self, alpha: f64, other: &TtTangent) -> Result<TtTangent> {
        if !same_base(&self.base, &other.base) {
            return Err(Error::InvalidPair);
        }
        let deltas = self
            .deltas
            .iter()
            .zip(&other.deltas)
            .map(|(a, b)| a.axpy(alpha, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(Arc::clone(&self.base), deltas))
    }

    pub fn scale(&self, alpha: f64) -> TtTangent {
        Self::from_parts(Arc::clone(&self.base), self.deltas.iter().map(|t| t.scale(alpha)).collect())
    }
}

/// Block cores of the tangent vector given by `deltas`:
/// `[S^δ_1 U_1]`, then `[[V_k, 0], [S^δ_k, U_k]]`, then `[V_d; S^δ_d]`.
pub fn deltas_to_cores(base: &MuOrthogonal, deltas: &[DenseTensor]) -> Result<TtTensor> {
    check_delta_shapes(base, deltas)?;
    let d = base.d();
    if d == 1 {
        return TtTensor::new(vec![deltas[0].clone()]);
    }
    let mut cores = Vec::with_capacity(d);
    cores.push(DenseTensor::concat(&[&deltas[0], base.u(0)], 2)?);
    for k in 1..d - 1 {
        let top = base.v(k).pad(2, 0, base.u(k).shape()[2])?;
        let bottom = DenseTensor::concat(&[&deltas[k], base.u(k)], 2)?;
        cores.push(DenseTensor::concat(&[&top, &bottom], 0)?);
    }
    cores.push(DenseTensor::concat(&[base.v(d - 1), &deltas[d - 1]], 0)?);
    TtTensor::new(cores)
}

/// Tape version of [`deltas_to_cores`]: `U`/`V` enter as constants, the
/// delta cores as the given variables.
pub fn deltas_to_cores_taped<'t>(tape: &'t Tape, base: &MuOrthogonal, deltas: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    let d = base.d();
    if deltas.len() != d {
        return Err(dim_err!("{} delta cores for d = {d}", deltas.len()));
    }
    if d == 1 {
        return Ok(vec![deltas[0]]);
    }
    let mut cores = Vec::with_capacity(d);
    let u0 = tape.constant(base.u(0).clone());
    cores.push(tape.concat(&[deltas[0], u0], 2)?);
    for k in 1..d - 1 {
        let top = tape.constant(base.v(k).pad(2, 0, base.u(k).shape()[2])?);
        let uk = tape.constant(base.u(k).clone());
        let bottom = tape.concat(&[deltas[k], uk], 2)?;
        cores.push(tape.concat(&[top, bottom], 0)?);
    }
    let vd = tape.constant(base.v(d - 1).clone());
    cores.push(tape.concat(&[vd, deltas[d - 1]], 0)?);
    Ok(cores)
}

/// Orthogonal projection of `z` onto the tangent space at `x`, computed by
/// left chains `U_{<k}ᵀ Z_{<k}` and right chains `V_{>k} Z_{>k}`.
pub fn project_tt(x: &Arc<MuOrthogonal>, z: &TtTensor) -> Result<TtTangent> {
    if x.modes() != z.modes() {
        return Err(dim_err!("mode sizes differ: {:?} vs {:?}", x.modes(), z.modes()));
    }
    let d = x.d();
    let zc = z.cores();
    // right[k] = contraction of V_k..V_d with Z_k..Z_d, shape (r_{k-1}, s_{k-1}).
    let mut right = vec![DenseTensor::ones(&[1, 1]); d + 1];
    for k in (1..d).rev() {
        let t = contract(&zc[k], &right[k + 1], &[(2, 1)])?; // (s, n, r')
        right[k] = contract(x.v(k), &t, &[(1, 1), (2, 2)])?; // (r, s)
    }
    let mut left = DenseTensor::ones(&[1, 1]);
    let mut deltas = Vec::with_capacity(d);
    for k in 0..d {
        let t = contract(&left, &zc[k], &[(1, 0)])?; // (r, n, s')
        let raw = contract(&t, &right[k + 1], &[(2, 1)])?; // (r, n, r')
        if k + 1 < d {
            deltas.push(gauge_core(x.u(k), &raw));
            left = contract(x.u(k), &t, &[(0, 0), (1, 1)])?; // (r', s')
        } else {
            deltas.push(raw);
        }
    }
    Ok(TtTangent::from_parts(Arc::clone(x), deltas))
}

/// Leaves `R_1 = S_1`, `R_k = 0`, and the program evaluated at the block
/// cores built from them.
fn record_g<'t, P: TtProgram + ?Sized>(
    tape: &'t Tape,
    base: &MuOrthogonal,
    p: &P,
) -> Result<(Vec<Var<'t>>, Var<'t>)> {
    let d = base.d();
    let leaves: Vec<Var<'t>> = (0..d)
        .map(|k| {
            if k == 0 {
                tape.var(base.s(0).clone())
            } else {
                tape.var(DenseTensor::zeros(base.s(k).shape()))
            }
        })
        .collect();
    let cores = deltas_to_cores_taped(tape, base, &leaves)?;
    let out = p.eval(tape, &cores)?;
    if out.value().len() != 1 {
        return Err(dim_err!("objective program must return a scalar, got {:?}", out.shape()));
    }
    Ok((leaves, out))
}

/// Riemannian gradient at `x` of the function computed by `p`.
pub fn riemannian_grad_tt<P: TtProgram + ?Sized>(p: &P, x: &TtTensor) -> Result<TtTangent> {
    riemannian_grad_at(p, &Arc::new(x.orthogonalize()?))
}

/// Like [`riemannian_grad_tt`] for an already orthogonalized point.
pub fn riemannian_grad_at<P: TtProgram + ?Sized>(p: &P, base: &Arc<MuOrthogonal>) -> Result<TtTangent> {
    let tape = Tape::new();
    let (leaves, out) = record_g(&tape, base, p)?;
    let grads = tape.grad(out, &leaves)?;
    let deltas = grads.iter().map(|g| g.value()).collect();
    Ok(TtTangent::from_parts(Arc::clone(base), gauge_all(base, deltas)))
}

/// Value of `p` at the base point together with the Riemannian gradient.
pub fn value_and_riemannian_grad<P: TtProgram + ?Sized>(p: &P, base: &Arc<MuOrthogonal>) -> Result<(f64, TtTangent)> {
    let tape = Tape::new();
    let (leaves, out) = record_g(&tape, base, p)?;
    let grads = tape.grad(out, &leaves)?;
    let deltas = grads.iter().map(|g| g.value()).collect();
    Ok((out.item(), TtTangent::from_parts(Arc::clone(base), gauge_all(base, deltas))))
}

/// Approximate Riemannian Hessian (curvature term omitted) applied to the
/// tangent vector `z`, at `z`'s base point.
///
/// The gradient is recorded on the tape, gauged, paired with `z` through
/// the delta inner product, and the resulting scalar is differentiated
/// again with respect to the same delta leaves.
pub fn hess_vec_tt<P: TtProgram + ?Sized>(p: &P, z: &TtTangent) -> Result<TtTangent> {
    let z = z.clone().checked()?;
    let base = z.base();
    let d = base.d();
    let tape = Tape::new();
    let (leaves, out) = record_g(&tape, base, p)?;
    let grads = tape.grad(out, &leaves)?;
    let mut w: Option<Var<'_>> = None;
    for (k, g) in grads.iter().enumerate() {
        let gk = if k + 1 < d {
            gauge_core_taped(tape.constant(base.u(k).clone()), *g)?
        } else {
            *g
        };
        let term = gk.dot(tape.constant(z.deltas[k].clone()))?;
        w = Some(match w {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    let w = w.expect("at least one core");
    let h = tape.grad(w, &leaves)?;
    let deltas = h.iter().map(|g| g.value()).collect();
    Ok(TtTangent::from_parts(Arc::clone(base), gauge_all(base, deltas)))
}

/// Hessian-vector product at `x` with the tangent vector `z`, after
/// checking that `z` lives at `x`.
pub fn hess_vec_tt_at<P: TtProgram + ?Sized>(p: &P, x: &Arc<MuOrthogonal>, z: &TtTangent) -> Result<TtTangent> {
    if !same_base(x, z.base()) {
        return Err(Error::InvalidPair);
    }
    hess_vec_tt(p, z)
}

/// Inner product of two tangent vectors at the same point:
/// `Σ_k ⟨S^δ_k(a), S^δ_k(b)⟩`.
pub fn tangent_dot_tt(a: &TtTangent, b: &TtTangent) -> Result<f64> {
    if !same_base(&a.base, &b.base) {
        return Err(Error::InvalidPair);
    }
    a.deltas
        .iter()
        .zip(&b.deltas)
        .try_fold(0.0, |acc, (x, y)| Ok(acc + x.dot(y)?))
}

/// `P_X B(AX − F)` as the Riemannian gradient of
/// `h(X) = ⟨A c(X), Bᵀ X⟩ − ⟨BF, X⟩`, where `c` stops gradients.
pub fn preconditioned_residual(a: &TtMatrix, b: &TtMatrix, f: &TtTensor, x: &TtTensor) -> Result<TtTangent> {
    let modes = x.modes();
    if a.row_modes() != modes || a.col_modes() != modes || b.row_modes() != modes || b.col_modes() != modes {
        return Err(dim_err!("operators do not act on tensors with modes {:?}", modes));
    }
    if f.modes() != modes {
        return Err(dim_err!("right-hand side modes {:?} differ from {:?}", f.modes(), modes));
    }
    let bf = b.apply(f)?;
    let h = program(|tape, cores| {
        let frozen: Vec<Var<'_>> = cores.iter().map(|c| c.stop_gradient()).collect();
        let ac = taped::operator(tape, a);
        let bc = taped::operator(tape, b);
        let quad = taped::two_op_dot(&frozen, &ac, &bc, cores)?;
        let lin = taped::dot(&taped::constants(tape, &bf), cores)?;
        quad.sub(lin)
    });
    riemannian_grad_tt(&h, x)
}
