//! The manifold of `m × n` matrices of fixed rank `r`.
//!
//! A point is `X = U S Vᵀ` with orthonormal `U`, `V`. A tangent vector is
//! `δU Vᵀ + U δVᵀ` under the gauge `Vᵀ δV = 0`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ad::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{orthonormality_residual, qr_thin, svd_thin};
use crate::tensor::DenseTensor;
use crate::tt_manifold::{GAUGE_REJECT, GAUGE_TOL};

const ORTHO_TOL: f64 = 1e-10;

/// A scalar function of `X = L Rᵀ` recorded over the factors.
pub trait MatrixProgram {
    fn eval<'t>(&self, tape: &'t Tape, l: Var<'t>, r: Var<'t>) -> Result<Var<'t>>;
}

impl<F> MatrixProgram for F
where
    F: for<'t> Fn(&'t Tape, Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, tape: &'t Tape, l: Var<'t>, r: Var<'t>) -> Result<Var<'t>> {
        self(tape, l, r)
    }
}

/// Pins the signature of a closure so it is accepted as a
/// [`MatrixProgram`].
pub fn matrix_program<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    f
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedRankPoint {
    u: DenseTensor,
    s: DenseTensor,
    v: DenseTensor,
}

impl FixedRankPoint {
    pub fn new(u: DenseTensor, s: DenseTensor, v: DenseTensor) -> Result<Self> {
        if u.ndim() != 2 || s.ndim() != 2 || v.ndim() != 2 {
            return Err(dim_err!("factors must be matrices"));
        }
        let r = u.cols();
        if r == 0 {
            return Err(Error::DegeneratePoint("rank 0 has no tangent space".into()));
        }
        if s.shape() != [r, r] || v.cols() != r {
            return Err(dim_err!(
                "factor shapes {:?}, {:?}, {:?} do not agree",
                u.shape(),
                s.shape(),
                v.shape()
            ));
        }
        if u.rows() < r || v.rows() < r {
            return Err(dim_err!("rank {r} exceeds a matrix dimension"));
        }
        for (name, q) in [("U", &u), ("V", &v)] {
            let res = orthonormality_residual(q);
            if res > ORTHO_TOL {
                return Err(Error::InvalidValue(format!("{name} is not orthonormal (residual {res:.3e})")));
            }
        }
        Ok(Self { u, s, v })
    }

    /// Rank-`r` truncated SVD of a dense matrix.
    pub fn from_dense(x: &DenseTensor, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::DegeneratePoint("rank 0 has no tangent space".into()));
        }
        let (u, sv, v) = svd_thin(x)?;
        if r > sv.len() {
            return Err(dim_err!("rank {r} exceeds min dimension {}", sv.len()));
        }
        let s = DenseTensor::from_fn(&[r, r], |i| if i[0] == i[1] { sv[i[0]] } else { 0.0 });
        Self::new(u.slice(1, 0, r)?, s, v.slice(1, 0, r)?)
    }

    /// Orthonormal `U`, `V` from QR of Gaussian matrices and a Gaussian core.
    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, r: usize, rng: &mut R) -> Result<Self> {
        let mut gauss = |rows, cols| DenseTensor::from_fn(&[rows, cols], |_| rng.sample(StandardNormal));
        let (u, _) = qr_thin(&gauss(m, r))?;
        let (v, _) = qr_thin(&gauss(n, r))?;
        let s = gauss(r, r);
        Self::new(u, s, v)
    }

    pub fn u(&self) -> &DenseTensor {
        &self.u
    }

    pub fn s(&self) -> &DenseTensor {
        &self.s
    }

    pub fn v(&self) -> &DenseTensor {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.u.matmul(&self.s)?.matmul(&self.v.t())
    }
}

#[derive(Clone, Debug)]
pub struct MatrixTangent {
    base: Arc<FixedRankPoint>,
    du: DenseTensor,
    dv: DenseTensor,
}

fn same_point(a: &Arc<FixedRankPoint>, b: &Arc<FixedRankPoint>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// `D − V (Vᵀ D)`.
fn gauge(v: &DenseTensor, dv: &DenseTensor) -> Result<DenseTensor> {
    dv.sub(&v.matmul(&v.t().matmul(dv)?)?)
}

impl MatrixTangent {
    /// Checks shapes and the gauge `Vᵀ δV = 0`; small violations are
    /// repaired, large ones rejected.
    pub fn new(base: Arc<FixedRankPoint>, du: DenseTensor, dv: DenseTensor) -> Result<Self> {
        if du.shape() != base.u.shape() || dv.shape() != base.v.shape() {
            return Err(dim_err!(
                "tangent factors {:?}, {:?} do not match {:?}, {:?}",
                du.shape(),
                dv.shape(),
                base.u.shape(),
                base.v.shape()
            ));
        }
        let t = Self { base, du, dv };
        let res = t.gauge_residual();
        if res <= GAUGE_TOL {
            Ok(t)
        } else if res <= GAUGE_REJECT {
            Ok(t.regauged())
        } else {
            Err(Error::InvalidTangent(format!("gauge violated by {res:.3e}")))
        }
    }

    /// Builds a tangent from arbitrary factors by projecting `δV` onto the
    /// gauge complement.
    pub fn gauged(base: Arc<FixedRankPoint>, du: DenseTensor, dv: DenseTensor) -> Result<Self> {
        let dv = gauge(&base.v, &dv)?;
        Self::new(base, du, dv)
    }

    pub fn zeros(base: Arc<FixedRankPoint>) -> Self {
        let du = DenseTensor::zeros(base.u.shape());
        let dv = DenseTensor::zeros(base.v.shape());
        Self { base, du, dv }
    }

    pub fn base(&self) -> &Arc<FixedRankPoint> {
        &self.base
    }

    pub fn du(&self) -> &DenseTensor {
        &self.du
    }

    pub fn dv(&self) -> &DenseTensor {
        &self.dv
    }

    /// `‖Vᵀ δV‖_F` relative to `max(1, ‖(δU, δV)‖)`.
    pub fn gauge_residual(&self) -> f64 {
        let m = self.base.v.t().matmul(&self.dv).expect("shapes checked");
        m.norm() / self.norm().max(1.0)
    }

    pub fn regauged(&self) -> Self {
        Self {
            base: Arc::clone(&self.base),
            du: self.du.clone(),
            dv: gauge(&self.base.v, &self.dv).expect("shapes checked"),
        }
    }

    /// Norm of the represented matrix.
    pub fn norm(&self) -> f64 {
        (self.du.norm().powi(2) + self.dv.norm().powi(2)).sqrt()
    }

    pub fn dot(&self, other: &MatrixTangent) -> Result<f64> {
        tangent_dot_matrix(self, other)
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let (l, r) = tangent_materialize(self)?;
        l.matmul(&r.t())
    }
}

/// Factors `L = [U δU]`, `R = [δV V]` with `L Rᵀ = δU Vᵀ + U δVᵀ`.
pub fn tangent_materialize(t: &MatrixTangent) -> Result<(DenseTensor, DenseTensor)> {
    Ok((
        DenseTensor::concat(&[&t.base.u, &t.du], 1)?,
        DenseTensor::concat(&[&t.dv, &t.base.v], 1)?,
    ))
}

/// `P_X Z = Z V Vᵀ + U Uᵀ Z (I − V Vᵀ)` in factor form.
pub fn project_matrix(x: &Arc<FixedRankPoint>, z: &DenseTensor) -> Result<MatrixTangent> {
    let (m, n) = x.shape();
    if z.shape() != [m, n] {
        return Err(dim_err!("matrix {:?} does not match point shape ({m}, {n})", z.shape()));
    }
    let du = z.matmul(&x.v)?;
    let dv = gauge(&x.v, &z.t().matmul(&x.u)?)?;
    Ok(MatrixTangent {
        base: Arc::clone(x),
        du,
        dv,
    })
}

fn record_g<'t, P: MatrixProgram + ?Sized>(
    tape: &'t Tape,
    x: &FixedRankPoint,
    p: &P,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    let a = tape.var(x.u.matmul(&x.s)?);
    let b = tape.var(DenseTensor::zeros(x.v.shape()));
    let l = tape.concat(&[tape.constant(x.u.clone()), a], 1)?;
    let r = tape.concat(&[b, tape.constant(x.v.clone())], 1)?;
    let out = p.eval(tape, l, r)?;
    if out.value().len() != 1 {
        return Err(dim_err!("objective program must return a scalar, got {:?}", out.shape()));
    }
    Ok((a, b, out))
}

/// Riemannian gradient of `p` at `x`: differentiate
/// `g(A, B) = p([U A], [B V])` at `(U S, 0)`.
pub fn riemannian_grad_matrix<P: MatrixProgram + ?Sized>(p: &P, x: &Arc<FixedRankPoint>) -> Result<MatrixTangent> {
    let tape = Tape::new();
    let (a, b, out) = record_g(&tape, x, p)?;
    let g = tape.grad(out, &[a, b])?;
    Ok(MatrixTangent {
        base: Arc::clone(x),
        du: g[0].value(),
        dv: gauge(&x.v, &g[1].value())?,
    })
}

/// Approximate Riemannian Hessian applied to `z`, at `z`'s base point.
pub fn hess_vec_matrix<P: MatrixProgram + ?Sized>(p: &P, z: &MatrixTangent) -> Result<MatrixTangent> {
    let z = MatrixTangent::new(Arc::clone(&z.base), z.du.clone(), z.dv.clone())?;
    let x = &z.base;
    let tape = Tape::new();
    let (a, b, out) = record_g(&tape, x, p)?;
    let g = tape.grad(out, &[a, b])?;
    let v = tape.constant(x.v.clone());
    let vt_g = v.transpose()?.matmul(g[1])?;
    let dv = g[1].sub(v.matmul(vt_g)?)?;
    let w = g[0]
        .dot(tape.constant(z.du.clone()))?
        .add(dv.dot(tape.constant(z.dv.clone()))?)?;
    let h = tape.grad(w, &[a, b])?;
    Ok(MatrixTangent {
        base: Arc::clone(x),
        du: h[0].value(),
        dv: gauge(&x.v, &h[1].value())?,
    })
}

/// `⟨δU_a, δU_b⟩ + ⟨δV_a, δV_b⟩`.
pub fn tangent_dot_matrix(a: &MatrixTangent, b: &MatrixTangent) -> Result<f64> {
    if !same_point(&a.base, &b.base) {
        return Err(Error::InvalidPair);
    }
    Ok(a.du.dot(&b.du)? + a.dv.dot(&b.dv)?)
}

/// Shipped objectives on `L Rᵀ` with dense reference derivatives.
#[derive(Clone, Debug)]
pub enum MatrixObjective {
    /// `⟨X, X⟩`
    Frobenius,
    /// `⟨A X, X⟩` with symmetric `A` (`m × m`).
    Quadratic(DenseTensor),
    /// `Σ_ij X_ij`
    EntrySum,
    /// `⟨F, X⟩`
    Linear(DenseTensor),
    /// `Σ_ω (X_ω − a_ω)²` over observed `(row, col)` positions.
    Completion {
        rows: Vec<usize>,
        cols: Vec<usize>,
        values: Vec<f64>,
    },
}

impl MatrixProgram for MatrixObjective {
    fn eval<'t>(&self, tape: &'t Tape, l: Var<'t>, r: Var<'t>) -> Result<Var<'t>> {
        match self {
            MatrixObjective::Frobenius => {
                let ll = l.contract(l, &[(0, 0)])?;
                let rr = r.contract(r, &[(0, 0)])?;
                ll.dot(rr)
            }
            MatrixObjective::Quadratic(a) => {
                let al = tape.constant(a.clone()).matmul(l)?;
                let lal = l.contract(al, &[(0, 0)])?;
                lal.dot(r.contract(r, &[(0, 0)])?)
            }
            MatrixObjective::EntrySum => {
                let ones_l = tape.constant(DenseTensor::ones(&[l.shape()[0]]));
                let ones_r = tape.constant(DenseTensor::ones(&[r.shape()[0]]));
                ones_l.contract(l, &[(0, 0)])?.dot(ones_r.contract(r, &[(0, 0)])?)
            }
            MatrixObjective::Linear(f) => tape.constant(f.clone()).matmul(r)?.dot(l),
            MatrixObjective::Completion { rows, cols, values } => {
                let lo = l.gather(0, rows)?;
                let ro = r.gather(0, cols)?;
                let k = l.shape()[1];
                let entries = lo.mul(ro)?.contract(tape.constant(DenseTensor::ones(&[k])), &[(1, 0)])?;
                let a = tape.constant(DenseTensor::new(vec![values.len()], values.clone())?);
                let res = entries.sub(a)?;
                res.dot(res)
            }
        }
    }
}

impl MatrixObjective {
    pub fn value_dense(&self, x: &DenseTensor) -> Result<f64> {
        match self {
            MatrixObjective::Frobenius => x.dot(x),
            MatrixObjective::Quadratic(a) => a.matmul(x)?.dot(x),
            MatrixObjective::EntrySum => Ok(x.sum()),
            MatrixObjective::Linear(f) => f.dot(x),
            MatrixObjective::Completion { rows, cols, values } => Ok(rows
                .iter()
                .zip(cols)
                .zip(values)
                .map(|((&i, &j), &a)| (x.at(i, j) - a).powi(2))
                .sum()),
        }
    }

    /// Euclidean gradient at a dense point.
    pub fn grad_dense(&self, x: &DenseTensor) -> Result<DenseTensor> {
        match self {
            MatrixObjective::Frobenius => Ok(x.scale(2.0)),
            MatrixObjective::Quadratic(a) => Ok(a.matmul(x)?.scale(2.0)),
            MatrixObjective::EntrySum => Ok(DenseTensor::ones(x.shape())),
            MatrixObjective::Linear(f) => Ok(f.clone()),
            MatrixObjective::Completion { rows, cols, values } => {
                let mut g = vec![0.0; x.len()];
                let n = x.cols();
                for ((&i, &j), &a) in rows.iter().zip(cols).zip(values) {
                    g[i * n + j] += 2.0 * (x.at(i, j) - a);
                }
                DenseTensor::new(x.shape().to_vec(), g)
            }
        }
    }

    /// Euclidean Hessian applied to `z` at a dense point.
    pub fn hess_vec_dense(&self, _x: &DenseTensor, z: &DenseTensor) -> Result<DenseTensor> {
        match self {
            MatrixObjective::Frobenius => Ok(z.scale(2.0)),
            MatrixObjective::Quadratic(a) => Ok(a.matmul(z)?.scale(2.0)),
            MatrixObjective::EntrySum | MatrixObjective::Linear(_) => Ok(DenseTensor::zeros(z.shape())),
            MatrixObjective::Completion { rows, cols, .. } => {
                let mut h = vec![0.0; z.len()];
                let n = z.cols();
                for (&i, &j) in rows.iter().zip(cols) {
                    h[i * n + j] += 2.0 * z.at(i, j);
                }
                DenseTensor::new(z.shape().to_vec(), h)
            }
        }
    }
}

/// Dense `Z V Vᵀ + U Uᵀ Z (I − V Vᵀ)`.
pub fn dense_projection(x: &FixedRankPoint, z: &DenseTensor) -> Result<DenseTensor> {
    let vvt = x.v.matmul(&x.v.t())?;
    let uut = x.u.matmul(&x.u.t())?;
    let zv = z.matmul(&vvt)?;
    let rest = uut.matmul(&z.sub(&zv)?)?;
    zv.add(&rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, SeedableRng};

    fn e1_point() -> Arc<FixedRankPoint> {
        let e1 = DenseTensor::from_rows(&[&[1.0], &[0.0]]).unwrap();
        Arc::new(FixedRankPoint::new(e1.clone(), DenseTensor::from_rows(&[&[2.0]]).unwrap(), e1).unwrap())
    }

    fn random_tangent(x: &Arc<FixedRankPoint>, rng: &mut StdRng) -> MatrixTangent {
        let (m, n) = x.shape();
        let r = x.rank();
        let du = DenseTensor::from_fn(&[m, r], |_| rng.gen_range(-1.0..1.0));
        let dv = DenseTensor::from_fn(&[n, r], |_| rng.gen_range(-1.0..1.0));
        MatrixTangent::gauged(Arc::clone(x), du, dv).unwrap()
    }

    #[test]
    fn zero_rank_rejected() {
        let u = DenseTensor::zeros(&[3, 0]);
        let r = FixedRankPoint::new(u.clone(), DenseTensor::zeros(&[0, 0]), u);
        assert!(matches!(r, Err(Error::DegeneratePoint(_))));
    }

    #[test]
    fn materialize_examples() {
        let mut rng = StdRng::seed_from_u64(61);
        let x = Arc::new(FixedRankPoint::random(5, 4, 2, &mut rng).unwrap());
        assert_eq!(MatrixTangent::zeros(Arc::clone(&x)).to_dense().unwrap().norm(), 0.0);
        let us = x.u().matmul(x.s()).unwrap();
        let t = MatrixTangent::new(Arc::clone(&x), us, DenseTensor::zeros(&[4, 2])).unwrap();
        assert!(t.to_dense().unwrap().rel_diff(&x.to_dense().unwrap()).unwrap() < 1e-14);
        let t = random_tangent(&x, &mut rng);
        let want = t
            .du()
            .matmul(&x.v().t())
            .unwrap()
            .add(&x.u().matmul(&t.dv().t()).unwrap())
            .unwrap();
        assert!(t.to_dense().unwrap().rel_diff(&want).unwrap() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let x = e1_point();
        let z = DenseTensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let t = project_matrix(&x, &z).unwrap();
        assert_eq!(t.du().to_vec(), vec![0.0, 1.0]);
        assert_eq!(t.dv().to_vec(), vec![0.0, 1.0]);
        assert_eq!(t.to_dense().unwrap(), z);

        let t = project_matrix(&x, &x.to_dense().unwrap()).unwrap();
        assert_eq!(t.du().to_vec(), vec![2.0, 0.0]);
        assert_eq!(t.dv().norm(), 0.0);

        let e22 = DenseTensor::from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(project_matrix(&x, &e22).unwrap().norm(), 0.0);
    }

    #[test]
    fn projection_idempotent_and_self_adjoint() {
        let mut rng = StdRng::seed_from_u64(62);
        let x = Arc::new(FixedRankPoint::random(6, 5, 2, &mut rng).unwrap());
        let z = DenseTensor::from_fn(&[6, 5], |_| rng.gen_range(-1.0..1.0));
        let w = DenseTensor::from_fn(&[6, 5], |_| rng.gen_range(-1.0..1.0));
        let pz = project_matrix(&x, &z).unwrap().to_dense().unwrap();
        assert!(pz.rel_diff(&dense_projection(&x, &z).unwrap()).unwrap() < 1e-13);
        let ppz = project_matrix(&x, &pz).unwrap().to_dense().unwrap();
        assert!(ppz.rel_diff(&pz).unwrap() < 1e-12);
        let pw = dense_projection(&x, &w).unwrap();
        assert!((pz.dot(&w).unwrap() - z.dot(&pw).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn frobenius_gradient_at_diag() {
        let x = Arc::new(FixedRankPoint::from_dense(&DenseTensor::from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]).unwrap(), 1).unwrap());
        let g = riemannian_grad_matrix(&MatrixObjective::Frobenius, &x).unwrap();
        assert!(g.to_dense().unwrap().rel_diff(&x.to_dense().unwrap().scale(2.0)).unwrap() < 1e-14);
        assert!(g.dv().norm() < 1e-15);
    }

    #[test]
    fn gradients_and_hessians_match_dense_projection() {
        let mut rng = StdRng::seed_from_u64(63);
        let x = Arc::new(FixedRankPoint::random(4, 4, 2, &mut rng).unwrap());
        let b = DenseTensor::from_fn(&[4, 4], |_| rng.gen_range(-1.0..1.0));
        let a = b.add(&b.t()).unwrap();
        let objs = [
            MatrixObjective::Frobenius,
            MatrixObjective::Quadratic(a),
            MatrixObjective::EntrySum,
            MatrixObjective::Linear(DenseTensor::from_fn(&[4, 4], |_| rng.gen_range(-1.0..1.0))),
            MatrixObjective::Completion {
                rows: vec![0, 1, 3, 3],
                cols: vec![2, 1, 0, 3],
                values: vec![0.5, -1.0, 2.0, 0.0],
            },
        ];
        let xd = x.to_dense().unwrap();
        let z = random_tangent(&x, &mut rng);
        let zd = z.to_dense().unwrap();
        for obj in &objs {
            let g = riemannian_grad_matrix(obj, &x).unwrap();
            let want = dense_projection(&x, &obj.grad_dense(&xd).unwrap()).unwrap();
            assert!(g.to_dense().unwrap().sub(&want).unwrap().norm() <= 1e-10 * want.norm().max(1.0));
            assert!(g.gauge_residual() < 1e-12);
            let h = hess_vec_matrix(obj, &z).unwrap();
            let want = dense_projection(&x, &obj.hess_vec_dense(&xd, &zd).unwrap()).unwrap();
            assert!(h.to_dense().unwrap().sub(&want).unwrap().norm() <= 1e-10 * want.norm().max(1.0));
        }
    }

    #[test]
    fn hessian_symmetry_and_frobenius_doubling() {
        let mut rng = StdRng::seed_from_u64(64);
        let x = Arc::new(FixedRankPoint::random(5, 4, 2, &mut rng).unwrap());
        let b = DenseTensor::from_fn(&[5, 5], |_| rng.gen_range(-1.0..1.0));
        let q = MatrixObjective::Quadratic(b.add(&b.t()).unwrap());
        let z1 = random_tangent(&x, &mut rng);
        let z2 = random_tangent(&x, &mut rng);
        let lhs = hess_vec_matrix(&q, &z1).unwrap().dot(&z2).unwrap();
        let rhs = z1.dot(&hess_vec_matrix(&q, &z2).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        let h = hess_vec_matrix(&MatrixObjective::Frobenius, &z1).unwrap();
        assert!(h.to_dense().unwrap().rel_diff(&z1.to_dense().unwrap().scale(2.0)).unwrap() < 1e-13);
    }

    #[test]
    fn tangent_dot_examples() {
        let mut rng = StdRng::seed_from_u64(65);
        let x = Arc::new(FixedRankPoint::random(5, 4, 2, &mut rng).unwrap());
        let zero = MatrixTangent::zeros(Arc::clone(&x));
        assert_eq!(zero.dot(&zero).unwrap(), 0.0);
        let t = random_tangent(&x, &mut rng);
        let a = MatrixTangent::new(Arc::clone(&x), t.du().clone(), DenseTensor::zeros(&[4, 2])).unwrap();
        let b = MatrixTangent::new(Arc::clone(&x), DenseTensor::zeros(&[5, 2]), t.dv().clone()).unwrap();
        assert_eq!(a.dot(&b).unwrap(), 0.0);
        assert!(a.to_dense().unwrap().dot(&b.to_dense().unwrap()).unwrap().abs() < 1e-14);
        let s = random_tangent(&x, &mut rng);
        let dense = t.to_dense().unwrap().dot(&s.to_dense().unwrap()).unwrap();
        assert!((t.dot(&s).unwrap() - dense).abs() < 1e-12);
        let other = Arc::new(FixedRankPoint::random(5, 4, 2, &mut rng).unwrap());
        assert!(matches!(t.dot(&MatrixTangent::zeros(other)), Err(Error::InvalidPair)));
    }

    #[test]
    fn gauge_violation_rejected() {
        let mut rng = StdRng::seed_from_u64(66);
        let x = Arc::new(FixedRankPoint::random(5, 4, 2, &mut rng).unwrap());
        let bad = MatrixTangent::new(Arc::clone(&x), DenseTensor::zeros(&[5, 2]), x.v().clone());
        assert!(matches!(bad, Err(Error::InvalidTangent(_))));
        assert!(matches!(hess_vec_matrix(&MatrixObjective::Frobenius, &MatrixTangent {
            base: Arc::clone(&x),
            du: DenseTensor::zeros(&[5, 2]),
            dv: x.v().clone(),
        }), Err(Error::InvalidTangent(_))));
    }

    #[test]
    fn overestimated_rank_needs_no_inversion() {
        // True rank 1, declared rank 3: S has two zero singular values.
        let mut rng = StdRng::seed_from_u64(67);
        let a = DenseTensor::from_fn(&[5, 1], |_| rng.gen_range(-1.0..1.0));
        let b = DenseTensor::from_fn(&[1, 4], |_| rng.gen_range(-1.0..1.0));
        let xd = a.matmul(&b).unwrap();
        let x = Arc::new(FixedRankPoint::from_dense(&xd, 3).unwrap());
        assert!(x.s().at(2, 2).abs() < 1e-12);
        let obj = MatrixObjective::Linear(DenseTensor::from_fn(&[5, 4], |_| rng.gen_range(-1.0..1.0)));
        let g = riemannian_grad_matrix(&obj, &x).unwrap();
        let want = dense_projection(&x, &obj.grad_dense(&xd).unwrap()).unwrap();
        assert!(g.to_dense().unwrap().rel_diff(&want).unwrap() < 1e-10);
    }
}
