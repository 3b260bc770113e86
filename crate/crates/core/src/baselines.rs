//! Comparison methods, the dense oracle, gradient-descent demos and the
//! benchmark harness.
//!
//! Three pipelines compute the same Riemannian quantities:
//! * `naive`: build the Euclidean gradient (or Hessian-vector product) in
//!   TT format from its closed form, then project it;
//! * `optimized`: hand-fused kernels that never form the large-rank
//!   intermediate;
//! * `ad`: the automatic procedure of [`crate::tt_manifold`].

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{rngs::StdRng, SeedableRng};

use crate::ad::Tape;
use crate::error::{dim_err, Error, Result};
use crate::linalg::svd_thin;
use crate::objectives::{sigmoid, ExpMachinesData, IndexSet, Objective};
use crate::tensor::{contract, DenseTensor};
use crate::tt::{MuOrthogonal, TtMatrix, TtTensor};
use crate::tt_manifold::{
    deltas_to_cores, hess_vec_tt, preconditioned_residual, project_tt, riemannian_grad_at,
    value_and_riemannian_grad, TtTangent,
};

/// Largest dense tensor the oracle builds an explicit projector for.
pub const ORACLE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Naive,
    Optimized,
    Ad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Grad,
    Hvp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Function {
    Qf,
    Gram,
    Rayleigh,
    Completion,
    ExpMach,
}

macro_rules! names {
    ($ty:ident { $($variant:ident => $name:literal),* $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),*
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    _ => Err(Error::InvalidValue(format!(
                        "unknown {} {s:?}", stringify!($ty).to_lowercase()
                    ))),
                }
            }
        }
    };
}

names!(Method { Naive => "naive", Optimized => "optimized", Ad => "ad" });
names!(Op { Grad => "grad", Hvp => "hvp" });
names!(Function { Qf => "qf", Gram => "gram", Rayleigh => "rayleigh", Completion => "completion", ExpMach => "expmach" });

/// `‖a − b‖ / ‖b‖` in the tangent metric; `‖a‖` when `b` vanishes.
pub fn relative_residual(a: &TtTangent, b: &TtTangent) -> Result<f64> {
    let diff = a.axpy(-1.0, b)?.norm();
    let scale = b.norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Project the Euclidean gradient given in closed TT form.
pub fn naive_grad(obj: &Objective, x: &TtTensor) -> Result<TtTangent> {
    naive_grad_at(obj, &Arc::new(x.orthogonalize()?))
}

pub fn naive_grad_at(obj: &Objective, base: &Arc<MuOrthogonal>) -> Result<TtTangent> {
    project_tt(base, &obj.euclid_grad_tt(&base.tensor())?)
}

/// Project the Euclidean Hessian applied to the materialized `z`.
pub fn naive_hvp(obj: &Objective, z: &TtTangent) -> Result<TtTangent> {
    let base = z.base();
    project_tt(base, &obj.euclid_hess_vec_tt(&base.tensor(), &z.to_tt()?)?)
}

/// `P_X(A Z)` by partial contractions through `A` without forming the
/// cores of `A Z`.
pub fn project_apply(base: &Arc<MuOrthogonal>, a: &TtMatrix, z: &TtTensor) -> Result<TtTangent> {
    let modes = base.modes();
    if a.row_modes() != modes || a.col_modes() != z.modes() {
        return Err(dim_err!(
            "operator {:?} x {:?} cannot map {:?} into {:?}",
            a.row_modes(),
            a.col_modes(),
            z.modes(),
            modes
        ));
    }
    let d = base.d();
    let (ac, zc) = (a.cores(), z.cores());
    // right[k]: (r_{k-1}, R_{k-1}, s_{k-1})
    let mut right = vec![DenseTensor::ones(&[1, 1, 1]); d + 1];
    for k in (1..d).rev() {
        let t = contract(&zc[k], &right[k + 1], &[(2, 2)])?; // (s, j, r', R')
        let t = contract(&ac[k], &t, &[(2, 1), (3, 3)])?; // (R, i, s, r')
        right[k] = contract(base.v(k), &t, &[(1, 1), (2, 3)])?; // (r, R, s)
    }
    let mut left = DenseTensor::ones(&[1, 1, 1]); // (r, R, s)
    let mut deltas = Vec::with_capacity(d);
    for k in 0..d {
        let t = contract(&left, &zc[k], &[(2, 0)])?; // (r, R, j, s')
        let t = contract(&t, &ac[k], &[(1, 0), (2, 2)])?; // (r, s', i, R')
        let raw = contract(&t, &right[k + 1], &[(1, 2), (3, 1)])?; // (r, i, r')
        deltas.push(raw);
        if k + 1 < d {
            left = contract(base.u(k), &t, &[(0, 0), (1, 2)])?.permute(&[0, 2, 1])?;
        }
    }
    TtTangent::gauged(Arc::clone(base), deltas)
}

/// `Σ_t c_t P_X(⊗_k f_{t,k})` for rank-1 terms given per mode as `(N, n_k)`
/// factor rows. Each projection costs one pass of small chains.
pub fn project_rank_one_sum(base: &Arc<MuOrthogonal>, coeffs: &[f64], factors: &[DenseTensor]) -> Result<TtTangent> {
    let d = base.d();
    let n_terms = coeffs.len();
    if factors.len() != d || factors.iter().zip(base.modes()).any(|(f, n)| f.shape() != [n_terms, n]) {
        return Err(dim_err!("rank-one factors do not match {} terms over modes {:?}", n_terms, base.modes()));
    }
    if n_terms == 0 {
        return Ok(TtTangent::zeros(Arc::clone(base)));
    }
    // Batched vector-matrix chains over the terms.
    let step = |state: &DenseTensor, m: &DenseTensor, from_left: bool| -> DenseTensor {
        let (r, rp) = (m.shape()[1], m.shape()[2]);
        let out_len = if from_left { rp } else { r };
        let mut out = vec![0.0; n_terms * out_len];
        let (s, md) = (state.data(), m.data());
        for t in 0..n_terms {
            let mt = &md[t * r * rp..(t + 1) * r * rp];
            let o = &mut out[t * out_len..(t + 1) * out_len];
            if from_left {
                let st = &s[t * r..(t + 1) * r];
                for a in 0..r {
                    for b in 0..rp {
                        o[b] += st[a] * mt[a * rp + b];
                    }
                }
            } else {
                let st = &s[t * rp..(t + 1) * rp];
                for a in 0..r {
                    o[a] = (0..rp).map(|b| mt[a * rp + b] * st[b]).sum();
                }
            }
        }
        DenseTensor::new(vec![n_terms, out_len], out).expect("consistent sizes")
    };
    let mut right = vec![DenseTensor::ones(&[n_terms, 1]); d + 1];
    for k in (1..d).rev() {
        let m = contract(&factors[k], base.v(k), &[(1, 1)])?; // (N, r, r')
        right[k] = step(&right[k + 1], &m, false);
    }
    let mut left = DenseTensor::ones(&[n_terms, 1]);
    let mut deltas = Vec::with_capacity(d);
    for k in 0..d {
        let (r, n, rp) = (left.cols(), factors[k].cols(), right[k + 1].cols());
        let mut data = vec![0.0; r * n * rp];
        for t in 0..n_terms {
            for a in 0..r {
                let la = coeffs[t] * left.at(t, a);
                if la == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let lf = la * factors[k].at(t, i);
                    if lf == 0.0 {
                        continue;
                    }
                    for b in 0..rp {
                        data[(a * n + i) * rp + b] += lf * right[k + 1].at(t, b);
                    }
                }
            }
        }
        deltas.push(DenseTensor::new(vec![r, n, rp], data)?);
        if k + 1 < d {
            let m = contract(&factors[k], base.u(k), &[(1, 1)])?;
            left = step(&left, &m, true);
        }
    }
    TtTangent::gauged(Arc::clone(base), deltas)
}

fn unit_factor_rows(omega: &IndexSet) -> Vec<DenseTensor> {
    omega
        .modes()
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            DenseTensor::from_fn(&[omega.len(), n], |ix| if omega.indices()[ix[0]][k] == ix[1] { 1.0 } else { 0.0 })
        })
        .collect()
}

fn expmach_factor_rows(e: &ExpMachinesData) -> Result<Vec<DenseTensor>> {
    let w = e.examples();
    let modes = w[0].modes();
    (0..modes.len())
        .map(|k| {
            let data = w.iter().flat_map(|wi| wi.core(k).data().iter().copied()).collect();
            DenseTensor::new(vec![w.len(), modes[k]], data)
        })
        .collect()
}

fn unavailable(obj: &Objective, method: Method) -> Error {
    Error::Unavailable(format!("the {method} method does not support {}", obj.name()))
}

/// Fused kernels for the quadratic form, the Rayleigh quotient, completion
/// (with or without regularization), ExpMachines, and the two trivial
/// objectives.
pub fn optimized_grad(obj: &Objective, base: &Arc<MuOrthogonal>) -> Result<TtTangent> {
    let x = base.tensor();
    let point = TtTangent::point(Arc::clone(base));
    if let Some(omega) = obj.index_set() {
        let coeffs = omega
            .indices()
            .iter()
            .zip(omega.values())
            .map(|(i, a)| Ok(2.0 * (x.entry(i)? - a)))
            .collect::<Result<Vec<_>>>()?;
        let g = project_rank_one_sum(base, &coeffs, &unit_factor_rows(omega))?;
        return match obj.lambda() {
            Some(l) => point.axpy(2.0 * l, &g),
            None => Ok(g),
        };
    }
    if let Some(e) = obj.expmachines_data() {
        let coeffs = e
            .examples()
            .iter()
            .zip(e.labels())
            .map(|(w, y)| Ok(-y * sigmoid(-y * x.dot(w)?)))
            .collect::<Result<Vec<_>>>()?;
        return project_rank_one_sum(base, &coeffs, &expmach_factor_rows(e)?);
    }
    if let Some(f) = obj.linear_term() {
        return project_tt(base, f);
    }
    match (obj.name(), obj.operator()) {
        ("frobenius", _) => Ok(point.scale(2.0)),
        ("qf", Some(a)) => Ok(project_apply(base, a, &x)?.scale(2.0)),
        ("rayleigh", Some(a)) => {
            let b = point.dot(&point)?;
            if b.sqrt() < 1e-14 {
                return Err(Error::DegeneratePoint("Rayleigh quotient of a zero tensor".into()));
            }
            // P_X X = X, so only the operator term needs projecting.
            let pax = project_apply(base, a, &x)?;
            let f = pax.dot(&point)? / b;
            point.axpy(-2.0 * f / b, &pax.scale(2.0 / b))
        }
        _ => Err(unavailable(obj, Method::Optimized)),
    }
}

/// Hessian-vector counterpart of [`optimized_grad`].
pub fn optimized_hvp(obj: &Objective, z: &TtTangent) -> Result<TtTangent> {
    let base = z.base();
    let x = base.tensor();
    let point = TtTangent::point(Arc::clone(base));
    if let Some(omega) = obj.index_set() {
        let zt = z.to_tt()?;
        let coeffs = omega
            .indices()
            .iter()
            .map(|i| Ok(2.0 * zt.entry(i)?))
            .collect::<Result<Vec<_>>>()?;
        let h = project_rank_one_sum(base, &coeffs, &unit_factor_rows(omega))?;
        return match obj.lambda() {
            Some(l) => z.axpy(2.0 * l, &h),
            None => Ok(h),
        };
    }
    if let Some(e) = obj.expmachines_data() {
        let zt = z.to_tt()?;
        let coeffs = e
            .examples()
            .iter()
            .zip(e.labels())
            .map(|(w, y)| {
                let t = y * x.dot(w)?;
                Ok(sigmoid(t) * sigmoid(-t) * zt.dot(w)?)
            })
            .collect::<Result<Vec<_>>>()?;
        return project_rank_one_sum(base, &coeffs, &expmach_factor_rows(e)?);
    }
    if obj.linear_term().is_some() {
        return Ok(TtTangent::zeros(Arc::clone(base)));
    }
    match (obj.name(), obj.operator()) {
        ("frobenius", _) => Ok(z.scale(2.0)),
        ("qf", Some(a)) => Ok(project_apply(base, a, &z.to_tt()?)?.scale(2.0)),
        ("rayleigh", Some(a)) => {
            let b = point.dot(&point)?;
            if b.sqrt() < 1e-14 {
                return Err(Error::DegeneratePoint("Rayleigh quotient of a zero tensor".into()));
            }
            let pax = project_apply(base, a, &x)?;
            let paz = project_apply(base, a, &z.to_tt()?)?;
            let f = pax.dot(&point)? / b;
            let xz = point.dot(z)?;
            let axz = pax.dot(z)?;
            let b2 = b * b;
            // Z and X are tangent, so they project to themselves.
            let mut h = paz.scale(2.0 / b);
            h = z.axpy(-2.0 * f / b, &h)?;
            h = point.axpy(-4.0 * axz / b2, &h)?;
            h = pax.axpy(-4.0 * xz / b2, &h)?;
            point.axpy(8.0 * f * xz / b2, &h)
        }
        _ => Err(unavailable(obj, Method::Optimized)),
    }
}

/// Runs one method for one operation. `z` is required for `Op::Hvp` and
/// must live at `base`.
pub fn compute(obj: &Objective, method: Method, op: Op, base: &Arc<MuOrthogonal>, z: Option<&TtTangent>) -> Result<TtTangent> {
    let z = match (op, z) {
        (Op::Grad, _) => None,
        (Op::Hvp, Some(z)) if Arc::ptr_eq(z.base(), base) || **z.base() == **base => Some(z),
        (Op::Hvp, Some(_)) => return Err(Error::InvalidPair),
        (Op::Hvp, None) => return Err(Error::InvalidValue("hvp needs a direction".into())),
    };
    if obj.is_custom() && method != Method::Ad {
        return Err(unavailable(obj, method));
    }
    match (method, z) {
        (Method::Ad, None) => riemannian_grad_at(obj, base),
        (Method::Ad, Some(z)) => hess_vec_tt(obj, z),
        (Method::Naive, None) => naive_grad_at(obj, base),
        (Method::Naive, Some(z)) => naive_hvp(obj, z),
        (Method::Optimized, None) => optimized_grad(obj, base),
        (Method::Optimized, Some(z)) => optimized_hvp(obj, z),
    }
}

/// Where the oracle takes Euclidean derivatives from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeSource {
    /// Reverse mode over the dense program.
    DenseAd,
    /// Central differences with the given step.
    FiniteDifference(f64),
}

/// Explicit orthogonal projector onto the tangent space at a point, built
/// from an orthonormal basis of the span of all single-entry deltas.
#[derive(Clone, Debug)]
pub struct DenseProjector {
    basis: DenseTensor,
    shape: Vec<usize>,
}

impl DenseProjector {
    pub fn new(base: &MuOrthogonal) -> Result<Self> {
        let shape = base.modes();
        let total = shape.iter().map(|&n| n as u128).product::<u128>();
        if total > ORACLE_CAP as u128 {
            return Err(Error::Oversize { entries: total, cap: ORACLE_CAP });
        }
        let total = total as usize;
        let zero: Vec<DenseTensor> = (0..base.d()).map(|k| DenseTensor::zeros(base.s(k).shape())).collect();
        let mut columns = Vec::new();
        for k in 0..base.d() {
            for e in 0..zero[k].len() {
                let mut deltas = zero.clone();
                let mut data = deltas[k].to_vec();
                data[e] = 1.0;
                deltas[k] = DenseTensor::new(deltas[k].shape().to_vec(), data)?;
                columns.extend(deltas_to_cores(base, &deltas)?.to_dense()?.to_vec());
            }
        }
        let p = columns.len() / total;
        let spanning = DenseTensor::new(vec![p, total], columns)?.t();
        let (u, s, _) = svd_thin(&spanning)?;
        let cut = s.first().copied().unwrap_or(0.0) * 1e-10;
        let keep = s.iter().take_while(|&&v| v > cut).count();
        Ok(Self {
            basis: u.slice(1, 0, keep)?,
            shape,
        })
    }

    /// Dimension of the tangent space.
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn apply(&self, g: &DenseTensor) -> Result<DenseTensor> {
        if g.shape() != self.shape.as_slice() {
            return Err(dim_err!("projector acts on {:?}, got {:?}", self.shape, g.shape()));
        }
        let v = g.reshape(&[g.len(), 1])?;
        let coeffs = self.basis.t().matmul(&v)?;
        self.basis.matmul(&coeffs)?.reshape(&self.shape)
    }
}

fn dense_value(obj: &Objective, x: &DenseTensor) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(x.clone());
    Ok(obj.dense_program(&tape, v)?.item())
}

fn dense_grad(obj: &Objective, x: &DenseTensor) -> Result<DenseTensor> {
    let tape = Tape::new();
    let v = tape.var(x.clone());
    let out = obj.dense_program(&tape, v)?;
    Ok(tape.grad(out, &[v])?[0].value())
}

fn perturbed(x: &DenseTensor, dir: &DenseTensor, h: f64) -> Result<DenseTensor> {
    dir.axpy(h, x)
}

/// Dense `P_X ∇f(X)`.
pub fn dense_oracle_grad(obj: &Objective, base: &MuOrthogonal, source: DerivativeSource) -> Result<DenseTensor> {
    let proj = DenseProjector::new(base)?;
    let x = base.tensor().to_dense()?;
    let g = match source {
        DerivativeSource::DenseAd => dense_grad(obj, &x)?,
        DerivativeSource::FiniteDifference(h) => {
            let mut g = vec![0.0; x.len()];
            for (e, ge) in g.iter_mut().enumerate() {
                let mut unit = vec![0.0; x.len()];
                unit[e] = 1.0;
                let unit = DenseTensor::new(x.shape().to_vec(), unit)?;
                let up = dense_value(obj, &perturbed(&x, &unit, h)?)?;
                let down = dense_value(obj, &perturbed(&x, &unit, -h)?)?;
                *ge = (up - down) / (2.0 * h);
            }
            DenseTensor::new(x.shape().to_vec(), g)?
        }
    };
    proj.apply(&g)
}

/// Dense `P_X ∇²f(X) P_X Z`.
pub fn dense_oracle_hvp(obj: &Objective, base: &MuOrthogonal, z: &DenseTensor, source: DerivativeSource) -> Result<DenseTensor> {
    let proj = DenseProjector::new(base)?;
    let x = base.tensor().to_dense()?;
    let z = proj.apply(z)?;
    let hz = match source {
        DerivativeSource::DenseAd => {
            let tape = Tape::new();
            let v = tape.var(x.clone());
            let out = obj.dense_program(&tape, v)?;
            let g = tape.grad(out, &[v])?[0];
            let w = g.dot(tape.constant(z.clone()))?;
            tape.grad(w, &[v])?[0].value()
        }
        DerivativeSource::FiniteDifference(h) => {
            let up = dense_grad(obj, &perturbed(&x, &z, h)?)?;
            let down = dense_grad(obj, &perturbed(&x, &z, -h)?)?;
            up.sub(&down)?.scale(1.0 / (2.0 * h))
        }
    };
    proj.apply(&hz)
}

/// Iterates and objective history of a fixed-step descent run.
#[derive(Clone, Debug)]
pub struct DemoReport {
    /// Objective values, starting with the initial point.
    pub history: Vec<f64>,
    /// Set when the objective grew tenfold over its start (or left the
    /// finite range); the run stops there.
    pub diverged: bool,
    pub x: TtTensor,
}

fn check_demo_args(steps: usize, step_size: f64, max_rank: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidValue("a demo needs at least one step".into()));
    }
    if !step_size.is_finite() || step_size <= 0.0 {
        return Err(Error::InvalidValue(format!("step size must be positive, got {step_size}")));
    }
    if max_rank == 0 {
        return Err(Error::InvalidValue("max_rank must be positive".into()));
    }
    Ok(())
}

fn descend(
    x0: &TtTensor,
    steps: usize,
    step_size: f64,
    max_rank: usize,
    mut value_and_direction: impl FnMut(&Arc<MuOrthogonal>) -> Result<(f64, TtTangent)>,
) -> Result<DemoReport> {
    check_demo_args(steps, step_size, max_rank)?;
    let mut x = x0.clone();
    let mut history = Vec::with_capacity(steps + 1);
    let mut diverged = false;
    for step in 0..=steps {
        let base = Arc::new(x.orthogonalize()?);
        let (f, g) = value_and_direction(&base)?;
        history.push(f);
        let f0 = history[0];
        if !f.is_finite() || f - f0 > 9.0 * f0.abs() {
            diverged = true;
            break;
        }
        if step == steps {
            break;
        }
        x = TtTensor::axpy(-step_size, &g.to_tt()?, &base.tensor())?.round(&[max_rank], 0.0)?;
    }
    Ok(DemoReport { history, diverged, x })
}

/// Riemannian gradient descent with TT rounding as the retraction.
pub fn riemannian_gd_demo(obj: &Objective, x0: &TtTensor, steps: usize, step_size: f64, max_rank: usize) -> Result<DemoReport> {
    descend(x0, steps, step_size, max_rank, |base| value_and_riemannian_grad(obj, base))
}

/// Descent on `½⟨AX, X⟩ − ⟨F, X⟩` along the stop-gradient residual
/// `P_X(AX − F)`, for symmetric positive definite `A`.
pub fn solve_demo(a: &TtMatrix, f: &TtTensor, x0: &TtTensor, steps: usize, step_size: f64, max_rank: usize) -> Result<DemoReport> {
    let id = TtMatrix::identity(&x0.modes());
    descend(x0, steps, step_size, max_rank, |base| {
        let x = base.tensor();
        let energy = 0.5 * a.apply(&x)?.dot(&x)? - f.dot(&x)?;
        let r = preconditioned_residual(a, &id, f, &x)?;
        // Re-anchor at `base` so the step uses the same representation.
        Ok((energy, TtTangent::new(Arc::clone(base), r.into_deltas())?))
    })
}

/// Interior TT-ranks `min(r, ∏_{≤k} n, ∏_{>k} n)`.
pub fn clip_ranks(modes: &[usize], r: usize) -> Vec<usize> {
    let d = modes.len();
    (1..d)
        .map(|k| {
            let left: usize = modes[..k].iter().fold(1usize, |a, &n| a.saturating_mul(n));
            let right: usize = modes[k..].iter().fold(1usize, |a, &n| a.saturating_mul(n));
            r.min(left).min(right)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub function: Function,
    pub method: Method,
    pub op: Op,
    pub d: usize,
    pub n: usize,
    pub rx: usize,
    pub rz: usize,
    pub ra: usize,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [("d", self.d), ("n", self.n), ("rx", self.rx), ("rz", self.rz), ("ra", self.ra), ("trials", self.trials)];
        match sizes.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::InvalidValue(format!("{name} must be positive"))),
            None if self.d < 2 => Err(Error::InvalidValue("d must be at least 2".into())),
            None => Ok(()),
        }
    }
}

/// Inputs generated deterministically from a config's seed.
#[derive(Clone, Debug)]
pub struct BenchInstance {
    pub objective: Objective,
    pub base: Arc<MuOrthogonal>,
    pub z: TtTangent,
}

/// Observations for completion: `min(10 d n r_x², ∏ n)`.
pub fn completion_count(d: usize, n: usize, rx: usize) -> usize {
    let total = (n as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    ((10 * d * n * rx * rx) as u128).min(total) as usize
}

/// Examples per batch for the ExpMachines loss.
pub const EXPMACH_BATCH: usize = 32;

pub fn bench_instance(cfg: &BenchConfig) -> Result<BenchInstance> {
    cfg.validate()?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let modes = vec![cfg.n; cfg.d];
    let x = TtTensor::random(&modes, &clip_ranks(&modes, cfg.rx), &mut rng)?;
    let x = x.scale(1.0 / x.norm()?);
    let base = Arc::new(x.orthogonalize()?);
    let zt = TtTensor::random(&modes, &clip_ranks(&modes, cfg.rz), &mut rng)?;
    let z = project_tt(&base, &zt)?;
    let z = z.scale(1.0 / z.norm().max(f64::MIN_POSITIVE));
    let objective = match cfg.function {
        Function::Qf => Objective::quadratic_form(TtMatrix::random_symmetric(&modes, cfg.ra, &mut rng)?)?,
        Function::Gram => Objective::gram_quadratic_form(TtMatrix::random(&modes, cfg.ra, &mut rng)?)?,
        Function::Rayleigh => Objective::rayleigh_quotient(TtMatrix::random_symmetric(&modes, cfg.ra, &mut rng)?)?,
        Function::Completion => {
            Objective::completion_loss(IndexSet::random(&modes, completion_count(cfg.d, cfg.n, cfg.rx), &mut rng)?)
        }
        Function::ExpMach => Objective::expmachines_from(ExpMachinesData::random(&modes, EXPMACH_BATCH, &mut rng)?),
    };
    Ok(BenchInstance { objective, base, z })
}

/// One CSV row. Missing timings mean the method was unavailable.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub config: BenchConfig,
    pub seconds_mean: Option<f64>,
    pub seconds_std: Option<f64>,
    pub residual_vs_ad: Option<f64>,
    /// Why the method did not run, if it did not.
    pub note: Option<String>,
}

pub const CSV_HEADER: &str = "function,method,op,d,n,rx,rz,ra,seconds_mean,seconds_std,residual_vs_ad";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.function,
            c.method,
            c.op,
            c.d,
            c.n,
            c.rx,
            c.rz,
            c.ra,
            opt(self.seconds_mean),
            opt(self.seconds_std),
            opt(self.residual_vs_ad)
        )
    }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Warms up once, times `trials` runs and compares against the AD result.
/// An unavailable method yields a row of dashes rather than an error.
pub fn bench_run(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let inst = bench_instance(cfg)?;
    let z = (cfg.op == Op::Hvp).then_some(&inst.z);
    let run = || compute(&inst.objective, cfg.method, cfg.op, &inst.base, z);
    let record = match run() {
        Err(Error::Unavailable(why)) => BenchRecord {
            config: cfg.clone(),
            seconds_mean: None,
            seconds_std: None,
            residual_vs_ad: None,
            note: Some(why),
        },
        Err(e) => return Err(e),
        Ok(first) => {
            let mut samples = Vec::with_capacity(cfg.trials);
            for _ in 0..cfg.trials {
                let start = Instant::now();
                let out = run()?;
                samples.push(start.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
            let reference = match cfg.method {
                Method::Ad => first.clone(),
                _ => compute(&inst.objective, Method::Ad, cfg.op, &inst.base, z)?,
            };
            let (mean, std) = mean_std(&samples);
            BenchRecord {
                config: cfg.clone(),
                seconds_mean: Some(mean),
                seconds_std: Some(std),
                residual_vs_ad: Some(relative_residual(&first, &reference)?),
                note: None,
            }
        }
    };
    if let Some(path) = &cfg.out {
        write_csv(path, std::slice::from_ref(&record))?;
    }
    Ok(vec![record])
}

/// Writes the header and rows, replacing any existing file.
pub fn write_csv(path: &std::path::Path, records: &[BenchRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{CSV_HEADER}")?;
    for r in records {
        writeln!(file, "{}", r.csv_row())?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(function: Function, method: Method, op: Op) -> BenchConfig {
        BenchConfig {
            function,
            method,
            op,
            d: 3,
            n: 3,
            rx: 2,
            rz: 2,
            ra: 2,
            trials: 1,
            seed: 5,
            out: None,
        }
    }

    #[test]
    fn names_round_trip() {
        for f in Function::ALL {
            assert_eq!(f.name().parse::<Function>().unwrap(), *f);
        }
        assert!("bogus".parse::<Method>().is_err());
        assert_eq!("hvp".parse::<Op>().unwrap(), Op::Hvp);
    }

    #[test]
    fn frobenius_oracle_is_twice_the_point() {
        let mut rng = StdRng::seed_from_u64(91);
        let x = TtTensor::random(&[2, 2, 2], &[2, 2], &mut rng).unwrap();
        let base = x.orthogonalize().unwrap();
        let g = dense_oracle_grad(&Objective::frobenius(), &base, DerivativeSource::DenseAd).unwrap();
        let want = x.to_dense().unwrap().scale(2.0);
        assert!(g.sub(&want).unwrap().norm() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent_with_expected_dimension() {
        let mut rng = StdRng::seed_from_u64(92);
        let x = TtTensor::random(&[3, 3, 3], &[2, 2], &mut rng).unwrap();
        let base = x.orthogonalize().unwrap();
        let p = DenseProjector::new(&base).unwrap();
        // Σ r_{k-1} n r_k − Σ r_k²
        assert_eq!(p.dim(), (6 + 12 + 6) - (4 + 4));
        let gt = TtTensor::random(&[3, 3, 3], &[3, 3], &mut rng).unwrap();
        let g = gt.to_dense().unwrap();
        let once = p.apply(&g).unwrap();
        assert!(p.apply(&once).unwrap().sub(&once).unwrap().norm() < 1e-12);
        let fast = project_tt(&Arc::new(base), &gt).unwrap().to_dense().unwrap();
        assert!(fast.sub(&once).unwrap().norm() < 1e-12 * once.norm());
    }

    #[test]
    fn project_apply_matches_materialized_product() {
        let mut rng = StdRng::seed_from_u64(93);
        let modes = [2, 3, 2];
        let base = Arc::new(TtTensor::random(&modes, &[2, 2], &mut rng).unwrap().orthogonalize().unwrap());
        let a = TtMatrix::random(&modes, 3, &mut rng).unwrap();
        let z = TtTensor::random(&modes, &[3, 2], &mut rng).unwrap();
        let fused = project_apply(&base, &a, &z).unwrap();
        let plain = project_tt(&base, &a.apply(&z).unwrap()).unwrap();
        assert!(relative_residual(&fused, &plain).unwrap() < 1e-12);
        assert!(fused.gauge_residual() < 1e-12);
    }

    #[test]
    fn rank_one_sum_matches_projected_sum() {
        let mut rng = StdRng::seed_from_u64(94);
        let modes = [3, 2, 3];
        let base = Arc::new(TtTensor::random(&modes, &[2, 2], &mut rng).unwrap().orthogonalize().unwrap());
        let data = ExpMachinesData::random(&modes, 4, &mut rng).unwrap();
        let coeffs = [0.5, -1.0, 2.0, 0.25];
        let fused = project_rank_one_sum(&base, &coeffs, &expmach_factor_rows(&data).unwrap()).unwrap();
        let terms: Vec<(f64, &TtTensor)> = coeffs.iter().copied().zip(data.examples()).collect();
        let plain = project_tt(&base, &TtTensor::sum(&terms).unwrap()).unwrap();
        assert!(relative_residual(&fused, &plain).unwrap() < 1e-12);
    }

    #[test]
    fn quadratic_identity_methods_coincide() {
        let x = TtTensor::ones(&[2, 2, 2]);
        let base = Arc::new(x.orthogonalize().unwrap());
        let obj = Objective::quadratic_form(TtMatrix::identity(&[2, 2, 2])).unwrap();
        let ad = compute(&obj, Method::Ad, Op::Grad, &base, None).unwrap();
        for m in [Method::Naive, Method::Optimized] {
            assert!(relative_residual(&compute(&obj, m, Op::Grad, &base, None).unwrap(), &ad).unwrap() < 1e-14);
        }
        let ray = Objective::rayleigh_quotient(TtMatrix::identity(&[2, 2, 2])).unwrap();
        for m in Method::ALL {
            let g = compute(&ray, *m, Op::Grad, &base, None).unwrap().norm();
            assert!(g < 1e-14, "{m}: {g:e}");
        }
    }

    #[test]
    fn bench_rows_and_dashes() {
        let rec = bench_run(&cfg(Function::Qf, Method::Naive, Op::Grad)).unwrap();
        assert_eq!(rec[0].seconds_std, Some(0.0));
        assert!(rec[0].residual_vs_ad.unwrap() < 1e-8);
        let gram = bench_run(&cfg(Function::Gram, Method::Optimized, Op::Hvp)).unwrap();
        assert!(gram[0].seconds_mean.is_none());
        assert!(gram[0].csv_row().ends_with(",-,-,-"));
        let a = bench_instance(&cfg(Function::Completion, Method::Ad, Op::Grad)).unwrap();
        let b = bench_instance(&cfg(Function::Completion, Method::Naive, Op::Hvp)).unwrap();
        assert_eq!(a.base.tensor(), b.base.tensor());
        assert_eq!(a.objective.index_set(), b.objective.index_set());
    }

    #[test]
    fn demo_arguments_are_checked() {
        let x = TtTensor::ones(&[2, 2]);
        let obj = Objective::frobenius();
        assert!(riemannian_gd_demo(&obj, &x, 0, 0.1, 1).is_err());
        assert!(riemannian_gd_demo(&obj, &x, 3, -0.1, 1).is_err());
        let rep = riemannian_gd_demo(&obj, &x, 3, 0.1, 1).unwrap();
        assert_eq!(rep.history.len(), 4);
        // X ← 0.8 X each step, so f shrinks by 0.64.
        for w in rep.history.windows(2) {
            assert!((w[1] / w[0] - 0.64).abs() < 1e-12);
        }
        let blowup = riemannian_gd_demo(&obj, &x, 10, 3.0, 1).unwrap();
        assert!(blowup.diverged && blowup.history.len() < 11);
    }
}
