//! Objective functions on TT tensors.
//!
//! Each [`Objective`] is a recordable program over TT cores (used by the
//! AD methods), a closed-form evaluator, analytic Euclidean gradients and
//! Hessian-vector products in TT form (used by the naive baseline), and a
//! program over the dense tensor (used by the dense oracle).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ad::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::taped;
use crate::tensor::DenseTensor;
use crate::tt::{TtMatrix, TtTensor, DENSE_CAP};
use crate::tt_manifold::TtProgram;

/// Largest number of rank-1 terms the analytic TT gradients are built
/// from. Beyond it the naive method reports itself unavailable.
pub const NAIVE_TERM_CAP: usize = 512;

/// Dense size up to which operator symmetry is checked in debug builds.
const SYMMETRY_CHECK_CAP: usize = 4096;

/// Observed entries: 0-based multi-indices with values.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSet {
    modes: Vec<usize>,
    indices: Vec<Vec<usize>>,
    values: Vec<f64>,
}

impl IndexSet {
    pub fn new(modes: &[usize], indices: Vec<Vec<usize>>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(dim_err!("{} indices but {} values", indices.len(), values.len()));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for idx in &indices {
            if idx.len() != modes.len() || idx.iter().zip(modes).any(|(i, n)| i >= n) {
                return Err(Error::Index(format!("index {:?} out of range for modes {:?}", idx, modes)));
            }
            if !seen.insert(idx.clone()) {
                return Err(Error::InvalidData(format!("duplicate index {:?}", idx)));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite observation {v}")));
        }
        Ok(Self {
            modes: modes.to_vec(),
            indices,
            values,
        })
    }

    /// Parses lines of `d` indices followed by a value; `#` starts a comment.
    pub fn parse(text: &str, modes: &[usize]) -> Result<Self> {
        let d = modes.len();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != d + 1 {
                return Err(Error::Format(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    d + 1,
                    fields.len()
                )));
            }
            let idx = fields[..d]
                .iter()
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            let v: f64 = fields[d]
                .parse()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            indices.push(idx);
            values.push(v);
        }
        Self::new(modes, indices, values)
    }

    pub fn read(path: impl AsRef<Path>, modes: &[usize]) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, modes)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (idx, v) in self.indices.iter().zip(&self.values) {
            for i in idx {
                out.push_str(&i.to_string());
                out.push(' ');
            }
            out.push_str(&format!("{v:e}\n"));
        }
        out
    }

    /// `count` distinct uniformly random positions with standard normal values.
    pub fn random<R: Rng + ?Sized>(modes: &[usize], count: usize, rng: &mut R) -> Result<Self> {
        let total: u128 = modes.iter().map(|&n| n as u128).product();
        if (count as u128) > total {
            return Err(Error::InvalidValue(format!("{count} samples from {total} positions")));
        }
        let mut seen = HashSet::with_capacity(count);
        let mut indices = Vec::with_capacity(count);
        while indices.len() < count {
            let idx: Vec<usize> = modes.iter().map(|&n| rng.gen_range(0..n)).collect();
            if seen.insert(idx.clone()) {
                indices.push(idx);
            }
        }
        let values = (0..count).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(modes, indices, values)
    }

    /// Positions with the entries of `x` as observed values.
    pub fn sample_tensor(x: &TtTensor, indices: Vec<Vec<usize>>) -> Result<Self> {
        let values = indices.iter().map(|i| x.entry(i)).collect::<Result<Vec<_>>>()?;
        Self::new(&x.modes(), indices, values)
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices regrouped per mode, as used by batched gathers.
    pub fn per_mode(&self) -> Vec<Vec<usize>> {
        (0..self.modes.len())
            .map(|k| self.indices.iter().map(|idx| idx[k]).collect())
            .collect()
    }

    /// Row-major positions in the dense tensor.
    pub fn flat(&self) -> Vec<usize> {
        self.indices
            .iter()
            .map(|idx| idx.iter().zip(&self.modes).fold(0, |acc, (&i, &n)| acc * n + i))
            .collect()
    }
}

/// Labelled rank-1 examples for the exponential-machines loss.
#[derive(Clone, Debug)]
pub struct ExpMachinesData {
    w: Vec<TtTensor>,
    y: Vec<f64>,
    /// Per mode, the `(N, n_k)` matrix of factor rows.
    factors: Vec<DenseTensor>,
}

impl ExpMachinesData {
    pub fn new(w: Vec<TtTensor>, y: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.len() != y.len() {
            return Err(Error::InvalidData(format!("{} examples with {} labels", w.len(), y.len())));
        }
        let modes = w[0].modes();
        for (i, wi) in w.iter().enumerate() {
            if wi.modes() != modes {
                return Err(dim_err!("example {i} has modes {:?}, expected {:?}", wi.modes(), modes));
            }
            if wi.max_rank() != 1 {
                return Err(Error::InvalidData(format!("example {i} has TT-rank {:?}, expected 1", wi.tt_ranks())));
            }
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidData(format!("label {bad} is not ±1")));
        }
        let factors = (0..modes.len())
            .map(|k| {
                let data = w.iter().flat_map(|wi| wi.core(k).data().iter().copied()).collect();
                DenseTensor::new(vec![w.len(), modes[k]], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { w, y, factors })
    }

    /// Random rank-1 examples with standard normal factors scaled by
    /// `1/√n_k`, and random labels.
    pub fn random<R: Rng + ?Sized>(modes: &[usize], count: usize, rng: &mut R) -> Result<Self> {
        let mut w = Vec::with_capacity(count);
        let mut y = Vec::with_capacity(count);
        for _ in 0..count {
            let fs: Vec<Vec<f64>> = modes
                .iter()
                .map(|&n| {
                    let c = 1.0 / (n as f64).sqrt();
                    (0..n).map(|_| c * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            w.push(TtTensor::rank_one(&fs)?);
            y.push(if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        }
        Self::new(w, y)
    }

    pub fn examples(&self) -> &[TtTensor] {
        &self.w
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{-t})` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `Σ softplus(t_i)` on the tape, branching on the sign of each entry.
fn softplus_sum<'t>(t: Var<'t>) -> Result<Var<'t>> {
    let tape = t.tape();
    let v = t.value();
    let sign = tape.constant(v.map(|x| if x >= 0.0 { 1.0 } else { -1.0 }));
    let pos = tape.constant(v.map(|x| if x >= 0.0 { 1.0 } else { 0.0 }));
    let abs = t.mul(sign)?;
    let relu = t.mul(pos)?;
    Ok(relu.add(abs.neg().exp().ln_1p())?.sum())
}

/// Rank-`N` TT tensor `Σ_t c_t ⊗_k f_{t,k}` from per-mode `(N, n_k)` factor
/// rows, with block-diagonal cores.
fn diag_sum(coeffs: &[f64], factors: &[DenseTensor]) -> Result<TtTensor> {
    let n_terms = coeffs.len();
    let d = factors.len();
    if n_terms == 0 {
        let modes: Vec<usize> = factors.iter().map(|f| f.cols()).collect();
        return TtTensor::zeros(&modes, &[1]);
    }
    let cores = factors
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let n = f.cols();
            let (left, right) = (if k == 0 { 1 } else { n_terms }, if k == d - 1 { 1 } else { n_terms });
            let mut data = vec![0.0; left * n * right];
            for t in 0..n_terms {
                let (a, b) = (if k == 0 { 0 } else { t }, if k == d - 1 { 0 } else { t });
                let c = if k == 0 { coeffs[t] } else { 1.0 };
                for i in 0..n {
                    data[(a * n + i) * right + b] = c * f.at(t, i);
                }
            }
            DenseTensor::new(vec![left, n, right], data)
        })
        .collect::<Result<Vec<_>>>()?;
    if d == 1 {
        // One mode: the single core must be (1, n, 1).
        let n = factors[0].cols();
        let mut data = vec![0.0; n];
        for (t, &c) in coeffs.iter().enumerate() {
            for (i, v) in data.iter_mut().enumerate() {
                *v += c * factors[0].at(t, i);
            }
        }
        return TtTensor::new(vec![DenseTensor::new(vec![1, n, 1], data)?]);
    }
    TtTensor::new(cores)
}

fn unit_factors(omega: &IndexSet) -> Vec<DenseTensor> {
    omega
        .modes()
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            DenseTensor::from_fn(&[omega.len(), n], |ix| if omega.indices[ix[0]][k] == ix[1] { 1.0 } else { 0.0 })
        })
        .collect()
}

#[derive(Clone)]
enum Kind {
    Frobenius,
    Linear(TtTensor),
    Quadratic(TtMatrix),
    Gram(TtMatrix),
    Rayleigh(TtMatrix),
    Completion(IndexSet),
    RegularizedCompletion(IndexSet, f64),
    ExpMachines(ExpMachinesData),
    Custom(Arc<dyn TtProgram + Send + Sync>),
}

/// A smooth function of a TT tensor.
#[derive(Clone)]
pub struct Objective {
    name: String,
    kind: Kind,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Objective({})", self.name)
    }
}

fn check_square(a: &TtMatrix) -> Result<()> {
    if a.row_modes() != a.col_modes() {
        return Err(dim_err!("operator is not square: {:?} x {:?}", a.row_modes(), a.col_modes()));
    }
    Ok(())
}

fn check_symmetric(a: &TtMatrix) -> Result<()> {
    if !cfg!(debug_assertions) {
        return Ok(());
    }
    let rows: usize = a.row_modes().iter().product();
    if rows > SYMMETRY_CHECK_CAP {
        return Ok(());
    }
    let dense = a.to_dense()?;
    let asym = dense.sub(&dense.t())?.norm();
    if asym > 1e-10 * dense.norm().max(1.0) {
        return Err(Error::InvalidData(format!("operator is not symmetric (‖A − Aᵀ‖ = {asym:.3e})")));
    }
    Ok(())
}

impl Objective {
    /// `⟨X, X⟩`
    pub fn frobenius() -> Self {
        Self {
            name: "frobenius".into(),
            kind: Kind::Frobenius,
        }
    }

    /// `⟨F, X⟩`
    pub fn linear(f: TtTensor) -> Self {
        Self {
            name: "linear".into(),
            kind: Kind::Linear(f),
        }
    }

    /// `⟨A X, X⟩` for symmetric `A`.
    pub fn quadratic_form(a: TtMatrix) -> Result<Self> {
        check_square(&a)?;
        check_symmetric(&a)?;
        Ok(Self {
            name: "qf".into(),
            kind: Kind::Quadratic(a),
        })
    }

    /// `⟨Aᵀ A X, X⟩ = ‖A X‖²`.
    pub fn gram_quadratic_form(a: TtMatrix) -> Result<Self> {
        check_square(&a)?;
        Ok(Self {
            name: "gram".into(),
            kind: Kind::Gram(a),
        })
    }

    /// `⟨A X, X⟩ / ⟨X, X⟩` for symmetric `A`.
    pub fn rayleigh_quotient(a: TtMatrix) -> Result<Self> {
        check_square(&a)?;
        check_symmetric(&a)?;
        Ok(Self {
            name: "rayleigh".into(),
            kind: Kind::Rayleigh(a),
        })
    }

    /// `‖P_Ω(X − A)‖²`
    pub fn completion_loss(omega: IndexSet) -> Self {
        Self {
            name: "completion".into(),
            kind: Kind::Completion(omega),
        }
    }

    /// `‖P_Ω(X − A)‖² + λ ⟨X, X⟩`
    pub fn regularized_completion(omega: IndexSet, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidValue(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self {
            name: "regularized_completion".into(),
            kind: Kind::RegularizedCompletion(omega, lambda),
        })
    }

    /// `Σ_i log(1 + exp(−y_i ⟨X, W_i⟩))` with rank-1 `W_i` and `y_i = ±1`.
    pub fn expmachines_loss(w: Vec<TtTensor>, y: Vec<f64>) -> Result<Self> {
        Ok(Self::expmachines_from(ExpMachinesData::new(w, y)?))
    }

    pub fn expmachines_from(data: ExpMachinesData) -> Self {
        Self {
            name: "expmach".into(),
            kind: Kind::ExpMachines(data),
        }
    }

    /// A user program; only AD-based methods apply to it.
    pub fn custom(name: &str, program: Arc<dyn TtProgram + Send + Sync>) -> Self {
        Self {
            name: name.into(),
            kind: Kind::Custom(program),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Operator of a quadratic form, Gram form or Rayleigh quotient.
    pub fn operator(&self) -> Option<&TtMatrix> {
        match &self.kind {
            Kind::Quadratic(a) | Kind::Gram(a) | Kind::Rayleigh(a) => Some(a),
            _ => None,
        }
    }

    pub fn index_set(&self) -> Option<&IndexSet> {
        match &self.kind {
            Kind::Completion(o) | Kind::RegularizedCompletion(o, _) => Some(o),
            _ => None,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match &self.kind {
            Kind::RegularizedCompletion(_, l) => Some(*l),
            _ => None,
        }
    }

    pub fn expmachines_data(&self) -> Option<&ExpMachinesData> {
        match &self.kind {
            Kind::ExpMachines(e) => Some(e),
            _ => None,
        }
    }

    pub fn linear_term(&self) -> Option<&TtTensor> {
        match &self.kind {
            Kind::Linear(f) => Some(f),
            _ => None,
        }
    }

    pub fn is_custom(&self) -> bool {
        matches!(self.kind, Kind::Custom(_))
    }

    fn check_modes(&self, modes: &[usize]) -> Result<()> {
        let want: Option<Vec<usize>> = match &self.kind {
            Kind::Frobenius | Kind::Custom(_) => None,
            Kind::Linear(f) => Some(f.modes()),
            Kind::Quadratic(a) | Kind::Gram(a) | Kind::Rayleigh(a) => Some(a.col_modes()),
            Kind::Completion(o) | Kind::RegularizedCompletion(o, _) => Some(o.modes().to_vec()),
            Kind::ExpMachines(e) => Some(e.w[0].modes()),
        };
        match want {
            Some(w) if w != modes => Err(dim_err!("objective expects modes {:?}, got {:?}", w, modes)),
            _ => Ok(()),
        }
    }

    /// `f(X)` computed directly in TT format.
    pub fn evaluate(&self, x: &TtTensor) -> Result<f64> {
        self.check_modes(&x.modes())?;
        match &self.kind {
            Kind::Frobenius => x.dot(x),
            Kind::Linear(f) => f.dot(x),
            Kind::Quadratic(a) => a.apply(x)?.dot(x),
            Kind::Gram(a) => {
                let ax = a.apply(x)?;
                ax.dot(&ax)
            }
            Kind::Rayleigh(a) => {
                let b = x.dot(x)?;
                if b.sqrt() < 1e-14 {
                    return Err(Error::DegeneratePoint("Rayleigh quotient of a zero tensor".into()));
                }
                Ok(a.apply(x)?.dot(x)? / b)
            }
            Kind::Completion(o) => completion_value(o, x),
            Kind::RegularizedCompletion(o, l) => Ok(completion_value(o, x)? + l * x.dot(x)?),
            Kind::ExpMachines(e) => e
                .w
                .iter()
                .zip(&e.y)
                .try_fold(0.0, |acc, (w, y)| Ok(acc + softplus(-y * x.dot(w)?))),
            Kind::Custom(p) => {
                let tape = Tape::new();
                let cores = taped::constants(&tape, x);
                Ok(p.eval(&tape, &cores)?.item())
            }
        }
    }

    fn unavailable(&self, what: &str) -> Error {
        Error::Unavailable(format!("{what} is not available for {}", self.name))
    }

    /// Euclidean gradient as a TT tensor.
    pub fn euclid_grad_tt(&self, x: &TtTensor) -> Result<TtTensor> {
        self.check_modes(&x.modes())?;
        match &self.kind {
            Kind::Frobenius => Ok(x.scale(2.0)),
            Kind::Linear(f) => Ok(f.clone()),
            Kind::Quadratic(a) => Ok(a.apply(x)?.scale(2.0)),
            Kind::Gram(a) => Ok(a.transpose().apply(&a.apply(x)?)?.scale(2.0)),
            Kind::Rayleigh(a) => {
                let b = x.dot(x)?;
                if b.sqrt() < 1e-14 {
                    return Err(Error::DegeneratePoint("Rayleigh quotient of a zero tensor".into()));
                }
                let ax = a.apply(x)?;
                let f = ax.dot(x)? / b;
                TtTensor::sum(&[(2.0 / b, &ax), (-2.0 * f / b, x)])
            }
            Kind::Completion(o) => self.completion_grad(o, x),
            Kind::RegularizedCompletion(o, l) => TtTensor::axpy(2.0 * l, x, &self.completion_grad(o, x)?),
            Kind::ExpMachines(e) => {
                if e.len() > NAIVE_TERM_CAP {
                    return Err(self.unavailable("the analytic gradient"));
                }
                let coeffs = e
                    .w
                    .iter()
                    .zip(&e.y)
                    .map(|(w, y)| Ok(-y * sigmoid(-y * x.dot(w)?)))
                    .collect::<Result<Vec<_>>>()?;
                diag_sum(&coeffs, &e.factors)
            }
            Kind::Custom(_) => Err(self.unavailable("the analytic gradient")),
        }
    }

    fn completion_grad(&self, o: &IndexSet, x: &TtTensor) -> Result<TtTensor> {
        if o.len() > NAIVE_TERM_CAP {
            return Err(self.unavailable(&format!("the analytic gradient with {} > {NAIVE_TERM_CAP} observations", o.len())));
        }
        let coeffs = o
            .indices
            .iter()
            .zip(&o.values)
            .map(|(i, a)| Ok(2.0 * (x.entry(i)? - a)))
            .collect::<Result<Vec<_>>>()?;
        diag_sum(&coeffs, &unit_factors(o))
    }

    /// Euclidean Hessian applied to `z`, as a TT tensor.
    pub fn euclid_hess_vec_tt(&self, x: &TtTensor, z: &TtTensor) -> Result<TtTensor> {
        self.check_modes(&x.modes())?;
        if z.modes() != x.modes() {
            return Err(dim_err!("direction modes {:?} differ from {:?}", z.modes(), x.modes()));
        }
        match &self.kind {
            Kind::Frobenius => Ok(z.scale(2.0)),
            Kind::Linear(_) => TtTensor::zeros(&x.modes(), &[1]),
            Kind::Quadratic(a) => Ok(a.apply(z)?.scale(2.0)),
            Kind::Gram(a) => Ok(a.transpose().apply(&a.apply(z)?)?.scale(2.0)),
            Kind::Rayleigh(a) => {
                let b = x.dot(x)?;
                if b.sqrt() < 1e-14 {
                    return Err(Error::DegeneratePoint("Rayleigh quotient of a zero tensor".into()));
                }
                let ax = a.apply(x)?;
                let az = a.apply(z)?;
                let f = ax.dot(x)? / b;
                let xz = x.dot(z)?;
                let axz = ax.dot(z)?;
                let b2 = b * b;
                TtTensor::sum(&[
                    (2.0 / b, &az),
                    (-2.0 * f / b, z),
                    (-4.0 * axz / b2, x),
                    (-4.0 * xz / b2, &ax),
                    (8.0 * f * xz / b2, x),
                ])
            }
            Kind::Completion(o) => self.completion_hess(o, z),
            Kind::RegularizedCompletion(o, l) => TtTensor::axpy(2.0 * l, z, &self.completion_hess(o, z)?),
            Kind::ExpMachines(e) => {
                if e.len() > NAIVE_TERM_CAP {
                    return Err(self.unavailable("the analytic Hessian"));
                }
                let coeffs = e
                    .w
                    .iter()
                    .zip(&e.y)
                    .map(|(w, y)| {
                        let t = y * x.dot(w)?;
                        Ok(sigmoid(t) * sigmoid(-t) * z.dot(w)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                diag_sum(&coeffs, &e.factors)
            }
            Kind::Custom(_) => Err(self.unavailable("the analytic Hessian")),
        }
    }

    fn completion_hess(&self, o: &IndexSet, z: &TtTensor) -> Result<TtTensor> {
        if o.len() > NAIVE_TERM_CAP {
            return Err(self.unavailable(&format!("the analytic Hessian with {} > {NAIVE_TERM_CAP} observations", o.len())));
        }
        let coeffs = o
            .indices
            .iter()
            .map(|i| Ok(2.0 * z.entry(i)?))
            .collect::<Result<Vec<_>>>()?;
        diag_sum(&coeffs, &unit_factors(o))
    }

    /// The same function recorded over a dense tensor `x` (desk scale).
    pub fn dense_program<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        self.check_modes(&shape)?;
        let n: usize = shape.iter().product();
        let flat = x.reshape(&[n])?;
        let dense_op = |a: &TtMatrix| -> Result<Var<'t>> { Ok(tape.constant(a.to_dense()?)) };
        match &self.kind {
            Kind::Frobenius => flat.dot(flat),
            Kind::Linear(f) => tape.constant(f.to_dense()?.reshape(&[n])?).dot(flat),
            Kind::Quadratic(a) => dense_op(a)?.contract(flat, &[(1, 0)])?.dot(flat),
            Kind::Gram(a) => {
                let ax = dense_op(a)?.contract(flat, &[(1, 0)])?;
                ax.dot(ax)
            }
            Kind::Rayleigh(a) => {
                let num = dense_op(a)?.contract(flat, &[(1, 0)])?.dot(flat)?;
                num.div(flat.dot(flat)?)
            }
            Kind::Completion(o) => dense_completion(tape, flat, o),
            Kind::RegularizedCompletion(o, l) => dense_completion(tape, flat, o)?.add(flat.dot(flat)?.scale(*l)),
            Kind::ExpMachines(e) => {
                let rows = e
                    .w
                    .iter()
                    .map(|w| w.to_dense()?.reshape(&[1, n]))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&DenseTensor> = rows.iter().collect();
                let wmat = tape.constant(DenseTensor::concat(&refs, 0)?);
                let s = wmat.contract(flat, &[(1, 0)])?;
                let negy = tape.constant(DenseTensor::new(vec![e.len()], e.y.iter().map(|y| -y).collect())?);
                softplus_sum(s.mul(negy)?)
            }
            Kind::Custom(_) => Err(self.unavailable("a dense program")),
        }
    }
}

fn completion_value(o: &IndexSet, x: &TtTensor) -> Result<f64> {
    o.indices
        .iter()
        .zip(&o.values)
        .try_fold(0.0, |acc, (i, a)| Ok(acc + (x.entry(i)? - a).powi(2)))
}

fn dense_completion<'t>(tape: &'t Tape, flat: Var<'t>, o: &IndexSet) -> Result<Var<'t>> {
    if o.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let picked = flat.gather(0, &o.flat())?;
    let res = picked.sub(tape.constant(DenseTensor::new(vec![o.len()], o.values.clone())?))?;
    res.dot(res)
}

fn taped_completion<'t>(tape: &'t Tape, cores: &[Var<'t>], o: &IndexSet) -> Result<Var<'t>> {
    if o.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let xs = taped::entries(cores, &o.per_mode())?;
    let res = xs.sub(tape.constant(DenseTensor::new(vec![o.len()], o.values.clone())?))?;
    res.dot(res)
}

impl TtProgram for Objective {
    fn eval<'t>(&self, tape: &'t Tape, cores: &[Var<'t>]) -> Result<Var<'t>> {
        let modes: Vec<usize> = cores.iter().map(|c| c.shape()[1]).collect();
        self.check_modes(&modes)?;
        match &self.kind {
            Kind::Frobenius => taped::dot(cores, cores),
            Kind::Linear(f) => taped::dot(&taped::constants(tape, f), cores),
            Kind::Quadratic(a) => taped::apply_dot(cores, &taped::operator(tape, a), cores),
            Kind::Gram(a) => {
                // ⟨A X, (Aᵀ)ᵀ X⟩ = ‖A X‖²
                let ac = taped::operator(tape, a);
                let at = taped::operator(tape, &a.transpose());
                taped::two_op_dot(cores, &ac, &at, cores)
            }
            Kind::Rayleigh(a) => {
                let num = taped::apply_dot(cores, &taped::operator(tape, a), cores)?;
                let den = taped::dot(cores, cores)?;
                if den.item().sqrt() < 1e-14 {
                    return Err(Error::DegeneratePoint("Rayleigh quotient of a zero tensor".into()));
                }
                num.div(den)
            }
            Kind::Completion(o) => taped_completion(tape, cores, o),
            Kind::RegularizedCompletion(o, l) => {
                taped_completion(tape, cores, o)?.add(taped::dot(cores, cores)?.scale(*l))
            }
            Kind::ExpMachines(e) => {
                let factors: Vec<Var<'t>> = e.factors.iter().map(|f| tape.constant(f.clone())).collect();
                let s = taped::rank_one_dots(cores, &factors)?;
                let negy = tape.constant(DenseTensor::new(vec![e.len()], e.y.iter().map(|y| -y).collect())?);
                softplus_sum(s.mul(negy)?)
            }
            Kind::Custom(p) => p.eval(tape, cores),
        }
    }
}

/// Caps dense materialization for oracles built from objectives.
pub fn dense_size_ok(modes: &[usize]) -> bool {
    modes.iter().map(|&n| n as u128).product::<u128>() <= DENSE_CAP as u128
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, SeedableRng};

    fn ones3() -> TtTensor {
        TtTensor::ones(&[2, 2, 2])
    }

    fn dense_grad(obj: &Objective, x: &TtTensor) -> (f64, DenseTensor) {
        let xd = x.to_dense().unwrap();
        let tape = Tape::new();
        let v = tape.var(xd);
        let out = obj.dense_program(&tape, v).unwrap();
        let g = tape.grad(out, &[v]).unwrap()[0].value();
        (out.item(), g)
    }

    #[test]
    fn quadratic_examples() {
        let id = TtMatrix::identity(&[2, 2, 2]);
        assert_eq!(Objective::quadratic_form(id.clone()).unwrap().evaluate(&ones3()).unwrap(), 8.0);
        let two = Objective::quadratic_form(id.scale(2.0)).unwrap();
        assert_eq!(two.evaluate(&ones3()).unwrap(), 16.0);
        let mut rng = StdRng::seed_from_u64(71);
        let a = TtMatrix::random_symmetric(&[2, 3, 2], 2, &mut rng).unwrap();
        let x = TtTensor::random(&[2, 3, 2], &[2, 2], &mut rng).unwrap();
        let xd = x.to_dense().unwrap().reshape(&[12, 1]).unwrap();
        let want = a.to_dense().unwrap().matmul(&xd).unwrap().dot(&xd).unwrap();
        let obj = Objective::quadratic_form(a).unwrap();
        assert!((obj.evaluate(&x).unwrap() - want).abs() < 1e-11 * want.abs());
        let nonsym = TtMatrix::random(&[2, 2], 2, &mut rng).unwrap();
        assert!(matches!(Objective::quadratic_form(nonsym), Err(Error::InvalidData(_))));
    }

    #[test]
    fn gram_examples() {
        let id = TtMatrix::identity(&[2, 2, 2]);
        assert_eq!(Objective::gram_quadratic_form(id).unwrap().evaluate(&ones3()).unwrap(), 8.0);
        let zero = TtMatrix::zeros(&[2, 2, 2], &[2, 2, 2]).unwrap();
        assert_eq!(Objective::gram_quadratic_form(zero).unwrap().evaluate(&ones3()).unwrap(), 0.0);
        let mut rng = StdRng::seed_from_u64(72);
        let a = TtMatrix::random(&[2, 3, 2], 2, &mut rng).unwrap();
        let x = TtTensor::random(&[2, 3, 2], &[2, 2], &mut rng).unwrap();
        let ax = a.to_dense().unwrap().matmul(&x.to_dense().unwrap().reshape(&[12, 1]).unwrap()).unwrap();
        let want = ax.dot(&ax).unwrap();
        let obj = Objective::gram_quadratic_form(a).unwrap();
        assert!((obj.evaluate(&x).unwrap() - want).abs() < 1e-11 * want);
    }

    #[test]
    fn rayleigh_examples() {
        let id = TtMatrix::identity(&[2, 2, 2]);
        let mut rng = StdRng::seed_from_u64(73);
        let x = TtTensor::random(&[2, 2, 2], &[2, 2], &mut rng).unwrap();
        let r = Objective::rayleigh_quotient(id.clone()).unwrap();
        assert!((r.evaluate(&x).unwrap() - 1.0).abs() < 1e-14);
        let r3 = Objective::rayleigh_quotient(id.scale(3.0)).unwrap();
        assert!((r3.evaluate(&x).unwrap() - 3.0).abs() < 1e-14);
        let zero = TtTensor::zeros(&[2, 2, 2], &[1]).unwrap();
        assert!(matches!(r.evaluate(&zero), Err(Error::DegeneratePoint(_))));
    }

    #[test]
    fn completion_examples() {
        let omega = IndexSet::new(&[2, 2, 2], vec![vec![0, 0, 0]], vec![0.0]).unwrap();
        assert_eq!(Objective::completion_loss(omega).evaluate(&ones3()).unwrap(), 1.0);
        let mut rng = StdRng::seed_from_u64(74);
        let x = TtTensor::random(&[3, 3, 3], &[2, 2], &mut rng).unwrap();
        let pos = IndexSet::random(&[3, 3, 3], 20, &mut rng).unwrap();
        let fit = IndexSet::sample_tensor(&x, pos.indices().to_vec()).unwrap();
        assert!(Objective::completion_loss(fit).evaluate(&x).unwrap() < 1e-24);
        let dense = x.to_dense().unwrap();
        let want: f64 = pos
            .indices()
            .iter()
            .zip(pos.values())
            .map(|(i, a)| (dense.get(i) - a).powi(2))
            .sum();
        let got = Objective::completion_loss(pos).evaluate(&x).unwrap();
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn index_set_validation_and_parsing() {
        assert!(matches!(IndexSet::new(&[2, 2], vec![vec![0, 2]], vec![1.0]), Err(Error::Index(_))));
        assert!(matches!(
            IndexSet::new(&[2, 2], vec![vec![0, 1], vec![0, 1]], vec![1.0, 2.0]),
            Err(Error::InvalidData(_))
        ));
        let text = "# observations\n0 1 2.5\n\n1 0 -1e-3  # trailing\n";
        let o = IndexSet::parse(text, &[2, 2]).unwrap();
        assert_eq!(o.indices(), &[vec![0, 1], vec![1, 0]]);
        assert_eq!(o.values(), &[2.5, -1e-3]);
        assert_eq!(IndexSet::parse(&o.to_text(), &[2, 2]).unwrap(), o);
        assert!(matches!(IndexSet::parse("0 1\n", &[2, 2]), Err(Error::Format(_))));
        assert!(matches!(IndexSet::parse("0 x 1.0\n", &[2, 2]), Err(Error::Format(_))));
    }

    #[test]
    fn expmachines_examples() {
        let w = vec![ones3()];
        let pos = Objective::expmachines_loss(w.clone(), vec![1.0]).unwrap();
        let v = pos.evaluate(&ones3()).unwrap();
        assert!((v - (-8f64).exp().ln_1p()).abs() < 1e-15 * v);
        assert!((v - 3.3535e-4).abs() < 1e-7);
        let neg = Objective::expmachines_loss(w.clone(), vec![-1.0]).unwrap();
        assert!((neg.evaluate(&ones3()).unwrap() - 8.000335406372896).abs() < 1e-12);
        let zero = TtTensor::zeros(&[2, 2, 2], &[1]).unwrap();
        let two = Objective::expmachines_loss(vec![ones3(), ones3()], vec![1.0, -1.0]).unwrap();
        assert!((two.evaluate(&zero).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let mut rng = StdRng::seed_from_u64(75);
        let rank2 = TtTensor::random(&[2, 2, 2], &[2, 2], &mut rng).unwrap();
        assert!(matches!(Objective::expmachines_loss(vec![rank2], vec![1.0]), Err(Error::InvalidData(_))));
        assert!(matches!(Objective::expmachines_loss(w, vec![0.5]), Err(Error::InvalidData(_))));
    }

    #[test]
    fn softplus_is_stable_and_monotone() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.5).collect();
        // Loss is decreasing in the margin y·⟨X, W⟩.
        for pair in grid.windows(2) {
            assert!(softplus(-pair[1]) < softplus(-pair[0]));
        }
        assert!((sigmoid(-800.0)).abs() < 1e-300 && (sigmoid(800.0) - 1.0).abs() < 1e-16);
    }

    #[test]
    fn regularized_completion_examples() {
        let mut rng = StdRng::seed_from_u64(76);
        let omega = IndexSet::random(&[2, 3, 2], 6, &mut rng).unwrap();
        let x = TtTensor::random(&[2, 3, 2], &[2, 2], &mut rng).unwrap();
        let plain = Objective::completion_loss(omega.clone()).evaluate(&x).unwrap();
        let r0 = Objective::regularized_completion(omega.clone(), 0.0).unwrap();
        assert_eq!(r0.evaluate(&x).unwrap(), plain);
        let empty = IndexSet::new(&[2, 2, 2], vec![], vec![]).unwrap();
        let r1 = Objective::regularized_completion(empty, 1.0).unwrap();
        assert_eq!(r1.evaluate(&ones3()).unwrap(), 8.0);
        let r = Objective::regularized_completion(omega, 0.3).unwrap();
        assert_eq!(r.evaluate(&x).unwrap(), plain + 0.3 * x.dot(&x).unwrap());
        assert!(Objective::regularized_completion(IndexSet::new(&[2], vec![], vec![]).unwrap(), -1.0).is_err());
    }

    fn all_objectives(modes: &[usize], rng: &mut StdRng) -> Vec<Objective> {
        let a = TtMatrix::random_symmetric(modes, 2, rng).unwrap();
        let g = TtMatrix::random(modes, 2, rng).unwrap();
        let f = TtTensor::random(modes, &[2], rng).unwrap();
        let omega = IndexSet::random(modes, 10, rng).unwrap();
        let em = ExpMachinesData::random(modes, 5, rng).unwrap();
        vec![
            Objective::frobenius(),
            Objective::linear(f),
            Objective::quadratic_form(a.clone()).unwrap(),
            Objective::gram_quadratic_form(g).unwrap(),
            Objective::rayleigh_quotient(a).unwrap(),
            Objective::completion_loss(omega.clone()),
            Objective::regularized_completion(omega, 0.5).unwrap(),
            Objective::expmachines_from(em),
        ]
    }

    #[test]
    fn programs_evaluate_and_gradients_agree() {
        let mut rng = StdRng::seed_from_u64(77);
        let modes = [2, 3, 2];
        let x = TtTensor::random(&modes, &[2, 2], &mut rng).unwrap();
        let z = TtTensor::random(&modes, &[2, 2], &mut rng).unwrap();
        for obj in all_objectives(&modes, &mut rng) {
            let direct = obj.evaluate(&x).unwrap();
            let tape = Tape::new();
            let cores = taped::constants(&tape, &x);
            let taped_v = obj.eval(&tape, &cores).unwrap().item();
            let (dense_v, g) = dense_grad(&obj, &x);
            for v in [taped_v, dense_v] {
                assert!((v - direct).abs() <= 1e-11 * direct.abs().max(1.0), "{}: {v} vs {direct}", obj.name());
            }
            let analytic = obj.euclid_grad_tt(&x).unwrap().to_dense().unwrap();
            assert!(analytic.sub(&g).unwrap().norm() <= 1e-9 * g.norm().max(1.0), "{} gradient", obj.name());

            // Hessian: dense AD of ⟨∇f, Z⟩.
            let tape = Tape::new();
            let v = tape.var(x.to_dense().unwrap());
            let out = obj.dense_program(&tape, v).unwrap();
            let gv = tape.grad(out, &[v]).unwrap()[0];
            let zd = tape.constant(z.to_dense().unwrap());
            let hz = tape.grad(gv.dot(zd).unwrap(), &[v]).unwrap()[0].value();
            let analytic = obj.euclid_hess_vec_tt(&x, &z).unwrap().to_dense().unwrap();
            assert!(analytic.sub(&hz).unwrap().norm() <= 1e-9 * hz.norm().max(1.0), "{} hessian", obj.name());
        }
    }

    #[test]
    fn evaluation_is_invariant_under_orthogonalization() {
        let mut rng = StdRng::seed_from_u64(78);
        let modes = [2, 3, 2];
        let x = TtTensor::random(&modes, &[2, 2], &mut rng).unwrap();
        let m = x.orthogonalize().unwrap();
        for obj in all_objectives(&modes, &mut rng) {
            let a = obj.evaluate(&x).unwrap();
            for mu in 0..3 {
                let b = obj.evaluate(&m.mu_tensor(mu)).unwrap();
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{}", obj.name());
            }
        }
    }

    #[test]
    fn naive_cap_reports_unavailable() {
        let mut rng = StdRng::seed_from_u64(79);
        let omega = IndexSet::random(&[10, 10, 10], NAIVE_TERM_CAP + 1, &mut rng).unwrap();
        let obj = Objective::completion_loss(omega);
        let x = TtTensor::random(&[10, 10, 10], &[2, 2], &mut rng).unwrap();
        assert!(matches!(obj.euclid_grad_tt(&x), Err(Error::Unavailable(_))));
    }
}
