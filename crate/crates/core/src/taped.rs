//! TT kernels recorded on a [`Tape`]. Cores are passed as slices of
//! variables so the same code runs on constant data, on differentiable
//! leaves, and on cores built from tangent parameters.

use crate::ad::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::tensor::DenseTensor;
use crate::tt::{TtMatrix, TtTensor};

/// Records the cores of `x` as constants.
pub fn constants<'t>(tape: &'t Tape, x: &TtTensor) -> Vec<Var<'t>> {
    x.cores().iter().map(|c| tape.constant(c.clone())).collect()
}

/// Records the cores of `a` as constants.
pub fn operator<'t>(tape: &'t Tape, a: &TtMatrix) -> Vec<Var<'t>> {
    a.cores().iter().map(|c| tape.constant(c.clone())).collect()
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(dim_err!("{what}: {a} cores vs {b} cores"));
    }
    Ok(())
}

/// `⟨X, Y⟩` by a left-to-right sweep over `(r_x, r_y)` states.
pub fn dot<'t>(x: &[Var<'t>], y: &[Var<'t>]) -> Result<Var<'t>> {
    check_len("dot", x.len(), y.len())?;
    let tape = x[0].tape();
    let mut state = tape.constant(DenseTensor::ones(&[1, 1]));
    for (xk, yk) in x.iter().zip(y) {
        let t = state.contract(*xk, &[(0, 0)])?; // (ry, n, rx')
        state = t.contract(*yk, &[(0, 0), (1, 1)])?; // (rx', ry')
    }
    state.reshape(&[])
}

/// `⟨A Y, X⟩` with a `(r_y, R, r_x)` state.
pub fn apply_dot<'t>(y: &[Var<'t>], a: &[Var<'t>], x: &[Var<'t>]) -> Result<Var<'t>> {
    check_len("apply_dot", y.len(), a.len())?;
    check_len("apply_dot", x.len(), a.len())?;
    let tape = x[0].tape();
    let mut state = tape.constant(DenseTensor::ones(&[1, 1, 1]));
    for k in 0..x.len() {
        let t1 = state.contract(y[k], &[(0, 0)])?; // (p, b, i, a')
        let t2 = t1.contract(a[k], &[(0, 0), (2, 2)])?; // (b, a', j, p')
        state = t2.contract(x[k], &[(0, 0), (2, 1)])?; // (a', p', b')
    }
    state.reshape(&[])
}

/// `⟨A Y, Bᵀ X⟩` with a `(r_y, R_A, R_B, r_x)` state.
pub fn two_op_dot<'t>(y: &[Var<'t>], a: &[Var<'t>], b: &[Var<'t>], x: &[Var<'t>]) -> Result<Var<'t>> {
    check_len("two_op_dot", y.len(), a.len())?;
    check_len("two_op_dot", b.len(), a.len())?;
    check_len("two_op_dot", x.len(), a.len())?;
    let tape = x[0].tape();
    let mut state = tape.constant(DenseTensor::ones(&[1, 1, 1, 1]));
    for k in 0..x.len() {
        let t1 = state.contract(y[k], &[(0, 0)])?; // (p, q, b, i, a')
        let t2 = t1.contract(a[k], &[(0, 0), (3, 2)])?; // (q, b, a', j, p')
        let t3 = t2.contract(b[k], &[(0, 0), (3, 2)])?; // (b, a', p', l, q')
        state = t3.contract(x[k], &[(0, 0), (3, 1)])?; // (a', p', q', b')
    }
    state.reshape(&[])
}

/// Products `M_1[t] ⋯ M_d[t]` for a batch of chains; each factor is
/// shaped `(N, r_{k-1}, r_k)` with `r_0 = r_d = 1`. Returns shape `(N)`.
pub fn batched_chain<'t>(mats: &[Var<'t>]) -> Result<Var<'t>> {
    let first = mats.first().ok_or_else(|| dim_err!("empty chain"))?;
    let tape = first.tape();
    let s = first.shape();
    let n = s[0];
    let mut state = first.reshape(&[n, s[1] * s[2]])?;
    for m in &mats[1..] {
        let ms = m.shape();
        if ms[0] != n || ms[1] != state.shape()[1] {
            return Err(dim_err!("chain factor {:?} does not follow state {:?}", ms, state.shape()));
        }
        let spread = state.contract(tape.constant(DenseTensor::ones(&[ms[2]])), &[])?; // (N, r, r')
        let prod = spread.mul(*m)?;
        state = prod.contract(tape.constant(DenseTensor::ones(&[ms[1]])), &[(1, 0)])?; // (N, r')
    }
    if state.shape()[1] != 1 {
        return Err(dim_err!("chain does not close: final rank {}", state.shape()[1]));
    }
    state.reshape(&[n])
}

/// Entries `X[ω]` for every multi-index in `indices` (one list per mode).
pub fn entries<'t>(x: &[Var<'t>], indices: &[Vec<usize>]) -> Result<Var<'t>> {
    check_len("entries", x.len(), indices.len())?;
    let mats = x
        .iter()
        .zip(indices)
        .map(|(core, idx)| core.gather(1, idx)?.permute(&[1, 0, 2]))
        .collect::<Result<Vec<_>>>()?;
    batched_chain(&mats)
}

/// `⟨X, W_t⟩` for a batch of rank-1 tensors, given per mode as an
/// `(N, n_k)` matrix of factor rows.
pub fn rank_one_dots<'t>(x: &[Var<'t>], factors: &[Var<'t>]) -> Result<Var<'t>> {
    check_len("rank_one_dots", x.len(), factors.len())?;
    let mats = x
        .iter()
        .zip(factors)
        .map(|(core, w)| w.contract(*core, &[(1, 1)]))
        .collect::<Result<Vec<_>>>()?;
    batched_chain(&mats)
}
