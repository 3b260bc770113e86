//! Tensor-train tensors and operators.
//!
//! A [`TtTensor`] stores `d` cores, core `k` shaped `r_{k-1} × n_k × r_k`
//! with `r_0 = r_d = 1`. Entry `X[i_1, …, i_d]` is the matrix product
//! `G_1[i_1] ⋯ G_d[i_d]`. A [`TtMatrix`] has 4-way cores
//! `R_{k-1} × m_k × n_k × R_k`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{qr_thin, svd_thin};
use crate::tensor::{contract, DenseTensor};

/// Default cap on dense materialization.
pub const DENSE_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TtTensor {
    cores: Vec<DenseTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtMatrix {
    cores: Vec<DenseTensor>,
}

fn check_chain(shapes: &[&[usize]], ndim: usize, what: &str) -> Result<()> {
    if shapes.is_empty() {
        return Err(dim_err!("{what} needs at least one core"));
    }
    for (k, s) in shapes.iter().enumerate() {
        if s.len() != ndim {
            return Err(dim_err!("{what} core {k} has shape {:?}, expected {ndim} axes", s));
        }
        if s.contains(&0) {
            return Err(dim_err!("{what} core {k} has an empty axis: {:?}", s));
        }
    }
    if shapes[0][0] != 1 || shapes[shapes.len() - 1][ndim - 1] != 1 {
        return Err(dim_err!("{what} boundary ranks must be 1"));
    }
    for k in 1..shapes.len() {
        if shapes[k - 1][ndim - 1] != shapes[k][0] {
            return Err(dim_err!(
                "{what} rank chain broken between cores {} and {k}: {} vs {}",
                k - 1,
                shapes[k - 1][ndim - 1],
                shapes[k][0]
            ));
        }
    }
    Ok(())
}

fn checked_size(modes: &[usize], cap: usize) -> Result<usize> {
    let entries: u128 = modes.iter().map(|&n| n as u128).product();
    if entries > cap as u128 {
        return Err(Error::Oversize { entries, cap });
    }
    Ok(entries as usize)
}

impl TtTensor {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        let shapes: Vec<&[usize]> = cores.iter().map(|c| c.shape()).collect();
        check_chain(&shapes, 3, "TT tensor")?;
        Ok(Self { cores })
    }

    pub(crate) fn from_cores_unchecked(cores: Vec<DenseTensor>) -> Self {
        debug_assert!(Self::new(cores.clone()).is_ok());
        Self { cores }
    }

    /// All-ones tensor (TT-rank 1).
    pub fn ones(modes: &[usize]) -> Self {
        Self {
            cores: modes.iter().map(|&n| DenseTensor::ones(&[1, n, 1])).collect(),
        }
    }

    /// Zero tensor with the given TT-ranks (interior ranks only).
    pub fn zeros(modes: &[usize], ranks: &[usize]) -> Result<Self> {
        let full = full_ranks(modes.len(), ranks)?;
        Ok(Self {
            cores: modes
                .iter()
                .enumerate()
                .map(|(k, &n)| DenseTensor::zeros(&[full[k], n, full[k + 1]]))
                .collect(),
        })
    }

    /// Standard basis tensor with a single one at `index`.
    pub fn basis(modes: &[usize], index: &[usize]) -> Result<Self> {
        if modes.len() != index.len() || index.iter().zip(modes).any(|(i, n)| i >= n) {
            return Err(Error::Index(format!("index {:?} out of range for modes {:?}", index, modes)));
        }
        Ok(Self {
            cores: modes
                .iter()
                .zip(index)
                .map(|(&n, &i)| DenseTensor::from_fn(&[1, n, 1], |ix| if ix[1] == i { 1.0 } else { 0.0 }))
                .collect(),
        })
    }

    /// Rank-1 tensor `v_1 ⊗ ⋯ ⊗ v_d`.
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|f| DenseTensor::new(vec![1, f.len(), 1], f.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// Cores with i.i.d. standard normal entries, returned in right-orthogonal
    /// (1-orthogonal) form.
    pub fn random<R: Rng + ?Sized>(modes: &[usize], ranks: &[usize], rng: &mut R) -> Result<Self> {
        let full = full_ranks(modes.len(), ranks)?;
        let cores: Vec<DenseTensor> = modes
            .iter()
            .enumerate()
            .map(|(k, &n)| DenseTensor::from_fn(&[full[k], n, full[k + 1]], |_| rng.sample(StandardNormal)))
            .collect();
        let x = Self::new(cores)?;
        let (s0, v) = right_sweep(&x)?;
        let mut cores = vec![s0];
        cores.extend(v);
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    pub fn core(&self, k: usize) -> &DenseTensor {
        &self.cores[k]
    }

    pub fn d(&self) -> usize {
        self.cores.len()
    }

    pub fn modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// Full rank vector `r_0, …, r_d`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    /// Interior TT-ranks `r_1, …, r_{d-1}`.
    pub fn tt_ranks(&self) -> Vec<usize> {
        let r = self.ranks();
        r[1..r.len() - 1].to_vec()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    /// Entry at a multi-index, by the core-chain product.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.d() {
            return Err(Error::Index(format!("index {:?} has wrong length for d = {}", index, self.d())));
        }
        let mut row = vec![1.0];
        for (core, &i) in self.cores.iter().zip(index) {
            let (r0, n, r1) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            if i >= n {
                return Err(Error::Index(format!("index {:?} out of range", index)));
            }
            let data = core.data();
            let mut next = vec![0.0; r1];
            for (a, &ra) in row.iter().enumerate().take(r0) {
                if ra == 0.0 {
                    continue;
                }
                let base = (a * n + i) * r1;
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += ra * data[base + b];
                }
            }
            row = next;
        }
        Ok(row[0])
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        let modes = self.modes();
        checked_size(&modes, cap)?;
        let first = &self.cores[0];
        let mut acc = first.reshape(&[first.shape()[1], first.shape()[2]])?;
        for core in &self.cores[1..] {
            let lead = acc.len() / acc.shape()[acc.ndim() - 1];
            let m = acc.reshape(&[lead, acc.shape()[acc.ndim() - 1]])?;
            acc = contract(&m, core, &[(1, 0)])?;
            acc = acc.reshape(&[lead * core.shape()[1], core.shape()[2]])?;
        }
        acc.reshape(&modes)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut cores = self.cores.clone();
        cores[0] = cores[0].scale(alpha);
        Self { cores }
    }

    /// Inner product by a left-to-right sweep in rank space.
    pub fn dot(&self, other: &TtTensor) -> Result<f64> {
        if self.modes() != other.modes() {
            return Err(dim_err!("mode sizes differ: {:?} vs {:?}", self.modes(), other.modes()));
        }
        let mut state = DenseTensor::ones(&[1, 1]);
        for (x, y) in self.cores.iter().zip(&other.cores) {
            let t = contract(&state, x, &[(0, 0)])?; // (ry, n, rx')
            state = contract(&t, y, &[(0, 0), (1, 1)])?; // (rx', ry')
        }
        state.item()
    }

    pub fn norm(&self) -> Result<f64> {
        Ok(self.dot(self)?.max(0.0).sqrt())
    }

    /// `alpha·x + y` with block-diagonal cores; ranks add.
    pub fn axpy(alpha: f64, x: &TtTensor, y: &TtTensor) -> Result<TtTensor> {
        if x.modes() != y.modes() {
            return Err(dim_err!("mode sizes differ: {:?} vs {:?}", x.modes(), y.modes()));
        }
        let d = x.d();
        if d == 1 {
            return Ok(Self {
                cores: vec![x.cores[0].axpy(alpha, &y.cores[0])?],
            });
        }
        let mut cores = Vec::with_capacity(d);
        cores.push(DenseTensor::concat(&[&x.cores[0].scale(alpha), &y.cores[0]], 2)?);
        for k in 1..d - 1 {
            let (xc, yc) = (&x.cores[k], &y.cores[k]);
            let (xl, xr) = (xc.shape()[0], xc.shape()[2]);
            let (yl, yr) = (yc.shape()[0], yc.shape()[2]);
            let top = xc.pad(2, 0, yr)?;
            let bottom = yc.pad(2, xr, 0)?;
            debug_assert_eq!(top.shape()[0] + bottom.shape()[0], xl + yl);
            cores.push(DenseTensor::concat(&[&top, &bottom], 0)?);
        }
        cores.push(DenseTensor::concat(&[&x.cores[d - 1], &y.cores[d - 1]], 0)?);
        Ok(Self { cores })
    }

    /// Sum of several tensors (ranks add).
    pub fn sum(terms: &[(f64, &TtTensor)]) -> Result<TtTensor> {
        let (first_alpha, first) = terms.first().ok_or_else(|| dim_err!("empty sum"))?;
        let mut acc = first.scale(*first_alpha);
        for (alpha, t) in &terms[1..] {
            acc = Self::axpy(*alpha, t, &acc)?;
        }
        Ok(acc)
    }

    pub fn orthogonalize(&self) -> Result<MuOrthogonal> {
        MuOrthogonal::new(self)
    }

    /// TT rounding: right-orthogonalization followed by a left-to-right
    /// sweep of truncated SVDs.
    pub fn round(&self, max_rank: &[usize], tol: f64) -> Result<TtTensor> {
        Ok(self.round_with_report(max_rank, tol)?.0)
    }

    /// Like [`round`](Self::round), also returning the Frobenius norm of the
    /// singular values discarded at each of the `d − 1` truncations.
    ///
    /// `max_rank` holds either one bound for every interior rank or one per
    /// interior rank.
    pub fn round_with_report(&self, max_rank: &[usize], tol: f64) -> Result<(TtTensor, Vec<f64>)> {
        if tol.is_nan() || tol < 0.0 {
            return Err(Error::InvalidValue(format!("rounding tolerance must be >= 0, got {tol}")));
        }
        let d = self.d();
        let bound = |k: usize| -> Result<usize> {
            match max_rank.len() {
                1 => Ok(max_rank[0]),
                l if l == d - 1 => Ok(max_rank[k]),
                l => Err(dim_err!("max_rank has {l} entries, expected 1 or {}", d - 1)),
            }
        };
        if d == 1 {
            return Ok((self.clone(), Vec::new()));
        }
        let (s0, v) = right_sweep_relaxed(self)?;
        let norm = s0.norm();
        let delta = tol * norm / ((d - 1) as f64).sqrt();
        let mut cores = Vec::with_capacity(d);
        let mut tails = Vec::with_capacity(d - 1);
        let mut cur = s0;
        for k in 0..d - 1 {
            let (r0, n, r1) = (cur.shape()[0], cur.shape()[1], cur.shape()[2]);
            let (u, s, w) = svd_thin(&cur.reshape(&[r0 * n, r1])?)?;
            let mut keep = s.len();
            // Smallest rank whose discarded tail stays within delta.
            let mut tail2 = 0.0;
            while keep > 1 && tail2 + s[keep - 1] * s[keep - 1] <= delta * delta {
                tail2 += s[keep - 1] * s[keep - 1];
                keep -= 1;
            }
            keep = keep.min(bound(k)?.max(1));
            let tail = s[keep..].iter().map(|x| x * x).sum::<f64>().sqrt();
            tails.push(tail);
            let uk = u.slice(1, 0, keep)?;
            cores.push(uk.reshape(&[r0, n, keep])?);
            // (Σ Wᵀ)[:keep, :] · V_{k+1}
            let sw = DenseTensor::from_fn(&[keep, w.rows()], |ix| s[ix[0]] * w.at(ix[1], ix[0]));
            cur = contract(&sw, &v[k], &[(1, 0)])?;
        }
        cores.push(cur);
        Ok((Self { cores }, tails))
    }
}

pub(crate) fn full_ranks(d: usize, ranks: &[usize]) -> Result<Vec<usize>> {
    if d == 0 {
        return Err(dim_err!("a TT tensor needs at least one mode"));
    }
    let interior: Vec<usize> = match ranks.len() {
        0 if d == 1 => Vec::new(),
        1 => vec![ranks[0]; d - 1],
        l if l == d - 1 => ranks.to_vec(),
        l => return Err(dim_err!("{l} ranks given for {d} modes")),
    };
    if interior.contains(&0) {
        return Err(dim_err!("TT-ranks must be positive, got {:?}", interior));
    }
    let mut full = vec![1];
    full.extend(interior);
    full.push(1);
    Ok(full)
}

/// Right-to-left QR sweep. Returns the unrestricted first core and the
/// right-orthogonal cores `V_2, …, V_d`. Ranks are preserved, so each must
/// be feasible.
fn right_sweep(x: &TtTensor) -> Result<(DenseTensor, Vec<DenseTensor>)> {
    let d = x.d();
    let mut v = vec![DenseTensor::zeros(&[1]); d - 1];
    let mut cur = x.cores[d - 1].clone();
    for k in (1..d).rev() {
        let (r0, n, r1) = (cur.shape()[0], cur.shape()[1], cur.shape()[2]);
        if n * r1 < r0 {
            return Err(dim_err!(
                "TT-rank {r0} exceeds what core {k} can carry ({n} x {r1}); reduce the rank"
            ));
        }
        let mt = cur.reshape(&[r0, n * r1])?.t();
        let (q, r) = qr_thin(&mt)?;
        v[k - 1] = q.t().reshape(&[r0, n, r1])?;
        cur = contract(&x.cores[k - 1], &r, &[(2, 1)])?;
    }
    Ok((cur, v))
}

/// Right-to-left sweep that lets ranks shrink when they exceed what the
/// cores can carry. Used by rounding only.
fn right_sweep_relaxed(x: &TtTensor) -> Result<(DenseTensor, Vec<DenseTensor>)> {
    let d = x.d();
    let mut v = vec![DenseTensor::zeros(&[1]); d - 1];
    let mut cur = x.cores[d - 1].clone();
    for k in (1..d).rev() {
        let (r0, n, r1) = (cur.shape()[0], cur.shape()[1], cur.shape()[2]);
        let mt = cur.reshape(&[r0, n * r1])?.t();
        let (q, r) = if n * r1 >= r0 {
            qr_thin(&mt)?
        } else {
            // Wide case: an SVD gives an orthonormal basis of width n*r1.
            let (u, s, w) = svd_thin(&mt)?;
            let r = DenseTensor::from_fn(&[s.len(), r0], |ix| s[ix[0]] * w.at(ix[1], ix[0]));
            (u, r)
        };
        let width = q.cols();
        v[k - 1] = q.t().reshape(&[width, n, r1])?;
        cur = contract(&x.cores[k - 1], &r, &[(2, 1)])?;
    }
    Ok((cur, v))
}

/// Shared left- and right-orthogonal cores plus centre cores such that for
/// every `μ` the tensor equals `U_1 ⋯ U_{μ-1} S_μ V_{μ+1} ⋯ V_d`.
///
/// Indices are 0-based: `u(k)` exists for `k < d − 1`, `v(k)` for `k ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MuOrthogonal {
    u: Vec<DenseTensor>,
    v: Vec<DenseTensor>,
    s: Vec<DenseTensor>,
}

impl MuOrthogonal {
    /// Right-to-left QR sweep for the `V` cores, then a left-to-right sweep
    /// for the `U` cores; each `S_k` is the left R-factor absorbed into `V_k`.
    pub fn new(x: &TtTensor) -> Result<Self> {
        let d = x.d();
        if d == 1 {
            return Ok(Self {
                u: Vec::new(),
                v: Vec::new(),
                s: vec![x.cores[0].clone()],
            });
        }
        let (s0, v) = right_sweep(x)?;
        let mut u = Vec::with_capacity(d - 1);
        let mut s = Vec::with_capacity(d);
        s.push(s0);
        for k in 0..d - 1 {
            let cur = &s[k];
            let (r0, n, r1) = (cur.shape()[0], cur.shape()[1], cur.shape()[2]);
            if r0 * n < r1 {
                return Err(dim_err!(
                    "TT-rank {r1} exceeds what core {k} can carry ({r0} x {n}); reduce the rank"
                ));
            }
            let (q, r) = qr_thin(&cur.reshape(&[r0 * n, r1])?)?;
            u.push(q.reshape(&[r0, n, r1])?);
            let next = contract(&r, &v[k], &[(1, 0)])?;
            s.push(next);
        }
        Ok(Self { u, v, s })
    }

    pub fn d(&self) -> usize {
        self.s.len()
    }

    pub fn modes(&self) -> Vec<usize> {
        self.s.iter().map(|c| c.shape()[1]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.s.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    /// Left-orthogonal core `k` (`k < d − 1`).
    pub fn u(&self, k: usize) -> &DenseTensor {
        &self.u[k]
    }

    /// Right-orthogonal core `k` (`k ≥ 1`).
    pub fn v(&self, k: usize) -> &DenseTensor {
        &self.v[k - 1]
    }

    /// Centre core `k`.
    pub fn s(&self, k: usize) -> &DenseTensor {
        &self.s[k]
    }

    /// The `μ`-orthogonal representation (0-based `mu`).
    pub fn mu_tensor(&self, mu: usize) -> TtTensor {
        let d = self.d();
        let cores = (0..d)
            .map(|k| match k.cmp(&mu) {
                std::cmp::Ordering::Less => self.u[k].clone(),
                std::cmp::Ordering::Equal => self.s[k].clone(),
                std::cmp::Ordering::Greater => self.v[k - 1].clone(),
            })
            .collect();
        TtTensor::from_cores_unchecked(cores)
    }

    /// The represented tensor (its 0-orthogonal form).
    pub fn tensor(&self) -> TtTensor {
        self.mu_tensor(0)
    }

    /// Worst `‖Σ_i U_k[i]ᵀ U_k[i] − I‖_max` over all `U_k`.
    pub fn left_residual(&self) -> f64 {
        self.u
            .iter()
            .map(|u| {
                let (r0, n, r1) = (u.shape()[0], u.shape()[1], u.shape()[2]);
                crate::linalg::orthonormality_residual(&u.reshape(&[r0 * n, r1]).unwrap())
            })
            .fold(0.0, f64::max)
    }

    /// Worst `‖Σ_i V_k[i] V_k[i]ᵀ − I‖_max` over all `V_k`.
    pub fn right_residual(&self) -> f64 {
        self.v
            .iter()
            .map(|v| {
                let (r0, n, r1) = (v.shape()[0], v.shape()[1], v.shape()[2]);
                crate::linalg::orthonormality_residual(&v.reshape(&[r0, n * r1]).unwrap().t())
            })
            .fold(0.0, f64::max)
    }
}

impl TtMatrix {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        let shapes: Vec<&[usize]> = cores.iter().map(|c| c.shape()).collect();
        check_chain(&shapes, 4, "TT matrix")?;
        Ok(Self { cores })
    }

    pub fn identity(modes: &[usize]) -> Self {
        Self {
            cores: modes
                .iter()
                .map(|&n| DenseTensor::eye(n).reshape(&[1, n, n, 1]).unwrap())
                .collect(),
        }
    }

    pub fn zeros(row_modes: &[usize], col_modes: &[usize]) -> Result<Self> {
        if row_modes.len() != col_modes.len() {
            return Err(dim_err!("row and column mode counts differ"));
        }
        Ok(Self {
            cores: row_modes
                .iter()
                .zip(col_modes)
                .map(|(&m, &n)| DenseTensor::zeros(&[1, m, n, 1]))
                .collect(),
        })
    }

    /// Kronecker product of per-mode diagonal matrices.
    pub fn diagonal(diagonals: &[Vec<f64>]) -> Result<Self> {
        let cores = diagonals
            .iter()
            .map(|dg| {
                let n = dg.len();
                DenseTensor::new(
                    vec![1, n, n, 1],
                    (0..n * n).map(|t| if t / n == t % n { dg[t / n] } else { 0.0 }).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// Random operator with i.i.d. standard normal cores.
    pub fn random<R: Rng + ?Sized>(modes: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        let full = full_ranks(modes.len(), &[rank])?;
        let scale = |n: usize| 1.0 / (n as f64).sqrt();
        Self::new(
            modes
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let c = scale(n * full[k]);
                    DenseTensor::from_fn(&[full[k], n, n, full[k + 1]], |_| c * rng.sample::<f64, _>(StandardNormal))
                })
                .collect(),
        )
    }

    /// Random symmetric operator: every core is symmetric in its two mode
    /// indices, so the Kronecker-sum it represents is symmetric.
    pub fn random_symmetric<R: Rng + ?Sized>(modes: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        let a = Self::random(modes, rank, rng)?;
        Ok(Self {
            cores: a.cores.iter().map(|c| c.add(&c.permute(&[0, 2, 1, 3]).unwrap()).unwrap().scale(0.5)).collect(),
        })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn d(&self) -> usize {
        self.cores.len()
    }

    pub fn row_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    pub fn col_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[2]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn transpose(&self) -> Self {
        Self {
            cores: self.cores.iter().map(|c| c.permute(&[0, 2, 1, 3]).unwrap()).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut cores = self.cores.clone();
        cores[0] = cores[0].scale(alpha);
        Self { cores }
    }

    /// Matrix-by-vector product; result ranks are `R_k · r_k`.
    pub fn apply(&self, x: &TtTensor) -> Result<TtTensor> {
        if self.col_modes() != x.modes() {
            return Err(dim_err!(
                "operator columns {:?} do not match tensor modes {:?}",
                self.col_modes(),
                x.modes()
            ));
        }
        let cores = self
            .cores
            .iter()
            .zip(x.cores())
            .map(|(a, xc)| {
                let (p, m, q) = (a.shape()[0], a.shape()[1], a.shape()[3]);
                let (ra, rb) = (xc.shape()[0], xc.shape()[2]);
                // (p, i, q, a, b) → (p, a, i, q, b)
                contract(a, xc, &[(2, 1)])?
                    .permute(&[0, 3, 1, 2, 4])?
                    .reshape(&[p * ra, m, q * rb])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TtTensor { cores })
    }

    /// Dense `(∏ m_k) × (∏ n_k)` matrix.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let rows: usize = self.row_modes().iter().product();
        let cols: usize = self.col_modes().iter().product();
        checked_size(&[rows, cols], DENSE_CAP)?;
        let d = self.d();
        let first = &self.cores[0];
        let mut acc = first.reshape(&[first.shape()[1], first.shape()[2], first.shape()[3]])?;
        // acc axes: (i_1..i_k, j_1..j_k) flattened as (I, J, R)
        let mut big_i = first.shape()[1];
        let mut big_j = first.shape()[2];
        for core in &self.cores[1..] {
            let (_, m, n, q) = (core.shape()[0], core.shape()[1], core.shape()[2], core.shape()[3]);
            let t = contract(&acc, core, &[(2, 0)])?; // (I, J, m, n, q)
            acc = t.permute(&[0, 2, 1, 3, 4])?.reshape(&[big_i * m, big_j * n, q])?;
            big_i *= m;
            big_j *= n;
        }
        let _ = d;
        acc.reshape(&[big_i, big_j])
    }
}

/// Sum of two TT operators (ranks add).
pub fn ttmat_add(a: &TtMatrix, b: &TtMatrix) -> Result<TtMatrix> {
    if a.row_modes() != b.row_modes() || a.col_modes() != b.col_modes() {
        return Err(dim_err!("operator shapes differ"));
    }
    let d = a.d();
    if d == 1 {
        return TtMatrix::new(vec![a.cores[0].add(&b.cores[0])?]);
    }
    let mut cores = Vec::with_capacity(d);
    cores.push(DenseTensor::concat(&[&a.cores[0], &b.cores[0]], 3)?);
    for k in 1..d - 1 {
        let (ac, bc) = (&a.cores[k], &b.cores[k]);
        let top = ac.pad(3, 0, bc.shape()[3])?;
        let bottom = bc.pad(3, ac.shape()[3], 0)?;
        cores.push(DenseTensor::concat(&[&top, &bottom], 0)?);
    }
    cores.push(DenseTensor::concat(&[&a.cores[d - 1], &b.cores[d - 1]], 0)?);
    TtMatrix::new(cores)
}
