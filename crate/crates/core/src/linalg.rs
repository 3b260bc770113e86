//! Thin QR (Householder) and thin SVD (one-sided Jacobi) for small dense
//! matrices. Both are deterministic.

use crate::error::{dim_err, Result};
use crate::tensor::DenseTensor;

fn check_matrix(m: &DenseTensor, what: &str) -> Result<(usize, usize)> {
    if m.ndim() != 2 {
        return Err(dim_err!("{what} needs a matrix, got shape {:?}", m.shape()));
    }
    Ok((m.rows(), m.cols()))
}

/// Thin QR factorization of a `p × q` matrix with `p ≥ q`.
///
/// `R` has a nonnegative diagonal. Rank-deficient input still yields a `Q`
/// with orthonormal columns.
pub fn qr_thin(m: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
    let (p, q) = check_matrix(m, "qr_thin")?;
    if p < q {
        return Err(dim_err!("qr_thin needs rows >= cols, got {p}x{q}"));
    }
    // Column-major working copy.
    let mut a = vec![0.0; p * q];
    for i in 0..p {
        for j in 0..q {
            a[j * p + i] = m.at(i, j);
        }
    }
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(q);
    for j in 0..q {
        let col = &a[j * p + j..(j + 1) * p];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.to_vec();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        for c in j..q {
            let colc = &mut a[c * p + j..(c + 1) * p];
            let s: f64 = v.iter().zip(colc.iter()).map(|(x, y)| x * y).sum();
            let f = 2.0 * s / vnorm2;
            for (y, x) in colc.iter_mut().zip(&v) {
                *y -= f * x;
            }
        }
        reflectors.push(v.into_iter().map(|x| x / vnorm2.sqrt()).collect());
    }
    let mut r = vec![0.0; q * q];
    for i in 0..q {
        for j in i..q {
            r[i * q + j] = a[j * p + i];
        }
    }
    // Q = H_0 ... H_{q-1} applied to the first q columns of the identity.
    let mut qm = vec![0.0; p * q]; // column-major
    for j in 0..q {
        qm[j * p + j] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        if v.is_empty() {
            continue;
        }
        for c in 0..q {
            let colc = &mut qm[c * p + j..(c + 1) * p];
            let s: f64 = v.iter().zip(colc.iter()).map(|(x, y)| x * y).sum();
            for (y, x) in colc.iter_mut().zip(v) {
                *y -= 2.0 * s * x;
            }
        }
    }
    for i in 0..q {
        if r[i * q + i] < 0.0 {
            for j in 0..q {
                r[i * q + j] = -r[i * q + j];
            }
            for k in 0..p {
                qm[i * p + k] = -qm[i * p + k];
            }
        }
    }
    let mut qr = vec![0.0; p * q];
    for i in 0..p {
        for j in 0..q {
            qr[i * q + j] = qm[j * p + i];
        }
    }
    Ok((
        DenseTensor::from_vec(vec![p, q], qr),
        DenseTensor::from_vec(vec![q, q], r),
    ))
}

/// Thin singular value decomposition `m = U diag(S) Vᵀ`.
///
/// For an `m × n` input with `k = min(m, n)`: `U` is `m × k`, `S` has `k`
/// nonincreasing entries and `V` is `n × k`. Both factors have orthonormal
/// columns even when some singular values vanish.
pub fn svd_thin(m: &DenseTensor) -> Result<(DenseTensor, Vec<f64>, DenseTensor)> {
    let (rows, cols) = check_matrix(m, "svd_thin")?;
    if rows < cols {
        let (u, s, v) = svd_thin(&m.t())?;
        return Ok((v, s, u));
    }
    let (mr, nc) = (rows, cols);
    // Columns of A stored contiguously.
    let mut a: Vec<Vec<f64>> = (0..nc).map(|j| (0..mr).map(|i| m.at(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..nc)
        .map(|j| (0..nc).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let eps = f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..nc {
            for q in p + 1..nc {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                let (lo, hi) = v.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    sv.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    let smax = sv.first().map_or(0.0, |x| x.0);
    let tiny = smax * 1e-14;

    let k = nc;
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut svals = Vec::with_capacity(k);
    let mut vcols = Vec::with_capacity(k);
    let mut pending = Vec::new();
    for (slot, &(s, j)) in sv.iter().enumerate() {
        svals.push(s);
        vcols.push(v[j].clone());
        if s > tiny && s > 0.0 {
            ucols.push(a[j].iter().map(|x| x / s).collect());
        } else {
            ucols.push(Vec::new());
            pending.push(slot);
        }
    }
    // Orthonormal completion for null directions.
    for slot in pending {
        let mut best: Option<Vec<f64>> = None;
        for e in 0..mr {
            let mut w = vec![0.0; mr];
            w[e] = 1.0;
            for _ in 0..2 {
                for col in ucols.iter().filter(|c| !c.is_empty()) {
                    let d: f64 = col.iter().zip(&w).map(|(x, y)| x * y).sum();
                    for (y, x) in w.iter_mut().zip(col) {
                        *y -= d * x;
                    }
                }
            }
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nw > 0.5 {
                best = Some(w.into_iter().map(|x| x / nw).collect());
                break;
            }
        }
        ucols[slot] = best.expect("orthogonal complement is nonempty");
    }
    let u = DenseTensor::from_fn(&[mr, k], |ix| ucols[ix[1]][ix[0]]);
    let vv = DenseTensor::from_fn(&[nc, k], |ix| vcols[ix[1]][ix[0]]);
    Ok((u, svals, vv))
}

/// `‖QᵀQ − I‖_max` for a matrix with orthonormal columns.
pub fn orthonormality_residual(q: &DenseTensor) -> f64 {
    let g = q.t().matmul(q).expect("matrix");
    let n = g.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.at(i, j) - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

fn diag(values: &[f64]) -> DenseTensor {
    let n = values.len();
    DenseTensor::from_fn(&[n, n], |ix| if ix[0] == ix[1] { values[ix[0]] } else { 0.0 })
}
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random(rows: usize, cols: usize, seed: u64) -> DenseTensor {
        let mut rng = StdRng::seed_from_u64(seed);
        DenseTensor::from_fn(&[rows, cols], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn qr_identity() {
        let (q, r) = qr_thin(&DenseTensor::eye(3)).unwrap();
        assert_eq!(q, DenseTensor::eye(3));
        assert_eq!(r, DenseTensor::eye(3));
    }

    #[test]
    fn qr_single_column() {
        let m = DenseTensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let (q, r) = qr_thin(&m).unwrap();
        assert!((q.at(0, 0) - 0.6).abs() < 1e-15);
        assert!((q.at(1, 0) - 0.8).abs() < 1e-15);
        assert!((r.at(0, 0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn qr_random_residuals_and_determinism() {
        let m = random(6, 3, 7);
        let (q, r) = qr_thin(&m).unwrap();
        assert!(orthonormality_residual(&q) < 1e-12);
        assert!(q.matmul(&r).unwrap().rel_diff(&m).unwrap() < 1e-12);
        for i in 0..3 {
            assert!(r.at(i, i) >= 0.0);
            for j in 0..i {
                assert_eq!(r.at(i, j), 0.0);
            }
        }
        let (q2, r2) = qr_thin(&m).unwrap();
        assert_eq!(q.data(), q2.data());
        assert_eq!(r.data(), r2.data());
    }

    #[test]
    fn qr_rank_deficient_keeps_orthonormal_q() {
        let m = DenseTensor::from_fn(&[5, 3], |ix| if ix[1] == 1 { 0.0 } else { (ix[0] + ix[1]) as f64 });
        let (q, r) = qr_thin(&m).unwrap();
        assert!(orthonormality_residual(&q) < 1e-12);
        assert!(q.matmul(&r).unwrap().rel_diff(&m).unwrap() < 1e-12);
    }

    #[test]
    fn qr_rejects_wide() {
        assert!(qr_thin(&DenseTensor::zeros(&[2, 3])).is_err());
    }

    fn reconstruct(u: &DenseTensor, s: &[f64], v: &DenseTensor) -> DenseTensor {
        u.matmul(&diag(s)).unwrap().matmul(&v.t()).unwrap()
    }

    #[test]
    fn svd_diagonal() {
        let m = DenseTensor::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let (_, s, _) = svd_thin(&m).unwrap();
        assert_eq!(s, vec![3.0, 1.0]);
    }

    #[test]
    fn svd_zero_matrix() {
        let (u, s, v) = svd_thin(&DenseTensor::zeros(&[3, 2])).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
        assert!(orthonormality_residual(&u) < 1e-15);
        assert!(orthonormality_residual(&v) < 1e-15);
    }

    #[test]
    fn svd_random_shapes() {
        for (rows, cols, seed) in [(5, 4, 1), (4, 5, 2), (7, 2, 3), (1, 4, 4)] {
            let m = random(rows, cols, seed);
            let (u, s, v) = svd_thin(&m).unwrap();
            assert!(reconstruct(&u, &s, &v).rel_diff(&m).unwrap() < 1e-11);
            assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
            assert!(orthonormality_residual(&u) < 1e-12);
            assert!(orthonormality_residual(&v) < 1e-12);
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let a = random(6, 2, 9);
        let b = random(2, 4, 10);
        let m = a.matmul(&b).unwrap();
        let (u, s, v) = svd_thin(&m).unwrap();
        assert!(s[2] < 1e-14 * s[0] && s[3] < 1e-14 * s[0]);
        assert!(orthonormality_residual(&u) < 1e-12);
        assert!(reconstruct(&u, &s, &v).rel_diff(&m).unwrap() < 1e-11);
    }
}
