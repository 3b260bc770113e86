//! Dense row-major tensors of `f64` and the contraction kernel.
//!
//! Data is stored with the last index varying fastest. Storage is shared
//! behind an `Arc`, so cloning and reshaping never copy entries.

use std::fmt;
use std::sync::Arc;

use crate::error::{dim_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "DenseTensor{:?}{:?}", self.shape, &self.data[..])
        } else {
            write!(f, "DenseTensor{:?}[{} entries]", self.shape, self.data.len())
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl DenseTensor {
    /// Builds a tensor from external data. Rejects length mismatches and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} entries but {} were given",
                shape,
                numel(&shape),
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite entry {} at position {pos}",
                data[pos]
            )));
        }
        Ok(Self::from_vec(shape, data))
    }

    /// Internal constructor for computed results; no finiteness check.
    pub(crate) fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape.to_vec(), vec![0.0; numel(shape)])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_vec(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(Vec::new(), vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_vec(vec![n, n], data)
    }

    /// Tensor whose entry at multi-index `idx` is `f(idx)`.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let total = numel(shape);
        let mut data = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::from_vec(shape.to_vec(), data)
    }

    /// Matrix from row slices.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err!("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Value of a single-entry tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(dim_err!("expected a single entry, shape is {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (k, &i) in idx.iter().enumerate() {
            off = off * self.shape[k] + i;
        }
        self.data[off]
    }

    /// Entry `(i, j)` of a matrix.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Metadata-only reshape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.ndim())?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let in_strides = strides_of(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        Ok(Self::from_vec(
            out_shape.clone(),
            strided_copy(&self.data, &out_shape, &src_strides),
        ))
    }

    /// Matrix transpose.
    pub fn t(&self) -> Self {
        assert_eq!(self.ndim(), 2, "t() needs a matrix");
        self.permute(&[1, 0]).expect("valid permutation")
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() || start + len > self.shape[axis] {
            return Err(dim_err!(
                "slice {start}..{} of axis {axis} out of range for {:?}",
                start + len,
                self.shape
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self::from_vec(shape, data))
    }

    /// Selects the listed positions along `axis`, repeats allowed.
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Self> {
        if axis >= self.ndim() {
            return Err(dim_err!("gather axis {axis} out of range for {:?}", self.shape));
        }
        let n = self.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(dim_err!("gather index {bad} out of range for extent {n}"));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Ok(Self::from_vec(shape, data))
    }

    /// Adjoint of [`gather`](Self::gather): accumulates slice `t` along
    /// `axis` into position `indices[t]` of a zero tensor with extent `extent`.
    pub fn scatter_add(&self, axis: usize, indices: &[usize], extent: usize) -> Result<Self> {
        if axis >= self.ndim() || self.shape[axis] != indices.len() {
            return Err(dim_err!(
                "scatter of {} indices along axis {axis} of {:?}",
                indices.len(),
                self.shape
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(dim_err!("scatter index {bad} out of range for extent {extent}"));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let m = indices.len();
        let mut data = vec![0.0; outer * extent * inner];
        for o in 0..outer {
            for (t, &i) in indices.iter().enumerate() {
                let src = &self.data[(o * m + t) * inner..(o * m + t + 1) * inner];
                let dst = &mut data[(o * extent + i) * inner..(o * extent + i + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = extent;
        Ok(Self::from_vec(shape, data))
    }

    /// Zero padding along `axis`.
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Self> {
        if axis >= self.ndim() {
            return Err(dim_err!("pad axis {axis} out of range for {:?}", self.shape));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let m = n + before + after;
        let mut data = vec![0.0; outer * m * inner];
        for o in 0..outer {
            let src = &self.data[o * n * inner..(o + 1) * n * inner];
            let dst = o * m * inner + before * inner;
            data[dst..dst + n * inner].copy_from_slice(src);
        }
        let mut shape = self.shape.clone();
        shape[axis] = m;
        Ok(Self::from_vec(shape, data))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&DenseTensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(dim_err!("concat axis {axis} out of range for {:?}", first.shape));
        }
        for p in parts {
            if p.ndim() != nd
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(k, (a, b))| k != axis && a != b)
            {
                return Err(dim_err!(
                    "cannot concatenate {:?} with {:?} along axis {axis}",
                    first.shape,
                    p.shape
                ));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let w = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self::from_vec(shape, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Self::from_vec(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| alpha * a + b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(dim_err!("dot shapes differ: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return Err(dim_err!("matmul needs matrices, got {:?} and {:?}", self.shape, other.shape));
        }
        contract(self, other, &[(1, 0)])
    }

    /// `‖self − other‖ / max(‖other‖, tiny)`.
    pub fn rel_diff(&self, other: &Self) -> Result<f64> {
        let diff = self.sub(other)?.norm();
        Ok(diff / other.norm().max(f64::MIN_POSITIVE))
    }
}

fn check_perm(perm: &[usize], nd: usize) -> Result<()> {
    let mut seen = vec![false; nd];
    if perm.len() != nd {
        return Err(dim_err!("permutation {:?} has wrong length for rank {nd}", perm));
    }
    for &p in perm {
        if p >= nd || seen[p] {
            return Err(dim_err!("{:?} is not a permutation of 0..{nd}", perm));
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn strided_copy(src: &[f64], out_shape: &[usize], src_strides: &[usize]) -> Vec<f64> {
    let total = numel(out_shape);
    let mut out = Vec::with_capacity(total);
    let nd = out_shape.len();
    if nd == 0 {
        out.push(src[0]);
        return out;
    }
    let last = nd - 1;
    let inner_n = out_shape[last];
    let inner_s = src_strides[last];
    let mut idx = vec![0usize; nd];
    let mut base = 0usize;
    let rows = total / inner_n.max(1);
    for _ in 0..rows {
        if inner_s == 1 {
            out.extend_from_slice(&src[base..base + inner_n]);
        } else {
            let mut off = base;
            for _ in 0..inner_n {
                out.push(src[off]);
                off += inner_s;
            }
        }
        for k in (0..last).rev() {
            idx[k] += 1;
            base += src_strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            base -= src_strides[k] * out_shape[k];
            idx[k] = 0;
        }
    }
    out
}

/// How a tensor is viewed as an `rows × cols` matrix for GEMM without
/// copying, if its axis order allows it.
struct MatView<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

/// Generalized tensor contraction.
///
/// Each pair `(i, j)` contracts axis `i` of `a` with axis `j` of `b`. The
/// result carries the free axes of `a` followed by the free axes of `b`,
/// each group in its original order. An empty pair list gives the outer
/// product.
pub fn contract(a: &DenseTensor, b: &DenseTensor, axes: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.ndim()];
    let mut used_b = vec![false; b.ndim()];
    for &(i, j) in axes {
        if i >= a.ndim() || j >= b.ndim() {
            return Err(dim_err!(
                "contraction axes ({i}, {j}) out of range for {:?} and {:?}",
                a.shape,
                b.shape
            ));
        }
        if used_a[i] || used_b[j] {
            return Err(dim_err!("contraction axis repeated in {:?}", axes));
        }
        if a.shape[i] != b.shape[j] {
            return Err(dim_err!(
                "contracted extents differ: axis {i} of {:?} vs axis {j} of {:?}",
                a.shape,
                b.shape
            ));
        }
        used_a[i] = true;
        used_b[j] = true;
    }
    let free_a: Vec<usize> = (0..a.ndim()).filter(|&k| !used_a[k]).collect();
    let free_b: Vec<usize> = (0..b.ndim()).filter(|&k| !used_b[k]).collect();
    let con_a: Vec<usize> = axes.iter().map(|p| p.0).collect();
    let con_b: Vec<usize> = axes.iter().map(|p| p.1).collect();

    let m: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let n: usize = free_b.iter().map(|&k| b.shape[k]).product();
    let kk: usize = con_a.iter().map(|&k| a.shape[k]).product();
    let mut out_shape: Vec<usize> = free_a.iter().map(|&k| a.shape[k]).collect();
    out_shape.extend(free_b.iter().map(|&k| b.shape[k]));

    if m == 0 || n == 0 || kk == 0 {
        return Ok(DenseTensor::from_vec(out_shape, vec![0.0; m * n]));
    }
    let mut out: Vec<f64> = Vec::with_capacity(m * n);

    // A as m×k: axis order [free_a, con_a] is row-major, [con_a, free_a] is column-major.
    let a_owned;
    let av = {
        let rm: Vec<usize> = free_a.iter().chain(&con_a).copied().collect();
        let cm: Vec<usize> = con_a.iter().chain(&free_a).copied().collect();
        if is_identity(&rm) {
            MatView { data: &a.data, row_stride: kk as isize, col_stride: 1 }
        } else if is_identity(&cm) {
            MatView { data: &a.data, row_stride: 1, col_stride: m as isize }
        } else {
            a_owned = a.permute(&rm)?;
            MatView { data: &a_owned.data, row_stride: kk as isize, col_stride: 1 }
        }
    };
    let b_owned;
    let bv = {
        let rm: Vec<usize> = con_b.iter().chain(&free_b).copied().collect();
        let cm: Vec<usize> = free_b.iter().chain(&con_b).copied().collect();
        if is_identity(&rm) {
            MatView { data: &b.data, row_stride: n as isize, col_stride: 1 }
        } else if is_identity(&cm) {
            MatView { data: &b.data, row_stride: 1, col_stride: kk as isize }
        } else {
            b_owned = b.permute(&rm)?;
            MatView { data: &b_owned.data, row_stride: n as isize, col_stride: 1 }
        }
    };
    // SAFETY: the views cover exactly m*k and k*n valid entries with the
    // given strides. `out` has capacity m*n; with beta = 0 the kernel writes
    // every entry without reading any, so the length can be set afterwards.
    unsafe {
        matrixmultiply::dgemm(
            m,
            kk,
            n,
            1.0,
            av.data.as_ptr(),
            av.row_stride,
            av.col_stride,
            bv.data.as_ptr(),
            bv.row_stride,
            bv.col_stride,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
        out.set_len(m * n);
    }
    Ok(DenseTensor::from_vec(out_shape, out))
}

fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Nested-loop contraction used as the reference.
    fn naive_contract(a: &DenseTensor, b: &DenseTensor, axes: &[(usize, usize)]) -> DenseTensor {
        let free_a: Vec<usize> = (0..a.ndim()).filter(|k| !axes.iter().any(|p| p.0 == *k)).collect();
        let free_b: Vec<usize> = (0..b.ndim()).filter(|k| !axes.iter().any(|p| p.1 == *k)).collect();
        let mut shape: Vec<usize> = free_a.iter().map(|&k| a.shape()[k]).collect();
        shape.extend(free_b.iter().map(|&k| b.shape()[k]));
        let con_shape: Vec<usize> = axes.iter().map(|p| a.shape()[p.0]).collect();
        DenseTensor::from_fn(&shape, |idx| {
            let mut ia = vec![0; a.ndim()];
            let mut ib = vec![0; b.ndim()];
            for (t, &k) in free_a.iter().enumerate() {
                ia[k] = idx[t];
            }
            for (t, &k) in free_b.iter().enumerate() {
                ib[k] = idx[free_a.len() + t];
            }
            let mut acc = 0.0;
            let total: usize = con_shape.iter().product();
            let mut c = vec![0; axes.len()];
            for _ in 0..total {
                for (t, p) in axes.iter().enumerate() {
                    ia[p.0] = c[t];
                    ib[p.1] = c[t];
                }
                acc += a.get(&ia) * b.get(&ib);
                for t in (0..c.len()).rev() {
                    c[t] += 1;
                    if c[t] < con_shape[t] {
                        break;
                    }
                    c[t] = 0;
                }
            }
            acc
        })
    }

    fn seq(shape: &[usize], offset: f64) -> DenseTensor {
        let mut c = offset;
        DenseTensor::from_fn(shape, |_| {
            c = (c * 1.37 + 0.29) % 2.0 - 0.7;
            c
        })
    }

    #[test]
    fn identity_times_vector() {
        let v = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = contract(&DenseTensor::eye(2), &v, &[(1, 0)]).unwrap();
        assert_eq!(r.data(), &[1.0, 2.0]);
    }

    #[test]
    fn full_contraction_is_dot() {
        let a = DenseTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = DenseTensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        let r = contract(&a, &b, &[(0, 0)]).unwrap();
        assert_eq!(r.shape(), &[] as &[usize]);
        assert_eq!(r.item().unwrap(), 32.0);
    }

    #[test]
    fn contraction_swap_is_transpose() {
        let a = seq(&[3, 4], 0.1);
        let b = seq(&[4, 2], 0.3);
        let ab = contract(&a, &b, &[(1, 0)]).unwrap();
        let ba = contract(&b, &a, &[(0, 1)]).unwrap();
        assert_eq!(ab.shape(), &[3, 2]);
        assert!(ab.rel_diff(&ba.t()).unwrap() < 1e-15);
        assert!(ab.rel_diff(&naive_contract(&a, &b, &[(1, 0)])).unwrap() < 1e-14);
    }

    #[test]
    fn extent_mismatch_rejected() {
        let a = DenseTensor::zeros(&[2, 3]);
        let b = DenseTensor::zeros(&[2, 3]);
        assert!(matches!(contract(&a, &b, &[(1, 0)]), Err(Error::Dimension(_))));
        assert!(matches!(contract(&a, &b, &[(0, 0), (0, 1)]), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(matches!(
            DenseTensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::InvalidValue(_))
        ));
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn gather_and_scatter_are_adjoint() {
        let x = DenseTensor::from_fn(&[2, 4, 3], |i| (i[0] * 12 + i[1] * 3 + i[2]) as f64 + 0.5);
        let idx = [2, 0, 2, 3, 1];
        let g = x.gather(1, &idx).unwrap();
        assert_eq!(g.shape(), &[2, 5, 3]);
        assert_eq!(g.get(&[1, 2, 1]), x.get(&[1, 2, 1]));
        let y = DenseTensor::from_fn(&[2, 5, 3], |i| (i[0] + 2 * i[1] + 3 * i[2]) as f64 - 4.0);
        let lhs = g.dot(&y).unwrap();
        let rhs = x.dot(&y.scatter_add(1, &idx, 4).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
        assert!(x.gather(1, &[4]).is_err());
    }

    #[test]
    fn slice_pad_concat_agree() {
        let t = seq(&[2, 5, 3], 0.2);
        let left = t.slice(1, 0, 2).unwrap();
        let right = t.slice(1, 2, 3).unwrap();
        assert_eq!(DenseTensor::concat(&[&left, &right], 1).unwrap(), t);
        let padded = left.pad(1, 0, 3).unwrap().add(&right.pad(1, 2, 0).unwrap()).unwrap();
        assert_eq!(padded, t);
    }

    fn shape_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<(usize, usize)>)> {
        // Up to 6 total axes with extents up to 4 and a random set of paired axes.
        (1usize..=3, 1usize..=3)
            .prop_flat_map(|(na, nb)| {
                (
                    proptest::collection::vec(1usize..=4, na),
                    proptest::collection::vec(1usize..=4, nb),
                    Just((0..na).collect::<Vec<_>>()).prop_shuffle(),
                    Just((0..nb).collect::<Vec<_>>()).prop_shuffle(),
                    0..=na.min(nb),
                )
            })
            .prop_map(|(sa, mut sb, pa, pb, nc)| {
                let pairs: Vec<(usize, usize)> = (0..nc).map(|t| (pa[t], pb[t])).collect();
                for &(i, j) in &pairs {
                    sb[j] = sa[i];
                }
                (sa, sb, pairs)
            })
    }

    proptest! {
        #[test]
        fn contraction_matches_nested_loops((sa, sb, pairs) in shape_strategy(), seed in 0.0f64..1.0) {
            let a = seq(&sa, seed);
            let b = seq(&sb, seed + 0.5);
            let fast = contract(&a, &b, &pairs).unwrap();
            let slow = naive_contract(&a, &b, &pairs);
            prop_assert_eq!(fast.shape(), slow.shape());
            for (x, y) in fast.data().iter().zip(slow.data()) {
                prop_assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn permute_roundtrip(shape in proptest::collection::vec(1usize..=4, 1..=4)) {
            let t = seq(&shape, 0.4);
            let nd = shape.len();
            let perm: Vec<usize> = (0..nd).rev().collect();
            let back = t.permute(&perm).unwrap().permute(&inverse_perm(&perm)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
