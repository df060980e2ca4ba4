use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Dense row-major tensor. A zero-dimensional shape `[]` holds one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(TensorError::Shape {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast dimensions.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// Maps every flat index of `out` to the flat index of a broadcast input.
pub(crate) fn broadcast_index_map(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let total = numel(out);
    let st = broadcast_strides(shape, out);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; out.len()];
    let mut idx = 0usize;
    for _ in 0..total {
        map.push(idx);
        for d in (0..out.len()).rev() {
            counter[d] += 1;
            idx += st[d];
            if counter[d] < out[d] {
                break;
            }
            idx -= st[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Batch layout of a broadcast matmul: output shape and, for each output
/// batch, the batch offsets into `a` and `b`.
pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batches: Vec<usize>,
    pub b_batches: Vec<usize>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    let err = || TensorError::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = broadcast_shape("matmul", ab, bb).map_err(|_| err())?;
    let a_batches = broadcast_index_map(ab, &batch);
    let b_batches = broadcast_index_map(bb, &batch);
    let mut out_shape = batch;
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulPlan {
        out_shape,
        m,
        k,
        n,
        a_batches,
        b_batches,
    })
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::Dimension {
                op: "new",
                msg: format!("shape {:?} needs {} elements, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::cast(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Size in bytes of the element buffer.
    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<T>()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::cast(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// In-place elementwise add of a same-shaped tensor.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub(crate) fn binary(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            return Ok(Self {
                shape: self.shape.clone(),
                data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            });
        }
        let out = broadcast_shape(op, &self.shape, &other.shape)?;
        let lead = other.shape.iter().take_while(|&&d| d == 1).count();
        let stripped = &other.shape[lead..];
        let suffix = out == self.shape
            && stripped.len() <= self.shape.len()
            && self.shape[self.shape.len() - stripped.len()..] == *stripped;
        let data = if suffix {
            // trailing-suffix broadcast, e.g. bias rows
            let bl = other.numel();
            self.data
                .iter()
                .enumerate()
                .map(|(i, &a)| f(a, other.data[i % bl]))
                .collect()
        } else {
            let ma = broadcast_index_map(&self.shape, &out);
            let mb = broadcast_index_map(&other.shape, &out);
            ma.iter()
                .zip(&mb)
                .map(|(&i, &j)| f(self.data[i], other.data[j]))
                .collect()
        };
        Ok(Self { shape: out, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(other, "mul", |a, b| a * b)
    }

    /// Sums a broadcast result back down to `target` shape.
    pub(crate) fn reduce_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let map = broadcast_index_map(target, &self.shape);
        let mut out = vec![T::zero(); numel(target)];
        for (&j, &v) in map.iter().zip(&self.data) {
            out[j] += v;
        }
        Self {
            shape: target.to_vec(),
            data: out,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = matmul_plan(&self.shape, &other.shape)?;
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let mut out = vec![T::zero(); numel(&plan.out_shape)];
        for (bi, (&ia, &ib)) in plan.a_batches.iter().zip(&plan.b_batches).enumerate() {
            gemm_nn(
                m,
                k,
                n,
                &self.data[ia * m * k..(ia + 1) * m * k],
                &other.data[ib * k * n..(ib + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        Ok(Self {
            shape: plan.out_shape,
            data: out,
        })
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.ndim() {
            return Err(TensorError::Dimension {
                op,
                msg: format!("axis {} invalid for shape {:?}", axis, self.shape),
            });
        }
        Ok(())
    }

    /// Softmax along `axis`, stabilized by max subtraction. A slice whose
    /// entries are all `-inf` yields all zeros.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        self.check_axis("softmax", axis)?;
        let (outer, len, inner) = axis_extents(&self.shape, axis);
        let mut out = vec![T::zero(); self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(self.data[base + j * inner]);
                }
                if mx == T::neg_infinity() {
                    continue;
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (self.data[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Self> {
        let len = *self.shape.last().ok_or_else(|| TensorError::Dimension {
            op: "log_softmax",
            msg: "scalar input".into(),
        })?;
        let mut out = self.data.clone();
        if len == 0 {
            return Ok(Self {
                shape: self.shape.clone(),
                data: out,
            });
        }
        for row in out.chunks_mut(len) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Index of the maximum of each last-axis row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let len = self.shape.last().copied().unwrap_or(1).max(1);
        self.data
            .chunks(len)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// General axis permutation; output is materialized.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Dimension {
                op: "permute",
                msg: format!("{:?} is not a permutation of {} axes", perm, nd),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let st: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total = self.numel();
        let mut data = Vec::with_capacity(total);
        let mut counter = vec![0usize; nd];
        let mut idx = 0usize;
        for _ in 0..total {
            data.push(self.data[idx]);
            for d in (0..nd).rev() {
                counter[d] += 1;
                idx += st[d];
                if counter[d] < out_shape[d] {
                    break;
                }
                idx -= st[d] * counter[d];
                counter[d] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(TensorError::Dimension {
                op: "transpose",
                msg: format!("needs at least 2 axes, got {:?}", self.shape),
            });
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.check_axis("narrow", axis)?;
        if start + len > self.shape[axis] {
            return Err(TensorError::Dimension {
                op: "narrow",
                msg: format!("range {}..{} exceeds axis {} of {:?}", start, start + len, axis, self.shape),
            });
        }
        let (outer, full, inner) = axis_extents(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| TensorError::Dimension {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        first.check_axis("concat", axis)?;
        for p in parts {
            let same = p.ndim() == first.ndim()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Self { shape, data })
    }

    /// Gathers entries along axis 0, e.g. to reorder beam rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        self.check_axis("select_rows", 0)?;
        let n = self.shape[0];
        let inner = numel(&self.shape[1..]);
        let mut data = Vec::with_capacity(rows.len() * inner);
        for (pos, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(TensorError::Index {
                    op: "select_rows",
                    index: r,
                    bound: n,
                    position: pos,
                });
            }
            data.extend_from_slice(&self.data[r * inner..(r + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Self { shape, data })
    }

    /// Zero-pads along `axis` up to `size`.
    pub fn pad_axis(&self, axis: usize, size: usize) -> Result<Self> {
        self.check_axis("pad_axis", axis)?;
        let cur = self.shape[axis];
        if size < cur {
            return Err(TensorError::Dimension {
                op: "pad_axis",
                msg: format!("cannot pad axis of size {} down to {}", cur, size),
            });
        }
        let (outer, _, inner) = axis_extents(&self.shape, axis);
        let mut data = vec![T::zero(); outer * size * inner];
        for o in 0..outer {
            data[o * size * inner..o * size * inner + cur * inner]
                .copy_from_slice(&self.data[o * cur * inner..(o + 1) * cur * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = size;
        Ok(Self { shape, data })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Zero-pads every tensor along `axis` to the largest size among them.
pub fn pad_tensors<T: Scalar>(tensors: &[Tensor<T>], axis: usize) -> Result<Vec<Tensor<T>>> {
    let Some(first) = tensors.first() else {
        return Ok(Vec::new());
    };
    for t in tensors {
        let agree = t.ndim() == first.ndim()
            && axis < t.ndim()
            && t.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !agree {
            return Err(TensorError::Shape {
                op: "pad_tensors",
                lhs: first.shape.clone(),
                rhs: t.shape.clone(),
            });
        }
    }
    let target = tensors.iter().map(|t| t.shape[axis]).max().unwrap_or(0);
    tensors.iter().map(|t| t.pad_axis(axis, target)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(eye.matmul(&m).unwrap(), m);
        let z = t(&[2, 1], &[0., 0.]);
        assert_eq!(eye.matmul(&z).unwrap(), z);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn matmul_broadcasts_batches() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[3, 2], |i| (i as f64) - 1.0);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        for bi in 0..2 {
            let ai = a.narrow(0, bi, 1).unwrap().reshape(&[2, 3]).unwrap();
            let ci = c.narrow(0, bi, 1).unwrap().reshape(&[2, 2]).unwrap();
            assert_eq!(ai.matmul(&b).unwrap(), ci);
        }
    }

    #[test]
    fn softmax_cases() {
        let u = t(&[3], &[0., 0., 0.]).softmax(0).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = t(&[2], &[0., 2f64.ln()]).softmax(0).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-12);
        let masked = t(&[2], &[f64::NEG_INFINITY, f64::NEG_INFINITY]).softmax(0).unwrap();
        assert_eq!(masked.data(), &[0., 0.]);
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| (i as f64 * 0.37).sin());
        let s = x.softmax(1).unwrap();
        for o in 0..2 {
            for i in 0..2 {
                let total: f64 = (0..3).map(|j| s.data()[o * 6 + j * 2 + i]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.data()[1], 4.0);
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), x);
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn broadcast_add() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let b = t(&[3], &[10., 20., 30.]);
        assert_eq!(a.add(&b).unwrap().data(), &[10., 21., 32., 13., 24., 35.]);
        let c = t(&[2, 1], &[1., 2.]);
        assert_eq!(a.add(&c).unwrap().data(), &[1., 2., 3., 5., 6., 7.]);
        assert!(a.add(&t(&[2], &[1., 1.])).is_err());
    }

    #[test]
    fn pad_tensors_cases() {
        let a = Tensor::<f64>::ones(&[2, 3]);
        let b = Tensor::<f64>::full(&[5, 3], 2.0);
        let out = pad_tensors(&[a.clone(), b.clone()], 0).unwrap();
        assert_eq!(out[0].shape(), &[5, 3]);
        assert_eq!(out[1], b);
        assert_eq!(&out[0].data()[..6], a.data());
        assert!(out[0].data()[6..].iter().all(|&v| v == 0.0));
        let same = pad_tensors(&[a.clone(), a.clone()], 0).unwrap();
        assert_eq!(same, vec![a.clone(), a.clone()]);
        assert!(pad_tensors(&[a, Tensor::<f64>::ones(&[2, 4])], 0).is_err());
    }

    #[test]
    fn select_rows_bounds() {
        let x = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(x.select_rows(&[2, 0]).unwrap().data(), &[4., 5., 0., 1.]);
        assert!(matches!(
            x.select_rows(&[0, 3]),
            Err(TensorError::Index { index: 3, position: 1, .. })
        ));
    }
}
