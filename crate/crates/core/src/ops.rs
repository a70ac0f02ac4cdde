//! Value-level kernels shared by the tape and by callers that only need a
//! forward result.
//!
//! Accumulation order is fixed (plain left-to-right loops) so results are
//! reproducible bit-for-bit across runs.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities below this are clamped before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        for (p, &av) in row.iter().enumerate() {
            let src = &b[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(src) {
                *d = *d + av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Softmax over contiguous rows of length `cols`. Masked-out columns
/// (`mask[j] == false`) get probability exactly zero and their inputs are
/// never read.
pub(crate) fn softmax_rows_raw<T: Scalar>(x: &[T], cols: usize, mask: Option<&[bool]>) -> Result<Vec<T>> {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    if (0..cols).all(|j| !keep(j)) {
        return Err(Error::contract("softmax over a fully masked row"));
    }
    let mut out = vec![T::zero(); x.len()];
    for (r, (row, dst)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let mut max = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if !keep(j) {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::Numeric {
                    location: format!("softmax input row {r} column {j}"),
                });
            }
            if v > max {
                max = v;
            }
        }
        let mut total = T::zero();
        for (j, (&v, d)) in row.iter().zip(dst.iter_mut()).enumerate() {
            if keep(j) {
                *d = (v - max).exp();
                total = total + *d;
            }
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    Ok(out)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Index {
            index: axis,
            len: shape.len(),
        });
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); x.numel()];
    let mut lane = vec![T::zero(); n];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            for (j, slot) in lane.iter_mut().enumerate() {
                *slot = x.data()[at(j)];
            }
            let probs = softmax_rows_raw(&lane, n, None)?;
            for (j, p) in probs.into_iter().enumerate() {
                out[at(j)] = p;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// `-w_target * ln(max(probs[target], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, target: usize, class_weights: Option<&Tensor<T>>) -> Result<T> {
    let n = probs.numel();
    if target >= n {
        return Err(Error::Index { index: target, len: n });
    }
    let weight = match class_weights {
        Some(w) if w.numel() != n => {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: probs.shape().to_vec(),
                rhs: w.shape().to_vec(),
            })
        }
        Some(w) => w.data()[target],
        None => T::one(),
    };
    let p = probs.data()[target].max(T::of(LOG_CLAMP));
    Ok(-weight * p.ln())
}
