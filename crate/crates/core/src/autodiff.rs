//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every forward op appends a node holding its value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse and accumulates
//! vector-Jacobian products into the inputs that require gradients.
//! Only the ops used by the fusion stack are provided.

use crate::error::{Error, Result};
use crate::ops::{matmul_raw, softmax_rows_raw, transpose_raw, LOG_CLAMP};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    MeanRows(Var),
    Reshape(Var),
    Sum(Var),
    CrossEntropy { probs: Var, target: usize, weight: f64 },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let out = Tensor::new(vec![c, r], transpose_raw(self.value(a).data(), r, c))?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds the vector `row` (length = columns of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if self.value(row).numel() != c {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let b = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            for (d, &bv) in data[i * c..(i + 1) * c].iter_mut().zip(b) {
                *d = *d + bv;
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        let ng = self.needs(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let f = T::of(factor);
        let data = self.value(a).data().iter().map(|&x| x * f).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Scale(a, factor), ng))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax along the last axis where columns with `mask[j] == false`
    /// get exactly zero probability.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let cols = *self.shape(a).last().unwrap_or(&0);
        if mask.len() != cols {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let cols = *self.shape(a).last().unwrap_or(&1);
        let data = softmax_rows_raw(self.value(a).data(), cols, mask)?;
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        if axis > 1 {
            return Err(Error::Index { index: axis, len: 2 });
        }
        let (r0, c0) = self.dims2(first)?;
        let mut total = 0;
        for &v in inputs {
            let (r, c) = self.dims2(v)?;
            let (keep, grow) = if axis == 0 { (c, r) } else { (r, c) };
            let expect = if axis == 0 { c0 } else { r0 };
            if keep != expect {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
            total += grow;
        }
        let out = if axis == 0 {
            let data = inputs
                .iter()
                .flat_map(|&v| self.value(v).data().iter().copied())
                .collect();
            Tensor::new(vec![total, c0], data)?
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            Tensor::new(vec![r0, total], data)?
        };
        let ng = self.needs(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(Error::Index { index: axis, len: 2 }),
        };
        if len == 0 || start + len > extent {
            return Err(Error::Index {
                index: start + len,
                len: extent,
            });
        }
        let src = self.value(a).data();
        let out = if axis == 0 {
            Tensor::new(vec![len, c], src[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&src[i * c + start..i * c + start + len]);
            }
            Tensor::new(vec![r, len], data)?
        };
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Slice { input: a, axis, start }, ng))
    }

    /// Column means of a 2-D tensor, shape `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let src = self.value(a).data();
        let inv = T::of(1.0 / r as f64);
        let mut data = vec![T::zero(); c];
        for i in 0..r {
            for (d, &v) in data.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *d = *d + v;
            }
        }
        data.iter_mut().for_each(|d| *d = *d * inv);
        let out = Tensor::new(vec![1, c], data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::MeanRows(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let out = Tensor::new(vec![1], vec![s])?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Sum(a), ng))
    }

    /// `-weight * ln(max(probs[target], 1e-12))` as a one-element tensor.
    pub fn cross_entropy(&mut self, probs: Var, target: usize, weight: f64) -> Result<Var> {
        let p = self.value(probs);
        if target >= p.numel() {
            return Err(Error::Index {
                index: target,
                len: p.numel(),
            });
        }
        let pt = p.data()[target].max(T::of(LOG_CLAMP));
        let out = Tensor::new(vec![1], vec![-T::of(weight) * pt.ln()])?;
        let ng = self.needs(&[probs]);
        Ok(self.push(out, Op::CrossEntropy { probs, target, weight }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Back-propagates from the one-element tensor `out`.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Inputs always precede their outputs on the tape, so borrowing the
        // node while writing into `grads` of earlier nodes is sound.
        let node = &self.nodes[i];
        let mut updates: Vec<(Var, Vec<T>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = g.len() / m;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.nodes[a.0].needs_grad {
                    let bt = transpose_raw(bv, k, n);
                    updates.push((*a, matmul_raw(g, &bt, m, n, k)));
                }
                if self.nodes[b.0].needs_grad {
                    let at = transpose_raw(av, m, k);
                    updates.push((*b, matmul_raw(&at, g, k, m, n)));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                updates.push((*a, transpose_raw(g, c, r)));
            }
            Op::Add(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.to_vec()));
            }
            Op::AddRow(a, row) => {
                let c = self.value(*row).numel();
                let mut gb = vec![T::zero(); c];
                for chunk in g.chunks(c) {
                    gb.iter_mut().zip(chunk).for_each(|(s, &v)| *s = *s + v);
                }
                updates.push((*a, g.to_vec()));
                updates.push((*row, gb));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                updates.push((*a, zip_map(g, bv, |x, y| x * y)));
                updates.push((*b, zip_map(g, av, |x, y| x * y)));
            }
            Op::Scale(a, f) => {
                let f = T::of(*f);
                updates.push((*a, g.iter().map(|&x| x * f).collect()));
            }
            Op::Softmax(input) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                updates.push((*input, dx));
            }
            Op::Concat { inputs, axis } => {
                let (rows, total) = node.value.dims2().unwrap();
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = self.value(v).dims2().unwrap();
                    let part = if *axis == 0 {
                        let p = g[offset * total..(offset + r) * total].to_vec();
                        offset += r;
                        p
                    } else {
                        let mut p = Vec::with_capacity(r * c);
                        for row in 0..rows {
                            p.extend_from_slice(&g[row * total + offset..row * total + offset + c]);
                        }
                        offset += c;
                        p
                    };
                    updates.push((v, part));
                }
            }
            Op::Slice { input, axis, start } => {
                let (r, c) = self.value(*input).dims2().unwrap();
                let mut dx = vec![T::zero(); r * c];
                if *axis == 0 {
                    dx[start * c..start * c + g.len()].copy_from_slice(g);
                } else {
                    let len = g.len() / r;
                    for row in 0..r {
                        dx[row * c + start..row * c + start + len].copy_from_slice(&g[row * len..(row + 1) * len]);
                    }
                }
                updates.push((*input, dx));
            }
            Op::MeanRows(a) => {
                let (r, _) = self.value(*a).dims2().unwrap();
                let inv = T::of(1.0 / r as f64);
                let scaled: Vec<T> = g.iter().map(|&v| v * inv).collect();
                updates.push((*a, scaled.repeat(r)));
            }
            Op::Reshape(a) => updates.push((*a, g.to_vec())),
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                updates.push((*a, vec![g[0]; n]));
            }
            Op::CrossEntropy { probs, target, weight } => {
                let p = self.value(*probs).data()[*target];
                let mut dx = vec![T::zero(); self.value(*probs).numel()];
                // d/dp of -w ln(max(p, c)) vanishes on the clamped branch.
                if p > T::of(LOG_CLAMP) {
                    dx[*target] = g[0] * (-T::of(*weight) / p);
                }
                updates.push((*probs, dx));
            }
        }
        for (v, d) in updates {
            self.accumulate(v, d);
        }
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap().with_grad()
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(param(vec![1], vec![3.0]));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.value(y).data(), &[9.0]);
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(param(vec![1, 2], vec![1.0, 2.0]));
        let b = tape.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        tape.backward(c).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(b).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(param(vec![2], vec![1.0, 2.0]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(param(vec![1, 2], vec![1.0, 2.0]));
        let b = tape.leaf(param(vec![1, 3], vec![3.0, 4.0, 5.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = tape.slice(c, 1, 1, 3).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 3.0, 4.0]);
        let total = tape.sum(s).unwrap();
        tape.backward(total).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_ignores_padding_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![0.3, 123.0, -0.2]).unwrap());
        let y = tape.masked_softmax(x, &[true, false, true]).unwrap();
        let mut tape2 = Tape::<f32>::new();
        let x2 = tape2.constant(Tensor::new(vec![1, 3], vec![0.3, -7.0, -0.2]).unwrap());
        let y2 = tape2.masked_softmax(x2, &[true, false, true]).unwrap();
        assert_eq!(tape.value(y).data(), tape2.value(y2).data());
        assert_eq!(tape.value(y).data()[1], 0.0);
    }

    #[test]
    fn cross_entropy_gradient_through_softmax() {
        // d/dz of -ln softmax(z)_t = softmax(z) - onehot(t)
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(param(vec![1, 3], vec![0.5, -1.0, 2.0]));
        let p = tape.softmax(z).unwrap();
        let loss = tape.cross_entropy(p, 1, 1.0).unwrap();
        tape.backward(loss).unwrap();
        let probs = tape.value(p).data().to_vec();
        let g = tape.grad(z).unwrap();
        for j in 0..3 {
            let expect = probs[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((g[j] - expect).abs() < 1e-12);
        }
    }
}
