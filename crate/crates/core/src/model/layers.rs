//! Fusion primitives. The `pub` functions evaluate a primitive on plain
//! values; the `pub(crate)` ones record it on a tape for training.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::params::{BoundMha, MhaParams};
use crate::store::ActivationStack;
use crate::tensor::{Scalar, Tensor};

/// The stack as a `[L, T·D]` matrix.
fn stack_matrix<T: Scalar>(stack: &ActivationStack) -> Result<Tensor<T>> {
    let data = stack.values().iter().map(|&v| T::of(v as f64)).collect();
    Tensor::new(vec![stack.layers(), stack.frames() * stack.dim()], data)
}

fn check_mask(mask: &[bool], frames: usize, what: &'static str) -> Result<()> {
    if mask.len() != frames {
        return Err(Error::Dimension {
            op: what,
            lhs: vec![mask.len()],
            rhs: vec![frames],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::contract(format!("{what}: every position is masked")));
    }
    Ok(())
}

/// `softmax(logits)`-weighted sum over layers, per frame: `[T, D]`.
pub(crate) fn tape_layer_weighted_sum<T: Scalar>(
    tape: &mut Tape<T>,
    stack: &ActivationStack,
    logits: Var,
) -> Result<Var> {
    let layers = stack.layers();
    if tape.shape(logits) != [layers] {
        return Err(Error::Dimension {
            op: "layer_weighted_sum",
            lhs: tape.shape(logits).to_vec(),
            rhs: vec![layers],
        });
    }
    let h = tape.constant(stack_matrix(stack)?);
    let row = tape.reshape(logits, vec![1, layers])?;
    let alpha = tape.softmax(row)?;
    let flat = tape.matmul(alpha, h)?;
    tape.reshape(flat, vec![stack.frames(), stack.dim()])
}

pub(crate) fn tape_mha<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &[bool],
    p: &BoundMha,
    heads: usize,
) -> Result<Var> {
    let (frames, dim) = match *tape.shape(x) {
        [t, d] => (t, d),
        ref s => {
            return Err(Error::Shape {
                shape: s.to_vec(),
                reason: "attention input must be 2-D".into(),
            })
        }
    };
    check_mask(mask, frames, "mha_forward")?;
    if heads == 0 || dim % heads != 0 {
        return Err(Error::contract(format!("dim {dim} not divisible by {heads} heads")));
    }
    let head_dim = dim / heads;
    let project = |tape: &mut Tape<T>, w: Var, b: Var| -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    };
    let q = project(tape, p.w_q, p.b_q)?;
    let k = project(tape, p.w_k, p.b_k)?;
    let v = project(tape, p.w_v, p.b_v)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            let start = h * head_dim;
            (
                tape.slice(q, 1, start, head_dim)?,
                tape.slice(k, 1, start, head_dim)?,
                tape.slice(v, 1, start, head_dim)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.masked_softmax(scores, mask)?;
        outputs.push(tape.matmul(attn, vh)?);
    }
    let joined = if heads == 1 {
        outputs[0]
    } else {
        tape.concat(&outputs, 1)?
    };
    let y = tape.matmul(joined, p.w_o)?;
    tape.add_row(y, p.b_o)
}

/// Single-query attention pooling of `[T, D]` into `[1, D]`.
pub(crate) fn tape_attention_pool<T: Scalar>(tape: &mut Tape<T>, x: Var, mask: &[bool], query: Var) -> Result<Var> {
    let (frames, dim) = match *tape.shape(x) {
        [t, d] => (t, d),
        ref s => {
            return Err(Error::Shape {
                shape: s.to_vec(),
                reason: "pool input must be 2-D".into(),
            })
        }
    };
    check_mask(mask, frames, "attention_pool")?;
    if tape.shape(query) != [dim] {
        return Err(Error::Dimension {
            op: "attention_pool",
            lhs: tape.shape(query).to_vec(),
            rhs: vec![dim],
        });
    }
    let q = tape.reshape(query, vec![dim, 1])?;
    let s = tape.matmul(x, q)?;
    let s = tape.transpose(s)?;
    let s = tape.scale(s, 1.0 / (dim as f64).sqrt())?;
    let a = tape.masked_softmax(s, mask)?;
    tape.matmul(a, x)
}

pub fn layer_weighted_sum<T: Scalar>(stack: &ActivationStack, logits: &[T]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::vector(logits.to_vec())?);
    let out = tape_layer_weighted_sum(&mut tape, stack, l)?;
    Ok(tape.value(out).clone())
}

/// Mean over the valid frames of each selected layer, concatenated in the
/// order given.
pub fn time_average_layers<T: Scalar>(stack: &ActivationStack, selected: &[usize]) -> Result<Vec<T>> {
    if selected.is_empty() {
        return Err(Error::contract("time_average_layers: empty layer selection"));
    }
    let (valid, dim) = (stack.frames_valid(), stack.dim());
    let mut out = Vec::with_capacity(selected.len() * dim);
    for &l in selected {
        if l >= stack.layers() {
            return Err(Error::Index {
                index: l,
                len: stack.layers(),
            });
        }
        let mut acc = vec![T::zero(); dim];
        for t in 0..valid {
            for (a, &v) in acc.iter_mut().zip(stack.frame(l, t)) {
                *a = *a + T::of(v as f64);
            }
        }
        let n = T::of(valid as f64);
        out.extend(acc.into_iter().map(|a| a / n));
    }
    Ok(out)
}

pub fn mha_forward<T: Scalar>(x: &Tensor<T>, mask: &[bool], params: &MhaParams<T>, heads: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let bound = params.bind(&mut tape);
    let out = tape_mha(&mut tape, xv, mask, &bound, heads)?;
    Ok(tape.value(out).clone())
}

pub fn attention_pool<T: Scalar>(x: &Tensor<T>, mask: &[bool], query: &[T]) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let q = tape.constant(Tensor::vector(query.to_vec())?);
    let out = tape_attention_pool(&mut tape, xv, mask, q)?;
    Ok(tape.value(out).data().to_vec())
}
