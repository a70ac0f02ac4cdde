use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::model::config::ArchitectureConfig;
use crate::tensor::{Scalar, Tensor};

/// `y = x · Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Projections of one multi-head attention layer. Matrices are applied as
/// `x · W + b` with `W: [D, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams<T = f32> {
    pub w_q: Tensor<T>,
    pub b_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub b_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub b_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
}

/// Trainable parameters. Components a variant does not use are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T = f32> {
    pub text_layer_logits: Option<Tensor<T>>,
    pub speech_layer_logits: Option<Tensor<T>>,
    /// `[D_speech, D_text]`, present only when the encoder widths differ.
    pub speech_adapter: Option<Tensor<T>>,
    pub mha: Option<MhaParams<T>>,
    pub pool_query: Option<Tensor<T>>,
    pub predictor: Linear<T>,
}

fn glorot<T: Scalar, R: Rng>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Ok(Tensor::new(vec![rows, cols], data)?.with_grad())
}

fn zeros<T: Scalar>(n: usize) -> Result<Tensor<T>> {
    Ok(Tensor::zeros(vec![n])?.with_grad())
}

impl<T: Scalar> MhaParams<T> {
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_q: glorot(dim, dim, dim, dim, rng)?,
            b_q: zeros(dim)?,
            w_k: glorot(dim, dim, dim, dim, rng)?,
            b_k: zeros(dim)?,
            w_v: glorot(dim, dim, dim, dim, rng)?,
            b_v: zeros(dim)?,
            w_o: glorot(dim, dim, dim, dim, rng)?,
            b_o: zeros(dim)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn cast<U: Scalar>(&self) -> MhaParams<U> {
        MhaParams {
            w_q: self.w_q.cast(),
            b_q: self.b_q.cast(),
            w_k: self.w_k.cast(),
            b_k: self.b_k.cast(),
            w_v: self.w_v.cast(),
            b_v: self.b_v.cast(),
            w_o: self.w_o.cast(),
            b_o: self.b_o.cast(),
        }
    }

    fn named(&self) -> [(&'static str, &Tensor<T>); 8] {
        [
            ("mha.w_q", &self.w_q),
            ("mha.b_q", &self.b_q),
            ("mha.w_k", &self.w_k),
            ("mha.b_k", &self.b_k),
            ("mha.w_v", &self.w_v),
            ("mha.b_v", &self.b_v),
            ("mha.w_o", &self.w_o),
            ("mha.b_o", &self.b_o),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 8] {
        [
            ("mha.w_q", &mut self.w_q),
            ("mha.b_q", &mut self.b_q),
            ("mha.w_k", &mut self.w_k),
            ("mha.b_k", &mut self.b_k),
            ("mha.w_v", &mut self.w_v),
            ("mha.b_v", &mut self.b_v),
            ("mha.w_o", &mut self.w_o),
            ("mha.b_o", &mut self.b_o),
        ]
    }

    pub(crate) fn bind(&self, tape: &mut Tape<T>) -> BoundMha {
        let [q, bq, k, bk, v, bv, o, bo] = self.named().map(|(_, t)| tape.leaf(t.detached()));
        BoundMha {
            w_q: q,
            b_q: bq,
            w_k: k,
            b_k: bk,
            w_v: v,
            b_v: bv,
            w_o: o,
            b_o: bo,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BoundMha {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
}

impl BoundMha {
    fn vars(&self) -> [Var; 8] {
        [
            self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v, self.w_o, self.b_o,
        ]
    }
}

/// Tape handles of every parameter for one forward pass.
#[derive(Clone, Debug)]
pub(crate) struct BoundParams {
    pub text_logits: Option<Var>,
    pub speech_logits: Option<Var>,
    pub adapter: Option<Var>,
    pub mha: Option<BoundMha>,
    pub pool_query: Option<Var>,
    pub pred_weight: Var,
    pub pred_bias: Var,
}

impl BoundParams {
    /// Same order as [`FusionParams::named`].
    fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = [self.text_logits, self.speech_logits, self.adapter]
            .into_iter()
            .flatten()
            .collect();
        if let Some(m) = &self.mha {
            v.extend(m.vars());
        }
        v.extend(self.pool_query);
        v.push(self.pred_weight);
        v.push(self.pred_bias);
        v
    }
}

impl<T: Scalar> FusionParams<T> {
    /// Projections Glorot-uniform; biases, layer logits and pooling query zero.
    pub fn init<R: Rng>(config: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dim = config.fusion_dim();
        let attn = config.variant.uses_attention();
        let speech_attn = attn && config.variant.uses_speech();
        let d_in = config.predictor_input_dim();
        let speech_adapter = if config.has_speech_adapter() {
            Some(glorot(config.speech_dim, dim, config.speech_dim, dim, rng)?)
        } else {
            None
        };
        let mha = if attn { Some(MhaParams::init(dim, rng)?) } else { None };
        Ok(Self {
            text_layer_logits: attn.then(|| zeros(config.text_layers)).transpose()?,
            speech_layer_logits: speech_attn.then(|| zeros(config.speech_layers)).transpose()?,
            speech_adapter,
            mha,
            pool_query: attn.then(|| zeros(dim)).transpose()?,
            predictor: Linear {
                weight: glorot(config.n_classes, d_in, d_in, config.n_classes, rng)?,
                bias: zeros(config.n_classes)?,
            },
        })
    }

    /// Fixed parameter order used by optimizers and checkpoints.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(t) = &self.text_layer_logits {
            out.push(("text_layer_logits", t));
        }
        if let Some(t) = &self.speech_layer_logits {
            out.push(("speech_layer_logits", t));
        }
        if let Some(t) = &self.speech_adapter {
            out.push(("speech_adapter", t));
        }
        if let Some(m) = &self.mha {
            out.extend(m.named());
        }
        if let Some(t) = &self.pool_query {
            out.push(("pool_query", t));
        }
        out.push(("predictor.weight", &self.predictor.weight));
        out.push(("predictor.bias", &self.predictor.bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(t) = &mut self.text_layer_logits {
            out.push(("text_layer_logits", t));
        }
        if let Some(t) = &mut self.speech_layer_logits {
            out.push(("speech_layer_logits", t));
        }
        if let Some(t) = &mut self.speech_adapter {
            out.push(("speech_adapter", t));
        }
        if let Some(m) = &mut self.mha {
            out.extend(m.named_mut());
        }
        if let Some(t) = &mut self.pool_query {
            out.push(("pool_query", t));
        }
        out.push(("predictor.weight", &mut self.predictor.weight));
        out.push(("predictor.bias", &mut self.predictor.bias));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub(crate) fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        let mut leaf = |t: &Option<Tensor<T>>| t.as_ref().map(|t| tape.leaf(t.detached()));
        let text_logits = leaf(&self.text_layer_logits);
        let speech_logits = leaf(&self.speech_layer_logits);
        let adapter = leaf(&self.speech_adapter);
        let mha = self.mha.as_ref().map(|m| m.bind(tape));
        let pool_query = self.pool_query.as_ref().map(|t| tape.leaf(t.detached()));
        BoundParams {
            text_logits,
            speech_logits,
            adapter,
            mha,
            pool_query,
            pred_weight: tape.leaf(self.predictor.weight.detached()),
            pred_bias: tape.leaf(self.predictor.bias.detached()),
        }
    }

    /// Adds the gradients held by `tape` into each parameter's grad buffer.
    pub(crate) fn absorb_grads(&mut self, tape: &Tape<T>, bound: &BoundParams) -> Result<()> {
        let vars = bound.vars();
        let mut params = self.named_mut();
        if vars.len() != params.len() {
            return Err(Error::contract("bound parameters out of sync"));
        }
        for ((_, p), v) in params.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> FusionParams<U> {
        let c = |t: &Option<Tensor<T>>| t.as_ref().map(Tensor::cast);
        FusionParams {
            text_layer_logits: c(&self.text_layer_logits),
            speech_layer_logits: c(&self.speech_layer_logits),
            speech_adapter: c(&self.speech_adapter),
            mha: self.mha.as_ref().map(MhaParams::cast),
            pool_query: c(&self.pool_query),
            predictor: Linear {
                weight: self.predictor.weight.cast(),
                bias: self.predictor.bias.cast(),
            },
        }
    }
}

impl<T: Scalar> Parameters<T> for FusionParams<T> {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.named_mut().into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(variant: Variant) -> ArchitectureConfig {
        ArchitectureConfig {
            speech_layers: 3,
            speech_dim: 12,
            selected_speech_layers: vec![1],
            ..ArchitectureConfig::text_only(variant, 5, 2, 8)
        }
    }

    #[test]
    fn components_per_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut names = |v| {
            FusionParams::<f32>::init(&config(v), &mut rng)
                .unwrap()
                .named()
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
        };
        assert_eq!(names(Variant::A1), ["predictor.weight", "predictor.bias"]);
        assert_eq!(names(Variant::A2).len(), 2);
        assert_eq!(names(Variant::A3).len(), 2 + 8 + 2);
        let a4 = names(Variant::A4);
        assert_eq!(a4.len(), 3 + 8 + 1 + 2);
        assert!(a4.contains(&"speech_adapter"));
    }

    #[test]
    fn initialization_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = FusionParams::<f32>::init(&config(Variant::A4), &mut rng).unwrap();
        assert!(p.text_layer_logits.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.pool_query.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.mha.as_ref().unwrap().b_v.data().iter().all(|&v| v == 0.0));
        let limit = (6.0f32 / 16.0).sqrt();
        let w = &p.mha.as_ref().unwrap().w_q;
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(w.data().iter().any(|&v| v != 0.0));
        assert_eq!(p.predictor.weight.shape(), &[5, 8]);
        assert!(p.named().iter().all(|(_, t)| t.requires_grad()));
    }

    #[test]
    fn same_seed_same_init() {
        let a = FusionParams::<f32>::init(&config(Variant::A4), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = FusionParams::<f32>::init(&config(Variant::A4), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }
}
