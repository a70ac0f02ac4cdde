//! Policy networks over frozen encoder activations.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::store::ActivationStack;
use crate::tensor::{Scalar, Tensor};

pub use check::{model_grad_check, CheckDims};
pub use checkpoint::Checkpoint;
pub use config::{ArchitectureConfig, Variant, DEFAULT_HEADS};
pub use layers::{attention_pool, layer_weighted_sum, mha_forward, time_average_layers};
pub use params::{FusionParams, Linear, MhaParams};

use params::BoundParams;

/// Activations for one decision point.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub text: &'a ActivationStack,
    pub speech: Option<&'a ActivationStack>,
    /// Frame of the decision token in the text stack.
    pub da_pred_position: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T: Scalar = f32> {
    config: ArchitectureConfig,
    pub params: FusionParams<T>,
}

fn check_stack(stack: &ActivationStack, layers: usize, dim: usize, what: &'static str) -> Result<()> {
    if stack.layers() != layers || stack.dim() != dim {
        return Err(Error::Dimension {
            op: what,
            lhs: vec![stack.layers(), stack.frames(), stack.dim()],
            rhs: vec![layers, stack.frames(), dim],
        });
    }
    Ok(())
}

/// Learned `(text, speech)` layer weights, `None` where the variant has none.
pub type LayerWeights = (Option<Vec<f64>>, Option<Vec<f64>>);

impl<T: Scalar> FusionModel<T> {
    pub fn new<R: Rng>(config: ArchitectureConfig, rng: &mut R) -> Result<Self> {
        let config = config.normalized()?;
        let params = FusionParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Pairs a config with parameters whose names and shapes must match it.
    pub fn from_parts(config: ArchitectureConfig, params: FusionParams<T>) -> Result<Self> {
        let config = config.normalized()?;
        let reference = FusionParams::<T>::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let want: Vec<_> = reference
            .named()
            .iter()
            .map(|(n, t)| (*n, t.shape().to_vec()))
            .collect();
        let have: Vec<_> = params.named().iter().map(|(n, t)| (*n, t.shape().to_vec())).collect();
        if want != have {
            return Err(Error::validation(format!(
                "parameters do not fit {} config: expected {want:?}, found {have:?}",
                config.variant
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        let c = &self.config;
        check_stack(input.text, c.text_layers, c.text_dim, "text stack")?;
        if input.da_pred_position >= input.text.frames_valid() {
            return Err(Error::contract(format!(
                "decision position {} outside {} valid text frames",
                input.da_pred_position,
                input.text.frames_valid()
            )));
        }
        if c.variant.uses_speech() {
            let speech = input
                .speech
                .ok_or_else(|| Error::contract(format!("{} requires a speech stack", c.variant)))?;
            check_stack(speech, c.speech_layers, c.speech_dim, "speech stack")?;
        }
        Ok(())
    }

    /// Records the network on `tape`; returns class probabilities `[1, C]`.
    fn build(&self, tape: &mut Tape<T>, input: &ModelInput<'_>) -> Result<(Var, BoundParams)> {
        self.check_input(input)?;
        let c = &self.config;
        let p = self.params.bind(tape);
        let missing = || Error::contract("parameter missing for variant");
        let features = match c.variant {
            Variant::A1 | Variant::A2 => {
                let text = input.text.frame(c.text_layers - 1, input.da_pred_position);
                let mut x: Vec<T> = text.iter().map(|&v| T::of(v as f64)).collect();
                if c.variant == Variant::A2 {
                    let speech = input.speech.ok_or_else(missing)?;
                    x.extend(time_average_layers::<T>(speech, &c.selected_speech_layers)?);
                }
                let width = x.len();
                tape.constant(Tensor::new(vec![1, width], x)?)
            }
            Variant::A3 | Variant::A4 => {
                let text_logits = p.text_logits.ok_or_else(missing)?;
                let z_text = layers::tape_layer_weighted_sum(tape, input.text, text_logits)?;
                let (x, mask) = if c.variant == Variant::A4 {
                    let speech = input.speech.ok_or_else(missing)?;
                    let mut z_speech =
                        layers::tape_layer_weighted_sum(tape, speech, p.speech_logits.ok_or_else(missing)?)?;
                    if let Some(adapter) = p.adapter {
                        z_speech = tape.matmul(z_speech, adapter)?;
                    }
                    let mut mask = speech.valid_mask();
                    mask.extend(input.text.valid_mask());
                    (tape.concat(&[z_speech, z_text], 0)?, mask)
                } else {
                    (z_text, input.text.valid_mask())
                };
                let mha = p.mha.as_ref().ok_or_else(missing)?;
                let h = layers::tape_mha(tape, x, &mask, mha, c.heads)?;
                layers::tape_attention_pool(tape, h, &mask, p.pool_query.ok_or_else(missing)?)?
            }
        };
        let wt = tape.transpose(p.pred_weight)?;
        let logits = tape.matmul(features, wt)?;
        let logits = tape.add_row(logits, p.pred_bias)?;
        Ok((tape.softmax(logits)?, p))
    }

    pub fn forward(&self, input: &ModelInput<'_>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let (probs, _) = self.build(&mut tape, input)?;
        Ok(tape.value(probs).data().to_vec())
    }

    pub fn predict(&self, input: &ModelInput<'_>) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }

    /// Weighted cross-entropy for one sample. Gradients are added into the
    /// parameters' grad buffers; returns the loss and the probabilities.
    pub fn accumulate_loss_grad(&mut self, input: &ModelInput<'_>, target: usize, weight: f64) -> Result<(T, Vec<T>)> {
        let mut tape = Tape::new();
        let (probs, bound) = self.build(&mut tape, input)?;
        let loss = tape.cross_entropy(probs, target, weight)?;
        tape.backward(loss)?;
        self.params.absorb_grads(&tape, &bound)?;
        Ok((tape.value(loss).data()[0], tape.value(probs).data().to_vec()))
    }

    /// Softmax-normalized layer weights `(text, speech)` where learned.
    pub fn layer_weights(&self) -> Result<LayerWeights> {
        let norm = |t: &Option<Tensor<T>>| -> Result<Option<Vec<f64>>> {
            t.as_ref()
                .map(|t| {
                    let w = crate::ops::softmax(&t.cast::<f64>(), 0)?;
                    Ok(w.into_data())
                })
                .transpose()
        };
        Ok((
            norm(&self.params.text_layer_logits)?,
            norm(&self.params.speech_layer_logits)?,
        ))
    }

    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for FusionModel<T> {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.params.parameters_mut()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
