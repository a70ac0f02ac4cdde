use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport, DEFAULT_EPSILON};
use crate::store::ActivationStack;

use super::{ArchitectureConfig, FusionModel, ModelInput, Variant};

/// Problem size for a full-model gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckDims {
    pub text_layers: usize,
    pub speech_layers: usize,
    pub text_tokens: usize,
    pub speech_frames: usize,
    pub text_dim: usize,
    pub speech_dim: usize,
    pub heads: usize,
    pub n_classes: usize,
}

impl CheckDims {
    pub const SMALL: Self = Self {
        text_layers: 2,
        speech_layers: 2,
        text_tokens: 4,
        speech_frames: 3,
        text_dim: 8,
        speech_dim: 8,
        heads: 2,
        n_classes: 3,
    };

    /// Unequal speech and text widths, so the speech adapter is exercised.
    pub const MEDIUM: Self = Self {
        text_layers: 3,
        speech_layers: 3,
        text_tokens: 6,
        speech_frames: 5,
        text_dim: 12,
        speech_dim: 10,
        heads: 3,
        n_classes: 5,
    };

    pub fn architecture(&self, variant: Variant) -> ArchitectureConfig {
        ArchitectureConfig {
            variant,
            n_classes: self.n_classes,
            text_layers: self.text_layers,
            text_dim: self.text_dim,
            speech_layers: self.speech_layers,
            speech_dim: self.speech_dim,
            heads: self.heads,
            selected_speech_layers: (0..self.speech_layers).collect(),
        }
    }
}

impl FromStr for CheckDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Self::SMALL),
            "medium" => Ok(Self::MEDIUM),
            other => Err(Error::validation(format!("unknown grad-check size {other:?}"))),
        }
    }
}

/// Checks every parameter gradient of a randomly initialized `variant`
/// model in `f64`. The last text token and last speech frame are padding.
pub fn model_grad_check(variant: Variant, dims: CheckDims, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stack = |layers, frames, dim| {
        let values = (0..layers * frames * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        ActivationStack::new(layers, frames, dim, frames - 1, values)
    };
    let text = stack(dims.text_layers, dims.text_tokens, dims.text_dim)?;
    let speech = stack(dims.speech_layers, dims.speech_frames, dims.speech_dim)?;
    let mut model = FusionModel::<f64>::new(dims.architecture(variant), &mut rng)?;
    for (_, p) in model.params.named_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let input = ModelInput {
        text: &text,
        speech: Some(&speech),
        da_pred_position: text.frames_valid() - 1,
    };
    let target = dims.n_classes - 1;
    grad_check(
        &mut model,
        |m| Ok(m.accumulate_loss_grad(&input, target, 1.0)?.0),
        DEFAULT_EPSILON,
    )
}
