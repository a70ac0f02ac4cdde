use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HEADS: usize = 4;

/// The four policy architectures.
///
/// * `A1`: last-layer text vector at the decision token → linear predictor.
/// * `A2`: `A1` vector concatenated with time-averaged speech layers.
/// * `A3`: text-only double attention (layer-weighted sum, MHA, pooling).
/// * `A4`: speech and text layer-weighted sums fused by MHA, then pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    A1,
    A2,
    A3,
    A4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A1, Variant::A2, Variant::A3, Variant::A4];

    pub fn uses_speech(self) -> bool {
        matches!(self, Variant::A2 | Variant::A4)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::A3 | Variant::A4)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::A1 => "a1",
            Variant::A2 => "a2",
            Variant::A3 => "a3",
            Variant::A4 => "a4",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(Variant::A1),
            "a2" => Ok(Variant::A2),
            "a3" => Ok(Variant::A3),
            "a4" => Ok(Variant::A4),
            other => Err(Error::validation(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub variant: Variant,
    pub n_classes: usize,
    pub text_layers: usize,
    pub text_dim: usize,
    #[serde(default)]
    pub speech_layers: usize,
    #[serde(default)]
    pub speech_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Speech layers averaged over time by `A2`, ascending.
    #[serde(default)]
    pub selected_speech_layers: Vec<usize>,
}

fn default_heads() -> usize {
    DEFAULT_HEADS
}

impl ArchitectureConfig {
    pub fn text_only(variant: Variant, n_classes: usize, text_layers: usize, text_dim: usize) -> Self {
        Self {
            variant,
            n_classes,
            text_layers,
            text_dim,
            speech_layers: 0,
            speech_dim: 0,
            heads: DEFAULT_HEADS,
            selected_speech_layers: Vec::new(),
        }
    }

    /// Sorts and deduplicates the A2 layer selection, then validates.
    pub fn normalized(mut self) -> Result<Self> {
        self.selected_speech_layers.sort_unstable();
        self.selected_speech_layers.dedup();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(format!("{} config: {m}", self.variant)));
        if self.n_classes == 0 || self.text_layers == 0 || self.text_dim == 0 {
            return fail("classes, text layers and text dim must be positive".into());
        }
        if self.variant.uses_speech() && (self.speech_layers == 0 || self.speech_dim == 0) {
            return fail("speech layers and dim must be positive".into());
        }
        if self.variant == Variant::A2 {
            if self.selected_speech_layers.is_empty() {
                return fail("no speech layers selected".into());
            }
            if let Some(&l) = self.selected_speech_layers.iter().find(|&&l| l >= self.speech_layers) {
                return fail(format!("selected layer {l} >= {}", self.speech_layers));
            }
            if self.selected_speech_layers.windows(2).any(|w| w[0] >= w[1]) {
                return fail("selected layers must be strictly ascending".into());
            }
        }
        if self.variant.uses_attention() && (self.heads == 0 || !self.text_dim.is_multiple_of(self.heads)) {
            return fail(format!("dim {} not divisible by {} heads", self.text_dim, self.heads));
        }
        Ok(())
    }

    /// Width of the attention stack (the text encoder width).
    pub fn fusion_dim(&self) -> usize {
        self.text_dim
    }

    pub fn has_speech_adapter(&self) -> bool {
        self.variant == Variant::A4 && self.speech_dim != self.text_dim
    }

    pub fn predictor_input_dim(&self) -> usize {
        match self.variant {
            Variant::A2 => self.text_dim + self.selected_speech_layers.len() * self.speech_dim,
            _ => self.text_dim,
        }
    }
}
