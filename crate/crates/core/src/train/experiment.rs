use std::path::Path;

use crate::corpus::{load_corpus, Dialogue, LabelVocab, Split};
use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Variant, DEFAULT_HEADS};
use crate::store::Manifest;

use super::{evaluate, init_model, select_speech_layer, train, Dataset, Evaluation, TrainConfig, TrainOutcome};

/// Corpus, manifest and the three assembled splits.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dialogues: Vec<Dialogue>,
    pub manifest: Manifest,
    pub vocab: LabelVocab,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub with_speech: bool,
}

impl Prepared {
    pub fn load(corpus: &Path, manifest: &Path, with_speech: bool) -> Result<Self> {
        let dialogues = load_corpus(corpus)?;
        let manifest = Manifest::load(manifest)?;
        Self::new(dialogues, manifest, with_speech)
    }

    pub fn new(dialogues: Vec<Dialogue>, manifest: Manifest, with_speech: bool) -> Result<Self> {
        let vocab = LabelVocab::from_dialogues(&dialogues)?;
        let split = |s| Dataset::assemble(&dialogues, s, &manifest, &vocab, with_speech);
        let (train, dev, test) = (split(Split::Train)?, split(Split::Dev)?, split(Split::Test)?);
        Ok(Self {
            dialogues,
            manifest,
            vocab,
            train,
            dev,
            test,
            with_speech,
        })
    }

    /// Architecture for `variant` with dimensions read from the data.
    pub fn architecture(
        &self,
        variant: Variant,
        heads: Option<usize>,
        selected: Vec<usize>,
    ) -> Result<ArchitectureConfig> {
        let first = self
            .train
            .samples
            .first()
            .ok_or_else(|| Error::contract("train split has no samples"))?;
        let mut config =
            ArchitectureConfig::text_only(variant, self.vocab.len(), first.text.layers(), first.text.dim());
        config.heads = heads.unwrap_or(DEFAULT_HEADS);
        if variant.uses_speech() {
            let speech = first
                .speech
                .as_ref()
                .ok_or_else(|| Error::contract(format!("{variant} needs speech activations")))?;
            config.speech_layers = speech.layers();
            config.speech_dim = speech.dim();
        }
        if variant == Variant::A2 {
            if selected.is_empty() {
                // resolved by a dev search in run_experiment
                return Ok(config);
            }
            config.selected_speech_layers = selected;
        }
        config.normalized()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ArchitectureConfig,
    pub outcome: TrainOutcome,
    pub dev: Evaluation,
    pub test: Evaluation,
    /// Dev score of every candidate layer when the `A2` layer was searched.
    pub layer_scores: Vec<(usize, f64)>,
}

/// Trains one model and evaluates it on dev and test. An `A2` config with
/// no selected layers first picks the single best speech layer on dev.
pub fn run_experiment(
    data: &Prepared,
    mut config: ArchitectureConfig,
    train_config: &TrainConfig,
) -> Result<RunResult> {
    let mut layer_scores = Vec::new();
    if config.variant == Variant::A2 && config.selected_speech_layers.is_empty() {
        let (best, scores) = select_speech_layer(&config, &data.train, &data.dev, &data.vocab, train_config)?;
        config.selected_speech_layers = vec![best];
        layer_scores = scores;
    }
    let config = config.normalized()?;
    let model = init_model(config.clone(), train_config.seed)?;
    let outcome = train(model, &data.train, Some(&data.dev), &data.vocab, train_config)?;
    let labels = data.vocab.labels();
    let dev = evaluate(&outcome.model, &data.dev, labels, &train_config.answer_acts)?;
    let test = evaluate(&outcome.model, &data.test, labels, &train_config.answer_acts)?;
    Ok(RunResult {
        config,
        outcome,
        dev,
        test,
        layer_scores,
    })
}
