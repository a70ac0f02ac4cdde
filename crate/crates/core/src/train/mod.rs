//! Mini-batch training, evaluation and result reporting.

pub mod dataset;
pub mod experiment;
pub mod optim;
pub mod report;
pub mod urs;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocab, Split};
use crate::error::{Error, Result};
use crate::model::{argmax, ArchitectureConfig, FusionModel};
use crate::ops::LOG_CLAMP;

pub use dataset::{Dataset, Sample};
pub use experiment::{run_experiment, Prepared, RunResult};
pub use optim::{Optimizer, OptimizerKind};
pub use report::{
    aggregate_runs, read_metrics, relative_improvement, summary_table, write_metrics, MetricRecord, RunSummary,
    SummaryRow,
};
pub use urs::{default_answer_acts, urs, UrsReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero is accepted and leaves parameters untouched.
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Scale each sample's loss by `N / (n_classes · count_c)`.
    pub weighted_loss: bool,
    /// Epochs without dev improvement before stopping; 0 disables stopping.
    pub early_stop_patience: usize,
    pub answer_acts: BTreeSet<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            weighted_loss: false,
            early_stop_patience: 5,
            answer_acts: default_answer_acts(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate {} is not a finite non-negative number",
                self.learning_rate
            )));
        }
        if self.answer_acts.is_empty() {
            return Err(Error::validation("answer_acts is empty"));
        }
        Ok(())
    }
}

/// Fresh model whose initialization depends only on `seed`.
pub fn init_model(config: ArchitectureConfig, seed: u64) -> Result<FusionModel<f32>> {
    FusionModel::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy over in-vocabulary samples.
    pub loss: Option<f64>,
    /// Over all samples; out-of-vocabulary samples always count as wrong.
    pub accuracy: f64,
    pub urs: UrsReport,
    /// Predicted label per sample, in dataset order.
    pub predictions: Vec<String>,
}

impl Evaluation {
    /// Model-selection score: URS when defined, accuracy in percent otherwise.
    pub fn selection_score(&self) -> f64 {
        self.urs.score.unwrap_or(100.0 * self.accuracy)
    }
}

pub fn evaluate(
    model: &FusionModel<f32>,
    data: &Dataset,
    labels: &[String],
    answer_acts: &BTreeSet<String>,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::contract(format!("{} split has no samples", data.split)));
    }
    if labels.len() != model.config().n_classes {
        return Err(Error::contract(format!(
            "{} labels for {} classes",
            labels.len(),
            model.config().n_classes
        )));
    }
    let (mut loss, mut scored, mut correct) = (0.0, 0usize, 0usize);
    let mut predictions = Vec::with_capacity(data.len());
    let mut keyed = HashMap::with_capacity(data.len());
    for s in &data.samples {
        let probs = model.forward(&s.input())?;
        let class = argmax(&probs);
        if let Some(target) = s.class.known() {
            loss -= (probs[target] as f64).max(LOG_CLAMP).ln();
            scored += 1;
            correct += usize::from(class == target);
        }
        keyed.insert((s.dialogue_id.clone(), s.turn_index), labels[class].clone());
        predictions.push(labels[class].clone());
    }
    Ok(Evaluation {
        loss: (scored > 0).then(|| loss / scored as f64),
        accuracy: correct as f64 / data.len() as f64,
        urs: urs(&data.dialogues, &keyed, answer_acts)?,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training objective over the epoch, measured before each update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev: Option<DevMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DevMetrics {
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub urs: UrsReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch, or of the last epoch without dev data.
    pub model: FusionModel<f32>,
    pub best_epoch: usize,
    pub epochs: Vec<EpochReport>,
}

impl TrainOutcome {
    pub fn metric_records(&self, run_id: &str, seed: u64) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        for e in &self.epochs {
            out.push(MetricRecord {
                run_id: run_id.to_string(),
                seed,
                epoch: e.epoch,
                split: Split::Train,
                loss: Some(e.train_loss),
                accuracy: e.train_accuracy,
                urs: None,
            });
            if let Some(d) = &e.dev {
                out.push(MetricRecord {
                    run_id: run_id.to_string(),
                    seed,
                    epoch: e.epoch,
                    split: Split::Dev,
                    loss: d.loss,
                    accuracy: d.accuracy,
                    urs: d.urs.score,
                });
            }
        }
        out
    }
}

/// Trains `model` on the in-vocabulary samples of `train`, keeping the
/// parameters with the best dev score when `dev` is given.
pub fn train(
    mut model: FusionModel<f32>,
    train: &Dataset,
    dev: Option<&Dataset>,
    vocab: &LabelVocab,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if vocab.len() != model.config().n_classes {
        return Err(Error::contract(format!(
            "vocabulary has {} labels, model {} classes",
            vocab.len(),
            model.config().n_classes
        )));
    }
    let mut order: Vec<usize> = (0..train.len())
        .filter(|&i| train.samples[i].class.known().is_some())
        .collect();
    if order.is_empty() {
        return Err(Error::contract("train split has no in-vocabulary samples"));
    }
    let weights = if config.weighted_loss {
        vocab.balanced_class_weights()
    } else {
        vec![1.0; vocab.len()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, FusionModel<f32>)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(config.batch_size) {
            model.params.named_mut().iter_mut().for_each(|(_, t)| t.zero_grad());
            for &i in batch {
                let s = &train.samples[i];
                let target = s
                    .class
                    .known()
                    .ok_or_else(|| Error::contract("out-of-vocabulary sample in batch"))?;
                let (loss, probs) = model.accumulate_loss_grad(&s.input(), target, weights[target])?;
                if !loss.is_finite() {
                    return Err(Error::Numeric {
                        location: format!("loss of {}:{} in epoch {epoch}", s.dialogue_id, s.turn_index),
                    });
                }
                loss_sum += loss as f64;
                correct += usize::from(argmax(&probs) == target);
            }
            let scale = 1.0 / batch.len() as f32;
            model
                .params
                .named_mut()
                .iter_mut()
                .for_each(|(_, t)| t.scale_grad(scale));
            optimizer.step(&mut model.params)?;
        }
        let dev_metrics = dev
            .map(|d| evaluate(&model, d, vocab.labels(), &config.answer_acts))
            .transpose()?;
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            dev: dev_metrics.as_ref().map(|e| DevMetrics {
                loss: e.loss,
                accuracy: e.accuracy,
                urs: e.urs,
            }),
        };
        epochs.push(report);

        let Some(eval) = dev_metrics else { continue };
        let score = eval.selection_score();
        match &best {
            Some((s, _, _)) if score <= *s => {
                let since = epoch - best.as_ref().map_or(0, |b| b.1);
                if config.early_stop_patience > 0 && since >= config.early_stop_patience {
                    break;
                }
            }
            _ => best = Some((score, epoch, model.clone())),
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, epochs.len()),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        epochs,
    })
}

/// Trains one `A2` model per speech layer and returns the layer with the
/// best dev score, together with every layer's score.
pub fn select_speech_layer(
    base: &ArchitectureConfig,
    train_data: &Dataset,
    dev: &Dataset,
    vocab: &LabelVocab,
    config: &TrainConfig,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let mut scores = Vec::with_capacity(base.speech_layers);
    for layer in 0..base.speech_layers {
        let arch = ArchitectureConfig {
            selected_speech_layers: vec![layer],
            ..base.clone()
        };
        let outcome = train(init_model(arch, config.seed)?, train_data, Some(dev), vocab, config)?;
        let eval = evaluate(&outcome.model, dev, vocab.labels(), &config.answer_acts)?;
        scores.push((layer, eval.selection_score()));
    }
    let best = scores
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(l, s)| match acc {
            Some((_, bs)) if s <= bs => acc,
            _ => Some((l, s)),
        })
        .ok_or_else(|| Error::contract("no speech layers to select from"))?;
    Ok((best.0, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClassId;
    use crate::model::Variant;
    use crate::store::ActivationStack;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (Dataset, LabelVocab) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = [1.0f32, -2.0, 0.5, 1.5];
        let labels = vec!["inform(food)".to_string(), "request(area)".to_string()];
        let samples = (0..n)
            .map(|i| {
                let x: Vec<f32> = loop {
                    let x: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let m: f32 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                    if m.abs() > 0.2 {
                        break x;
                    }
                };
                let class = usize::from(x.iter().zip(w).map(|(a, b)| a * b).sum::<f32>() > 0.0);
                Sample {
                    dialogue_id: format!("toy{i}"),
                    turn_index: 1,
                    label: labels[class].clone(),
                    class: ClassId::Known(class),
                    text: ActivationStack::new(1, 1, 4, 1, x).unwrap(),
                    speech: None,
                    da_pred_position: 0,
                }
            })
            .collect();
        (
            Dataset {
                split: Split::Train,
                dialogues: vec![],
                samples,
            },
            LabelVocab::from_labels(labels).unwrap(),
        )
    }

    fn a1() -> ArchitectureConfig {
        ArchitectureConfig::text_only(Variant::A1, 2, 1, 4)
    }

    #[test]
    fn zero_rate_keeps_parameters_and_loss() {
        let (data, vocab) = toy(64, 1);
        let model = init_model(a1(), 3).unwrap();
        let before = evaluate(&model, &data, vocab.labels(), &default_answer_acts()).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, None, &vocab, &cfg).unwrap();
        let values = |m: &FusionModel<f32>| {
            m.params
                .named()
                .iter()
                .map(|(_, t)| t.data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(values(&out.model), values(&model));
        let initial = before.loss.unwrap();
        assert!((out.epochs[0].train_loss - initial).abs() < 1e-6 * initial);
    }

    #[test]
    fn separable_toy_is_learned() {
        let (data, vocab) = toy(200, 2);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = train(init_model(a1(), 0).unwrap(), &data, None, &vocab, &cfg).unwrap();
        let eval = evaluate(&out.model, &data, vocab.labels(), &cfg.answer_acts).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert_eq!(eval.urs.score, None);
    }

    #[test]
    fn same_seed_same_loss_curve() {
        let (data, vocab) = toy(50, 4);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 7,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || train(init_model(a1(), cfg.seed).unwrap(), &data, None, &vocab, &cfg).unwrap();
        let (a, b) = (run(), run());
        let bits = |o: &TrainOutcome| o.epochs.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.model.params, b.model.params);
        let other = TrainConfig {
            seed: 10,
            ..cfg.clone()
        };
        let c = train(init_model(a1(), other.seed).unwrap(), &data, None, &vocab, &other).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn unit_weights_match_unweighted_loss_bitwise() {
        let (mut data, _) = toy(40, 5);
        for (i, s) in data.samples.iter_mut().enumerate() {
            s.class = ClassId::Known(i % 2);
        }
        let labels = vec!["inform(food)".to_string(), "request(area)".to_string()];
        let vocab = LabelVocab::from_labels(labels).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let plain = train(init_model(a1(), 1).unwrap(), &data, None, &vocab, &cfg).unwrap();
        let weighted_cfg = TrainConfig {
            weighted_loss: true,
            ..cfg
        };
        let weighted = train(init_model(a1(), 1).unwrap(), &data, None, &vocab, &weighted_cfg).unwrap();
        // a vocabulary built from labels has no counts, so all weights are 1
        assert!(vocab.balanced_class_weights().iter().all(|&w| w == 1.0));
        let bits = |o: &TrainOutcome| o.epochs.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&plain), bits(&weighted));
    }

    #[test]
    fn uniform_predictor_loss_is_log_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels: Vec<String> = (0..5).map(|i| format!("inform(s{i})")).collect();
        let samples = (0..1000)
            .map(|i| {
                let class = rng.random_range(0..5);
                Sample {
                    dialogue_id: format!("h{i}"),
                    turn_index: 1,
                    label: labels[class].clone(),
                    class: ClassId::Known(class),
                    text: ActivationStack::new(1, 1, 4, 1, (0..4).map(|_| rng.random_range(-3.0..3.0)).collect())
                        .unwrap(),
                    speech: None,
                    da_pred_position: 0,
                }
            })
            .collect();
        let data = Dataset {
            split: Split::Test,
            dialogues: vec![],
            samples,
        };
        let mut model = init_model(ArchitectureConfig::text_only(Variant::A1, 5, 1, 4), 0).unwrap();
        model.params.predictor.weight.data_mut().fill(0.0);
        let loss = evaluate(&model, &data, &labels, &default_answer_acts())
            .unwrap()
            .loss
            .unwrap();
        assert!((loss / 5f64.ln() - 1.0).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_configs_and_empty_data() {
        let (data, vocab) = toy(4, 7);
        for cfg in [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(init_model(a1(), 0).unwrap(), &data, None, &vocab, &cfg).is_err());
        }
        let mut oov = data.clone();
        oov.samples.iter_mut().for_each(|s| s.class = ClassId::OutOfVocab);
        let r = train(
            init_model(a1(), 0).unwrap(),
            &oov,
            None,
            &vocab,
            &TrainConfig::default(),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn out_of_vocab_counts_as_wrong() {
        let (mut data, vocab) = toy(10, 8);
        let model = init_model(a1(), 0).unwrap();
        let all = evaluate(&model, &data, vocab.labels(), &default_answer_acts()).unwrap();
        let right = (all.accuracy * 10.0).round() as usize;
        for s in &mut data.samples {
            s.class = ClassId::OutOfVocab;
        }
        let none = evaluate(&model, &data, vocab.labels(), &default_answer_acts()).unwrap();
        assert_eq!(none.accuracy, 0.0);
        assert_eq!(none.loss, None);
        assert!(right <= 10);
    }

    #[test]
    fn config_reads_partial_toml_like_json() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "optimizer": "sgd"}"#).unwrap();
        assert_eq!((cfg.epochs, cfg.optimizer, cfg.batch_size), (3, OptimizerKind::Sgd, 32));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }
}
