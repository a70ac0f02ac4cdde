use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use fusion_policy::corpus::{load_corpus, LabelVocab, Split};
use fusion_policy::model::{model_grad_check, Checkpoint, Variant};
use fusion_policy::store::{Manifest, Modality};
use fusion_policy::synth::generate;
use fusion_policy::train::{
    aggregate_runs, evaluate, run_experiment, summary_table, write_metrics, Dataset, Evaluation, MetricRecord,
    Prepared, SummaryRow, TrainConfig, UrsReport,
};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::{Command, DataArgs};

pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.fpck";
pub const METRICS_FILE: &str = "metrics.jsonl";
const GRAD_TOLERANCE: f64 = 1e-3;

/// Final scores of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub split: Split,
    pub samples: usize,
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub urs: UrsReport,
}

impl SplitScores {
    fn new(split: Split, e: &Evaluation) -> Self {
        Self {
            split,
            samples: e.predictions.len(),
            loss: e.loss,
            accuracy: e.accuracy,
            urs: e.urs,
        }
    }
}

/// Everything `summarize` needs about a finished training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub architecture: Variant,
    pub embeddings: String,
    pub seed: u64,
    pub model: fusion_policy::model::ArchitectureConfig,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub layer_scores: Vec<(usize, f64)>,
    pub dev: SplitScores,
    pub test: SplitScores,
}

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut app = AppConfig::load(config.config.as_deref(), &config.overrides)?;
            if let Some(s) = seed {
                app.synth.seed = s;
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (data, manifest) = generate(&app.synth, &out)?;
            println!(
                "wrote {} dialogues and {} activation files to {} ({} text cues x {} speech cues)",
                data.dialogues.len(),
                manifest.records.len(),
                out.display(),
                data.policy.text_cues,
                data.policy.speech_cues
            );
        }
        Command::Train {
            config,
            data,
            arch,
            out,
            seed,
            weighted_loss,
        } => {
            let mut app = AppConfig::load(config.config.as_deref(), &config.overrides)?;
            if let Some(s) = seed {
                app.train.seed = s;
            }
            app.train.weighted_loss |= weighted_loss;
            if let Some(acts) = &data.answer_acts {
                app.train.answer_acts = acts.iter().cloned().collect();
            }
            train(&app, &data, arch, &out)?;
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            out,
        } => eval(&data, &checkpoint, split, out.as_deref())?,
        Command::Gradcheck { dims, arch, seed } => {
            let variants = arch.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
            let mut ok = true;
            for v in variants {
                let r = model_grad_check(v, dims, seed)?;
                let pass = r.max_rel_error < GRAD_TOLERANCE;
                ok &= pass;
                println!(
                    "{v}: max relative error {:.3e} over {} elements (worst {}) {}",
                    r.max_rel_error,
                    r.elements_checked,
                    r.worst.as_deref().unwrap_or("-"),
                    if pass { "ok" } else { "FAILED" }
                );
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Inspect { checkpoint } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let c = ck.model.config();
            println!(
                "architecture {} ({} classes, {} heads)",
                c.variant, c.n_classes, c.heads
            );
            if c.variant == Variant::A2 {
                println!("selected speech layers {:?}", c.selected_speech_layers);
            }
            let (text, speech) = ck.model.layer_weights()?;
            for (name, w) in [("text", text), ("speech", speech)] {
                if let Some(w) = w {
                    let cells: Vec<String> = w.iter().map(|x| format!("{x:.4}")).collect();
                    println!("{name} layer weights: {}", cells.join(" "));
                }
            }
            if !ck.model.variant().uses_attention() {
                println!("no learned layer weights");
            }
        }
        Command::Summarize { runs, out } => {
            let table = summarize(&runs)?;
            print!("{table}");
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                std::fs::write(out.join("summary.md"), &table)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn manifest_path(data: &DataArgs) -> PathBuf {
    match (&data.manifest, data.use_asr) {
        (Some(p), _) => p.clone(),
        (None, true) => data.data.join("manifest.asr.jsonl"),
        (None, false) => data.data.join("manifest.jsonl"),
    }
}

fn load_inputs(data: &DataArgs, with_speech: bool) -> Result<Prepared> {
    let corpus = data.data.join("corpus.jsonl");
    let manifest = manifest_path(data);
    Prepared::load(&corpus, &manifest, with_speech)
        .with_context(|| format!("loading {} with {}", corpus.display(), manifest.display()))
}

/// Encoder names recorded in the manifest, e.g. `text+speech-encoder`.
fn embeddings_label(manifest: &Manifest, variant: Variant) -> String {
    let encoder = |m: Modality, fallback: &str| {
        manifest
            .records
            .iter()
            .find(|r| r.modality == m)
            .and_then(|r| r.encoder.clone())
            .unwrap_or_else(|| fallback.to_string())
    };
    let text = encoder(Modality::Text, "text");
    if variant.uses_speech() {
        format!("{text}+{}", encoder(Modality::Speech, "speech"))
    } else {
        text
    }
}

fn train(app: &AppConfig, data: &DataArgs, arch: Variant, out: &Path) -> Result<()> {
    let prepared = load_inputs(data, arch.uses_speech())?;
    let selected = if arch == Variant::A2 {
        app.model.selected_speech_layers.clone()
    } else {
        Vec::new()
    };
    let config = prepared.architecture(arch, Some(app.model.heads), selected)?;
    let result = run_experiment(&prepared, config, &app.train)?;

    let seed = app.train.seed;
    let run_id = format!("{arch}-s{seed}");
    let mut metrics = result.outcome.metric_records(&run_id, seed);
    metrics.push(MetricRecord {
        run_id: run_id.clone(),
        seed,
        epoch: result.outcome.best_epoch,
        split: Split::Test,
        loss: result.test.loss,
        accuracy: result.test.accuracy,
        urs: result.test.urs.score,
    });
    let record = RunRecord {
        run_id,
        architecture: arch,
        embeddings: embeddings_label(&prepared.manifest, arch),
        seed,
        model: result.config.clone(),
        train: app.train.clone(),
        best_epoch: result.outcome.best_epoch,
        layer_scores: result.layer_scores.clone(),
        dev: SplitScores::new(Split::Dev, &result.dev),
        test: SplitScores::new(Split::Test, &result.test),
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Checkpoint::new(result.outcome.model, prepared.vocab.labels().to_vec())?.save(&out.join(CHECKPOINT_FILE))?;
    write_metrics(&out.join(METRICS_FILE), &metrics)?;
    std::fs::write(out.join(RUN_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    if let Some(last) = metrics.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}

fn eval(data: &DataArgs, checkpoint: &Path, split: Split, out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let dialogues = load_corpus(&data.data.join("corpus.jsonl"))?;
    let manifest = Manifest::load(&manifest_path(data))?;
    let vocab = LabelVocab::from_labels(ck.labels.clone())?;
    let with_speech = ck.model.variant().uses_speech();
    let dataset = Dataset::assemble(&dialogues, split, &manifest, &vocab, with_speech)?;
    let acts = match &data.answer_acts {
        Some(a) => a.iter().cloned().collect(),
        None => TrainConfig::default().answer_acts,
    };
    let e = evaluate(&ck.model, &dataset, &ck.labels, &acts)?;
    let scores = SplitScores::new(split, &e);
    println!(
        "{split}: {} samples, accuracy {:.3}%, urs {}",
        scores.samples,
        100.0 * scores.accuracy,
        scores.urs
    );
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&scores)? + "\n")?;
    }
    Ok(())
}

fn find_runs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_runs(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == RUN_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

/// Table of test URS and accuracy, one row per architecture and embedding
/// source, over every run found under `dir`.
pub fn summarize(dir: &Path) -> Result<String> {
    let mut paths = Vec::new();
    find_runs(dir, &mut paths)?;
    if paths.is_empty() {
        bail!("no {RUN_FILE} found under {}", dir.display());
    }
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in &paths {
        let text = std::fs::read_to_string(p)?;
        let r: RunRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let Some(urs) = r.test.urs.score else {
            bail!("{} has no test URS", p.display());
        };
        let g = groups.entry((r.architecture.to_string(), r.embeddings)).or_default();
        g.0.push(urs);
        g.1.push(100.0 * r.test.accuracy);
    }
    let rows = groups
        .into_iter()
        .map(|((architecture, embeddings), (urs, acc))| {
            Ok(SummaryRow {
                architecture,
                embeddings,
                urs: aggregate_runs(&urs)?,
                accuracy: Some(aggregate_runs(&acc)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summary_table(&rows))
}
