//! Synthetic corpus with a planted policy whose label depends on one cue
//! visible only in the text activations and one visible only in the speech
//! activations.
//!
//! Layout of the cues in a `D`-wide stack:
//!
//! * text cue `c_t`: `e[c_t]` added at the last text layer, decision token;
//! * speech cue `c_s`: `e[D/2 + c_s]` plus the salience marker `e[D-1]`,
//!   added at layer `L_s/2`, frame `T1/2`;
//! * distractors: every other valid frame of that speech layer gets
//!   `distractor_scale · e[D/2 + r]` for a random `r`, so averaging over time
//!   blurs the cue while attention can still find the marked frame.

pub mod policy;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    policy_samples, save_corpus, serialize_history, Dialogue, DialogueAct, HistoryWindow, Speaker, Split, Turn,
    DEFAULT_HISTORY_TURNS,
};
use crate::error::{Error, Result};
use crate::store::{write_activation, write_atomically, ActivationStack, Manifest, ManifestRecord, Modality};

pub use policy::{slot_name, PolicyEntry, PolicyTable};

pub const SYNTH_TEXT_ENCODER: &str = "synthetic-text";
pub const SYNTH_SPEECH_ENCODER: &str = "synthetic-speech";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub train_dialogues: usize,
    pub dev_dialogues: usize,
    pub test_dialogues: usize,
    /// User request / system inform pairs per dialogue, after the greeting.
    pub exchanges: usize,
    pub n_slots: usize,
    pub text_layers: usize,
    pub speech_layers: usize,
    /// Frames per speech stack (`T1`).
    pub speech_frames: usize,
    /// Padded token count per text stack (`T2`).
    pub text_tokens: usize,
    pub dim: usize,
    /// Fraction of label entropy carried only by speech.
    pub audio_info_bits: f64,
    pub noise_std: f64,
    pub distractor_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train_dialogues: 500,
            dev_dialogues: 100,
            test_dialogues: 100,
            exchanges: 4,
            n_slots: 4,
            text_layers: 4,
            speech_layers: 4,
            speech_frames: 8,
            text_tokens: 12,
            dim: 16,
            audio_info_bits: 0.5,
            noise_std: 0.1,
            distractor_scale: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Checks the spec and returns the planted policy.
    pub fn policy(&self) -> Result<PolicyTable> {
        if self.train_dialogues + self.dev_dialogues + self.test_dialogues == 0 || self.exchanges == 0 {
            return Err(Error::contract("synthetic spec generates no samples"));
        }
        let bad = |m: String| Err(Error::validation(format!("synth spec: {m}")));
        if !(0.0..=1.0).contains(&self.audio_info_bits) {
            return bad(format!("audio_info_bits {} outside [0, 1]", self.audio_info_bits));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(4) {
            return bad(format!("dim {} is not a positive multiple of 4", self.dim));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite())
            || !(self.distractor_scale >= 0.0 && self.distractor_scale.is_finite())
        {
            return bad("noise and distractor scales must be finite and non-negative".into());
        }
        if self.n_slots == 0 || self.text_layers == 0 || self.speech_layers == 0 || self.speech_frames == 0 {
            return bad("slots, layers and frames must be positive".into());
        }
        if self.text_tokens < 3 {
            return bad("text_tokens must be at least 3".into());
        }
        let speech_cues = (self.n_slots as f64).powf(self.audio_info_bits).round() as usize;
        if !self.n_slots.is_multiple_of(speech_cues) {
            return bad(format!(
                "{speech_cues} speech cues do not divide {} slots",
                self.n_slots
            ));
        }
        let text_cues = self.n_slots / speech_cues;
        if text_cues > self.dim / 2 || speech_cues >= self.dim / 2 {
            return bad(format!(
                "dim {} too small for {text_cues} text and {speech_cues} speech cues",
                self.dim
            ));
        }
        Ok(PolicyTable::new(text_cues, speech_cues))
    }

    pub fn dialogues(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_dialogues,
            Split::Dev => self.dev_dialogues,
            Split::Test => self.test_dialogues,
        }
    }

    pub fn speech_cue_layer(&self) -> usize {
        self.speech_layers / 2
    }

    pub fn speech_cue_frame(&self) -> usize {
        self.speech_frames / 2
    }

    /// Valid text tokens for the `k`-th exchange: the window grows with the
    /// dialogue until it fills the padded length.
    pub fn text_valid(&self, exchange: usize) -> usize {
        (2 * exchange + 3).min(self.text_tokens)
    }
}

/// Everything [`synthesize`] produces, still in memory.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub dialogues: Vec<Dialogue>,
    pub activations: Vec<(ManifestRecord, ActivationStack)>,
    pub policy: PolicyTable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    #[serde(flatten)]
    pub window: HistoryWindow,
}

/// Paths of a dataset written by [`generate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPaths {
    pub corpus: PathBuf,
    pub manifest: PathBuf,
    pub policy: PathBuf,
    pub windows: PathBuf,
    pub spec: PathBuf,
}

impl SynthPaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus.jsonl"),
            manifest: dir.join("manifest.jsonl"),
            policy: dir.join("policy.json"),
            windows: dir.join("windows.jsonl"),
            spec: dir.join("synth.json"),
        }
    }
}

fn record(
    id: String,
    dialogue_id: &str,
    turn_index: usize,
    modality: Modality,
    stack: &ActivationStack,
    da_pred: Option<usize>,
) -> ManifestRecord {
    ManifestRecord {
        path: PathBuf::from("activations").join(format!("{id}.embx")),
        id,
        dialogue_id: dialogue_id.to_string(),
        turn_index,
        modality,
        layers: stack.layers(),
        frames: stack.frames(),
        dim: stack.dim(),
        frames_valid: stack.frames_valid(),
        da_pred_position: da_pred,
        encoder: Some(
            match modality {
                Modality::Text => SYNTH_TEXT_ENCODER,
                Modality::Speech => SYNTH_SPEECH_ENCODER,
            }
            .to_string(),
        ),
    }
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    policy: &'a PolicyTable,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl Generator<'_> {
    fn noisy(&mut self, layers: usize, frames: usize, valid: usize) -> Vec<f32> {
        let d = self.spec.dim;
        let mut v = vec![0.0f32; layers * frames * d];
        for l in 0..layers {
            for t in 0..valid {
                for x in &mut v[(l * frames + t) * d..(l * frames + t + 1) * d] {
                    *x = self.noise.sample(&mut self.rng) as f32;
                }
            }
        }
        v
    }

    fn text_stack(&mut self, exchange: usize, text_cue: usize) -> Result<ActivationStack> {
        let s = self.spec;
        let valid = s.text_valid(exchange);
        let mut v = self.noisy(s.text_layers, s.text_tokens, valid);
        v[((s.text_layers - 1) * s.text_tokens + valid - 1) * s.dim + text_cue] += 1.0;
        ActivationStack::new(s.text_layers, s.text_tokens, s.dim, valid, v)
    }

    fn speech_stack(&mut self, speech_cue: usize) -> Result<ActivationStack> {
        let s = self.spec;
        let (frames, d, half) = (s.speech_frames, s.dim, s.dim / 2);
        let mut v = self.noisy(s.speech_layers, frames, frames);
        let layer = s.speech_cue_layer();
        for t in 0..frames {
            let base = (layer * frames + t) * d;
            if t == s.speech_cue_frame() {
                v[base + half + speech_cue] += 1.0;
                v[base + d - 1] += 1.0;
            } else if s.distractor_scale > 0.0 {
                let r = self.rng.random_range(0..self.policy.speech_cues);
                v[base + half + r] += s.distractor_scale as f32;
            }
        }
        ActivationStack::new(s.speech_layers, frames, d, frames, v)
    }

    fn dialogue(
        &mut self,
        id: String,
        split: Split,
        out: &mut Vec<(ManifestRecord, ActivationStack)>,
    ) -> Result<Dialogue> {
        let mut turns = vec![Turn {
            index: 0,
            speaker: Speaker::System,
            transcript: "hello, how may i help you".into(),
            asr_transcript: None,
            acts: vec![DialogueAct::new("welcomemsg", None)],
            system_markers: vec![],
            speech_ref: None,
        }];
        for k in 0..self.spec.exchanges {
            let text_cue = self.rng.random_range(0..self.policy.text_cues);
            let speech_cue = self.rng.random_range(0..self.policy.speech_cues);
            let entry = self.policy.entry(text_cue, speech_cue)?.clone();
            let (user, system) = (2 * k + 1, 2 * k + 2);
            let speech_id = format!("{id}-s{user}");
            turns.push(Turn {
                index: user,
                speaker: Speaker::User,
                transcript: format!("something from group {text_cue}"),
                asr_transcript: None,
                acts: vec![DialogueAct::new("request", Some(&entry.slot))],
                system_markers: vec![],
                speech_ref: Some(speech_id.clone()),
            });
            turns.push(Turn {
                index: system,
                speaker: Speaker::System,
                transcript: format!("here is the {}", entry.slot),
                asr_transcript: None,
                acts: vec![DialogueAct::new("inform", Some(&entry.slot))],
                system_markers: vec![],
                speech_ref: None,
            });
            let speech = self.speech_stack(speech_cue)?;
            let text = self.text_stack(k, text_cue)?;
            out.push((record(speech_id, &id, user, Modality::Speech, &speech, None), speech));
            let da_pred = text.frames_valid() - 1;
            out.push((
                record(
                    format!("{id}-t{system}"),
                    &id,
                    system,
                    Modality::Text,
                    &text,
                    Some(da_pred),
                ),
                text,
            ));
        }
        let d = Dialogue { id, split, turns };
        d.validate()?;
        Ok(d)
    }
}

/// Generates the corpus and activations. Each split draws from its own
/// stream of a generator seeded with `spec.seed`.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthData> {
    let policy = spec.policy()?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::validation(format!("noise: {e}")))?;
    let mut dialogues = Vec::new();
    let mut activations = Vec::new();
    for (stream, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream as u64 + 1);
        let mut g = Generator {
            spec,
            policy: &policy,
            rng,
            noise,
        };
        for i in 0..spec.dialogues(split) {
            dialogues.push(g.dialogue(format!("synth-{split}-{i:04}"), split, &mut activations)?);
        }
    }
    Ok(SynthData {
        dialogues,
        activations,
        policy,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomically(path, |f| {
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        w.flush()
    })
}

/// History windows of every policy sample, for text feature extraction.
pub fn history_windows(dialogues: &[Dialogue]) -> Result<Vec<WindowRecord>> {
    policy_samples(dialogues)?
        .into_iter()
        .map(|s| {
            let d = &dialogues[s.dialogue];
            Ok(WindowRecord {
                dialogue_id: d.id.clone(),
                turn_index: s.turn_index,
                window: serialize_history(d, s.turn_index, false, DEFAULT_HISTORY_TURNS)?,
            })
        })
        .collect()
}

/// Writes the synthetic dataset under `out_dir` and returns its manifest.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<(SynthData, Manifest)> {
    let data = synthesize(spec)?;
    let paths = SynthPaths::under(out_dir);
    for (r, stack) in &data.activations {
        write_activation(stack, &out_dir.join(&r.path))?;
    }
    let manifest = Manifest::new(data.activations.iter().map(|(r, _)| r.clone()).collect(), out_dir);
    manifest.save(&paths.manifest)?;
    save_corpus(&paths.corpus, &data.dialogues)?;
    write_json(&paths.policy, &data.policy)?;
    write_json(&paths.spec, spec)?;
    let windows = history_windows(&data.dialogues)?;
    write_atomically(&paths.windows, |f| {
        let mut w = BufWriter::new(f);
        for rec in &windows {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })?;
    Ok((data, manifest))
}
