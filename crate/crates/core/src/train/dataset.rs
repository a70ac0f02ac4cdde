use std::collections::HashMap;

use crate::corpus::{policy_samples, ClassId, Dialogue, LabelVocab, Speaker, Split};
use crate::error::{Error, Result};
use crate::model::ModelInput;
use crate::store::{read_activation, ActivationStack, Manifest, Modality};

/// One decision point with its activations loaded.
#[derive(Clone, Debug)]
pub struct Sample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub label: String,
    pub class: ClassId,
    pub text: ActivationStack,
    pub speech: Option<ActivationStack>,
    pub da_pred_position: usize,
}

impl Sample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            text: &self.text,
            speech: self.speech.as_ref(),
            da_pred_position: self.da_pred_position,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub split: Split,
    /// The split's dialogues, needed for request scoring.
    pub dialogues: Vec<Dialogue>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Loads the activations of every policy sample of `split`.
    ///
    /// The text stack is the record of the target system turn; the speech
    /// stack is the record of the user turn right before it. Speech is read
    /// only when `with_speech` is set, and is then required.
    pub fn assemble(
        dialogues: &[Dialogue],
        split: Split,
        manifest: &Manifest,
        vocab: &LabelVocab,
        with_speech: bool,
    ) -> Result<Self> {
        let dialogues: Vec<Dialogue> = dialogues.iter().filter(|d| d.split == split).cloned().collect();
        let index = manifest.by_turn();
        let load = |dialogue: &str, turn: usize, modality: Modality| -> Result<(ActivationStack, usize)> {
            let record = index.get(&(dialogue, turn, modality)).ok_or_else(|| {
                Error::contract(format!(
                    "no {modality:?} activation for dialogue {dialogue} turn {turn}"
                ))
            })?;
            let stack = read_activation(&manifest.resolve(record))?;
            if stack.header()
                != (crate::store::EmbxHeader {
                    layers: record.layers,
                    frames: record.frames,
                    dim: record.dim,
                    frames_valid: record.frames_valid,
                })
            {
                return Err(Error::validation(format!(
                    "record {} disagrees with its file header",
                    record.id
                )));
            }
            Ok((stack, record.da_pred()))
        };

        let mut samples = Vec::new();
        for s in policy_samples(&dialogues)? {
            let d = &dialogues[s.dialogue];
            let (text, da_pred_position) = load(&d.id, s.turn_index, Modality::Text)?;
            let speech = if with_speech {
                let user = s
                    .position
                    .checked_sub(1)
                    .map(|p| &d.turns[p])
                    .filter(|t| t.speaker == Speaker::User)
                    .ok_or_else(|| {
                        Error::contract(format!(
                            "dialogue {} turn {} has no preceding user turn for speech",
                            d.id, s.turn_index
                        ))
                    })?;
                Some(load(&d.id, user.index, Modality::Speech)?.0)
            } else {
                None
            };
            samples.push(Sample {
                dialogue_id: d.id.clone(),
                turn_index: s.turn_index,
                class: vocab.class_of(&s.label),
                label: s.label,
                text,
                speech,
                da_pred_position,
            });
        }
        Ok(Self {
            split,
            dialogues,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn in_vocab(&self) -> usize {
        self.samples.iter().filter(|s| s.class.known().is_some()).count()
    }

    /// `(dialogue_id, turn_index) → sample position`.
    pub fn positions(&self) -> HashMap<(&str, usize), usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.dialogue_id.as_str(), s.turn_index), i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{act, dialogue, turn};
    use crate::store::{write_activation, ManifestRecord};

    fn record(id: &str, turn: usize, modality: Modality, stack: &ActivationStack) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            dialogue_id: "d1".into(),
            turn_index: turn,
            modality,
            path: format!("{id}.embx").into(),
            layers: stack.layers(),
            frames: stack.frames(),
            dim: stack.dim(),
            frames_valid: stack.frames_valid(),
            da_pred_position: None,
            encoder: None,
        }
    }

    #[test]
    fn pairs_text_with_preceding_user_speech() {
        let dir = tempfile::tempdir().unwrap();
        let d = dialogue(
            "d1",
            Split::Train,
            vec![
                turn(0, Speaker::System, "hi", vec![act("welcomemsg")]),
                turn(1, Speaker::User, "food", vec![act("request(food)")]),
                turn(2, Speaker::System, "thai", vec![act("inform(food)")]),
            ],
        );
        let text = ActivationStack::new(1, 3, 2, 2, vec![1.0; 6]).unwrap();
        let speech = ActivationStack::new(1, 2, 2, 2, vec![2.0; 4]).unwrap();
        write_activation(&text, &dir.path().join("t2.embx")).unwrap();
        write_activation(&speech, &dir.path().join("s1.embx")).unwrap();
        let manifest = Manifest::new(
            vec![
                record("t2", 2, Modality::Text, &text),
                record("s1", 1, Modality::Speech, &speech),
            ],
            dir.path(),
        );
        let vocab = LabelVocab::from_dialogues(std::slice::from_ref(&d)).unwrap();
        let ds = Dataset::assemble(std::slice::from_ref(&d), Split::Train, &manifest, &vocab, true).unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.samples[0];
        assert_eq!(
            (s.turn_index, s.label.as_str(), s.da_pred_position),
            (2, "inform(food)", 1)
        );
        assert_eq!(s.class, ClassId::Known(0));
        assert_eq!(s.speech.as_ref().unwrap().values(), &[2.0; 4]);

        let text_only = Manifest::new(vec![record("t2", 2, Modality::Text, &text)], dir.path());
        assert!(Dataset::assemble(std::slice::from_ref(&d), Split::Train, &text_only, &vocab, false).is_ok());
        assert!(matches!(
            Dataset::assemble(std::slice::from_ref(&d), Split::Train, &text_only, &vocab, true),
            Err(Error::Contract(_))
        ));
        assert!(Dataset::assemble(&[d], Split::Dev, &text_only, &vocab, true)
            .unwrap()
            .is_empty());
    }
}
