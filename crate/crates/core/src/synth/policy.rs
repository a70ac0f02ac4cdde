use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SLOT_NAMES: [&str; 8] = [
    "food",
    "area",
    "pricerange",
    "name",
    "phone",
    "addr",
    "postcode",
    "signature",
];

pub fn slot_name(slot: usize) -> String {
    SLOT_NAMES
        .get(slot)
        .map_or_else(|| format!("slot{slot}"), |s| s.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub text_cue: usize,
    pub speech_cue: usize,
    pub slot: String,
    pub label: String,
}

/// The planted decision rule: `slot = text_cue · speech_cues + speech_cue`,
/// answered with `inform(slot)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub text_cues: usize,
    pub speech_cues: usize,
    pub entries: Vec<PolicyEntry>,
}

impl PolicyTable {
    pub fn new(text_cues: usize, speech_cues: usize) -> Self {
        let entries = (0..text_cues)
            .flat_map(|t| (0..speech_cues).map(move |s| (t, s)))
            .map(|(t, s)| {
                let slot = slot_name(t * speech_cues + s);
                PolicyEntry {
                    text_cue: t,
                    speech_cue: s,
                    label: format!("inform({slot})"),
                    slot,
                }
            })
            .collect();
        Self {
            text_cues,
            speech_cues,
            entries,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.text_cues * self.speech_cues
    }

    pub fn entry(&self, text_cue: usize, speech_cue: usize) -> Result<&PolicyEntry> {
        if text_cue >= self.text_cues || speech_cue >= self.speech_cues {
            return Err(Error::Index {
                index: text_cue * self.speech_cues + speech_cue,
                len: self.n_slots(),
            });
        }
        Ok(&self.entries[text_cue * self.speech_cues + speech_cue])
    }

    /// Every cue pair has exactly one entry.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_slots()];
        for e in &self.entries {
            if e.text_cue >= self.text_cues || e.speech_cue >= self.speech_cues {
                return Err(Error::validation(format!(
                    "cue pair ({}, {}) out of range",
                    e.text_cue, e.speech_cue
                )));
            }
            let k = e.text_cue * self.speech_cues + e.speech_cue;
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::validation(format!(
                    "cue pair ({}, {}) listed twice",
                    e.text_cue, e.speech_cue
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::validation("policy table does not cover every cue pair"));
        }
        Ok(())
    }

    /// Best achievable accuracy from the text cue alone, with uniform slots
    /// and noise-free cues: for each text cue, the share of its most common
    /// label.
    pub fn text_only_bayes_accuracy(&self) -> f64 {
        let mut hits = 0;
        for t in 0..self.text_cues {
            let mut counts = std::collections::HashMap::new();
            for e in self.entries.iter().filter(|e| e.text_cue == t) {
                *counts.entry(&e.label).or_insert(0usize) += 1;
            }
            hits += counts.values().max().copied().unwrap_or(0);
        }
        hits as f64 / self.entries.len() as f64
    }

    /// With both cues visible the label is determined, so this is 1 for any
    /// consistent table.
    pub fn joint_bayes_accuracy(&self) -> f64 {
        let mut labels = std::collections::HashMap::new();
        for e in &self.entries {
            labels
                .entry((e.text_cue, e.speech_cue))
                .or_insert_with(Vec::new)
                .push(&e.label);
        }
        let hits: usize = labels.values().map(|ls| ls.len().min(1)).sum();
        hits as f64 / self.entries.len() as f64
    }
}
