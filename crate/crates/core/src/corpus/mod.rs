//! Dialogue data model and the line-delimited JSON corpus format.
//!
//! One dialogue per line:
//!
//! ```json
//! {"id":"d1","split":"train","turns":[
//!   {"index":0,"speaker":"system","transcript":"hello","acts":[{"type":"welcomemsg"}],"system_markers":[]},
//!   {"index":1,"speaker":"user","transcript":"cheap food","acts":[{"type":"inform","slot":"pricerange","value":"cheap"}],"system_markers":[],"speech_ref":"d1-t1-speech"}
//! ]}
//! ```

pub mod dstc2;
mod history;
mod label;
mod stats;
mod vocab;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use history::{serialize_history, HistoryWindow, Segment, SegmentSource, DEFAULT_HISTORY_TURNS};
pub use label::{build_label, parse_label, WELCOME_LABEL};
pub use stats::{validate_corpus_stats, ExpectedStats, SplitCounts, StatsReport};
pub use vocab::{ClassId, LabelVocab, DSTC2_LABEL_COUNT};

/// Decision marker closing every serialized history.
pub const DA_PRED: &str = "<DA_pred>";
pub const USER_MARKER: &str = "<user>";
pub const SYSTEM_MARKER: &str = "<system>";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueAct {
    #[serde(rename = "type")]
    pub act_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl DialogueAct {
    pub fn new(act_type: impl Into<String>, slot: Option<&str>) -> Self {
        Self {
            act_type: act_type.into(),
            slot: slot.map(str::to_string),
            value: None,
        }
    }

    pub fn with_value(mut self, value: impl Into<String>) -> Self {
        self.value = Some(value.into());
        self
    }
}

/// Renders as `type` or `type(slot)`; values are not part of the label.
impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.slot {
            Some(slot) => write!(f, "{}({})", self.act_type, slot),
            None => f.write_str(&self.act_type),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemMarker {
    #[serde(rename = "API_call")]
    ApiCall,
    #[serde(rename = "DB_result")]
    DbResult,
    #[serde(rename = "DB_no_result")]
    DbNoResult,
}

impl SystemMarker {
    pub fn token(self) -> &'static str {
        match self {
            SystemMarker::ApiCall => "<API_call>",
            SystemMarker::DbResult => "<DB_result>",
            SystemMarker::DbNoResult => "<DB_no_result>",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_transcript: Option<String>,
    #[serde(default)]
    pub acts: Vec<DialogueAct>,
    #[serde(default)]
    pub system_markers: Vec<SystemMarker>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_ref: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub split: Split,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Checks the structural invariants of a preprocessed dialogue.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(format!("dialogue {}: {msg}", self.id)));
        if !self.turns.iter().any(|t| t.speaker == Speaker::System) {
            return fail("no system turn".into());
        }
        for pair in self.turns.windows(2) {
            if pair[1].index <= pair[0].index {
                return fail(format!("turn index {} not increasing", pair[1].index));
            }
            if pair[1].speaker == pair[0].speaker {
                return fail(format!("speakers do not alternate at turn {}", pair[1].index));
            }
        }
        for t in &self.turns {
            if t.speaker == Speaker::User && !t.system_markers.is_empty() {
                return fail(format!("user turn {} carries system markers", t.index));
            }
            if let Some(a) = t.acts.iter().find(|a| a.act_type.is_empty()) {
                return fail(format!("empty act type in turn {} ({a:?})", t.index));
            }
        }
        Ok(())
    }

    /// Position in `turns` of the turn with the given `index` field.
    pub fn position_of(&self, turn_index: usize) -> Option<usize> {
        self.turns.iter().position(|t| t.index == turn_index)
    }

    /// Slots requested in the user turn immediately preceding turn position `pos`.
    pub fn requests_before(&self, pos: usize) -> Vec<String> {
        pos.checked_sub(1)
            .map(|p| &self.turns[p])
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| {
                t.acts
                    .iter()
                    .filter(|a| a.act_type == "request")
                    .filter_map(|a| a.slot.clone())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// A classification target: one system turn of one dialogue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub dialogue: usize,
    pub position: usize,
    pub turn_index: usize,
    pub label: String,
}

/// Every system turn of every dialogue as a candidate sample, in corpus order.
pub fn classification_samples(dialogues: &[Dialogue]) -> Result<Vec<SampleRef>> {
    let mut out = Vec::new();
    for (di, d) in dialogues.iter().enumerate() {
        for (pos, t) in d.turns.iter().enumerate() {
            if t.speaker == Speaker::System {
                out.push(SampleRef {
                    dialogue: di,
                    position: pos,
                    turn_index: t.index,
                    label: build_label(t)?,
                });
            }
        }
    }
    Ok(out)
}

/// Removes samples whose target label is the welcome message. The turns stay
/// in the dialogues, so they still appear in later history windows.
pub fn drop_welcome_samples(samples: Vec<SampleRef>) -> Vec<SampleRef> {
    samples.into_iter().filter(|s| s.label != WELCOME_LABEL).collect()
}

/// Samples used for training and evaluation.
pub fn policy_samples(dialogues: &[Dialogue]) -> Result<Vec<SampleRef>> {
    Ok(drop_welcome_samples(classification_samples(dialogues)?))
}

pub fn load_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

pub fn save_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    crate::store::write_atomically(path, |w| {
        let mut w = BufWriter::new(w);
        for d in dialogues {
            serde_json::to_writer(&mut w, d).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })
}

pub fn split_of(dialogues: &[Dialogue], split: Split) -> Vec<Dialogue> {
    dialogues.iter().filter(|d| d.split == split).cloned().collect()
}
