//! User Request Score: the share of user requests answered by the
//! predicted act of the following system turn.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_label, policy_samples, Dialogue};
use crate::error::{Error, Result};

pub fn default_answer_acts() -> BTreeSet<String> {
    ["inform", "offer"].into_iter().map(String::from).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrsReport {
    pub requests_total: usize,
    pub requests_answered: usize,
    /// Percentage; `None` when there were no requests.
    pub score: Option<f64>,
}

impl UrsReport {
    pub fn new(requests_total: usize, requests_answered: usize) -> Self {
        let score = (requests_total > 0).then(|| 100.0 * requests_answered as f64 / requests_total as f64);
        Self {
            requests_total,
            requests_answered,
            score,
        }
    }
}

impl fmt::Display for UrsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.score {
            Some(s) => write!(f, "{s:.3} ({}/{})", self.requests_answered, self.requests_total),
            None => f.write_str("n/a"),
        }
    }
}

/// Scores `predictions`, keyed by `(dialogue_id, system turn index)`, over
/// every policy sample of `dialogues`. A request for slot `s` is answered
/// when the predicted label has an act `a(s)` with `a` in `answer_acts`.
pub fn urs(
    dialogues: &[Dialogue],
    predictions: &HashMap<(String, usize), String>,
    answer_acts: &BTreeSet<String>,
) -> Result<UrsReport> {
    let (mut total, mut answered) = (0, 0);
    for s in policy_samples(dialogues)? {
        let d = &dialogues[s.dialogue];
        let requests = d.requests_before(s.position);
        if requests.is_empty() {
            continue;
        }
        let predicted = predictions
            .get(&(d.id.clone(), s.turn_index))
            .ok_or_else(|| Error::contract(format!("no prediction for dialogue {} turn {}", d.id, s.turn_index)))?;
        let acts = parse_label(predicted)?;
        for slot in &requests {
            total += 1;
            if acts
                .iter()
                .any(|a| answer_acts.contains(&a.act_type) && a.slot.as_deref() == Some(slot))
            {
                answered += 1;
            }
        }
    }
    Ok(UrsReport::new(total, answered))
}
