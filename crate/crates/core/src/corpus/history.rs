use serde::{Deserialize, Serialize};

use crate::corpus::{build_label, Dialogue, Speaker, DA_PRED, SYSTEM_MARKER, USER_MARKER};
use crate::error::{Error, Result};

pub const DEFAULT_HISTORY_TURNS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    User,
    System,
    DaPred,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub source: SegmentSource,
}

/// Serialized dialogue context for one decision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub segments: Vec<Segment>,
    pub serialized: String,
    pub target_label: String,
}

impl HistoryWindow {
    /// Number of dialogue turns in the window (the decision marker excluded).
    pub fn turn_count(&self) -> usize {
        self.segments.len() - 1
    }
}

/// Serializes up to `max_turns` turns strictly before the system turn whose
/// `index` field is `target_turn_index`, closing with the decision marker.
pub fn serialize_history(
    dialogue: &Dialogue,
    target_turn_index: usize,
    use_asr: bool,
    max_turns: usize,
) -> Result<HistoryWindow> {
    let pos = dialogue.position_of(target_turn_index).ok_or_else(|| {
        Error::contract(format!(
            "dialogue {} has no turn with index {target_turn_index}",
            dialogue.id
        ))
    })?;
    let target = &dialogue.turns[pos];
    if target.speaker != Speaker::System {
        return Err(Error::contract(format!(
            "history target turn {target_turn_index} of {} is a user turn",
            dialogue.id
        )));
    }
    let target_label = build_label(target)?;

    let mut segments: Vec<Segment> = dialogue.turns[pos.saturating_sub(max_turns)..pos]
        .iter()
        .map(|turn| {
            let (marker, source, text) = match turn.speaker {
                Speaker::User => {
                    let text = match (&turn.asr_transcript, use_asr) {
                        (Some(asr), true) => asr,
                        _ => &turn.transcript,
                    };
                    (USER_MARKER, SegmentSource::User, text)
                }
                Speaker::System => (SYSTEM_MARKER, SegmentSource::System, &turn.transcript),
            };
            let mut parts = vec![marker];
            parts.extend(turn.system_markers.iter().map(|m| m.token()));
            if !text.is_empty() {
                parts.push(text);
            }
            Segment {
                text: parts.join(" "),
                source,
            }
        })
        .collect();
    segments.push(Segment {
        text: DA_PRED.into(),
        source: SegmentSource::DaPred,
    });
    let serialized = segments.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
    Ok(HistoryWindow {
        segments,
        serialized,
        target_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{act, dialogue, turn};
    use crate::corpus::{Split, SystemMarker};
    use proptest::prelude::*;

    #[test]
    fn minimal_window() {
        let d = dialogue(
            "d",
            Split::Train,
            vec![
                turn(0, Speaker::User, "hello", vec![]),
                turn(1, Speaker::System, "hi", vec![act("reqmore")]),
            ],
        );
        let w = serialize_history(&d, 1, false, DEFAULT_HISTORY_TURNS).unwrap();
        assert_eq!(w.serialized, "<user> hello <DA_pred>");
        assert_eq!(w.target_label, "reqmore");
        assert_eq!(w.segments.last().unwrap().source, SegmentSource::DaPred);
    }

    #[test]
    fn system_markers_inside_system_segment() {
        let mut sys = turn(1, Speaker::System, "no matches", vec![act("canthelp")]);
        sys.system_markers = vec![SystemMarker::DbNoResult];
        let d = dialogue(
            "d",
            Split::Train,
            vec![
                turn(0, Speaker::User, "korean food", vec![act("inform(food)")]),
                sys,
                turn(2, Speaker::User, "ok", vec![]),
                turn(3, Speaker::System, "bye", vec![act("bye")]),
            ],
        );
        let w = serialize_history(&d, 3, false, DEFAULT_HISTORY_TURNS).unwrap();
        assert_eq!(w.segments[1].text, "<system> <DB_no_result> no matches");
        assert_eq!(
            w.serialized,
            "<user> korean food <system> <DB_no_result> no matches <user> ok <DA_pred>"
        );
    }

    #[test]
    fn asr_transcript_replaces_user_text_only_when_requested() {
        let mut u = turn(0, Speaker::User, "cheap food", vec![]);
        u.asr_transcript = Some("sheep food".into());
        let d = dialogue(
            "d",
            Split::Test,
            vec![u, turn(1, Speaker::System, "ok", vec![act("reqmore")])],
        );
        assert_eq!(
            serialize_history(&d, 1, true, 9).unwrap().serialized,
            "<user> sheep food <DA_pred>"
        );
        assert_eq!(
            serialize_history(&d, 1, false, 9).unwrap().serialized,
            "<user> cheap food <DA_pred>"
        );
    }

    #[test]
    fn window_keeps_last_nine_turns() {
        let mut turns: Vec<_> = (0..12)
            .map(|i| {
                let sp = if i % 2 == 0 { Speaker::System } else { Speaker::User };
                turn(i, sp, &format!("t{i}"), vec![act("reqmore")])
            })
            .collect();
        turns.push(turn(12, Speaker::System, "target", vec![act("bye")]));
        let d = dialogue("d", Split::Train, turns);
        d.validate().unwrap();
        let w = serialize_history(&d, 12, false, DEFAULT_HISTORY_TURNS).unwrap();
        assert_eq!(w.turn_count(), 9);
        assert!(w.serialized.starts_with("<user> t3 "), "{}", w.serialized);
        assert!(!w.serialized.contains("t2 "));
    }

    #[test]
    fn user_target_is_a_contract_error() {
        let d = dialogue("d", Split::Train, vec![turn(0, Speaker::User, "x", vec![])]);
        assert!(matches!(serialize_history(&d, 0, false, 9), Err(Error::Contract(_))));
        assert!(matches!(serialize_history(&d, 5, false, 9), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn decision_marker_once_at_end(n_before in 0usize..20, max_turns in 1usize..12) {
            let mut turns = Vec::new();
            for i in 0..n_before {
                let sp = if (n_before - i) % 2 == 1 { Speaker::User } else { Speaker::System };
                turns.push(turn(i, sp, "w", vec![act("reqmore")]));
            }
            turns.push(turn(n_before, Speaker::System, "target", vec![act("bye")]));
            let d = dialogue("d", Split::Train, turns);
            let w = serialize_history(&d, n_before, false, max_turns).unwrap();
            let default = serialize_history(&d, n_before, false, DEFAULT_HISTORY_TURNS).unwrap();
            prop_assert!(default.turn_count() <= 9);
            prop_assert_eq!(w.turn_count(), n_before.min(max_turns));
            prop_assert_eq!(w.serialized.matches(DA_PRED).count(), 1);
            prop_assert!(w.serialized.ends_with(DA_PRED));
        }
    }
}
