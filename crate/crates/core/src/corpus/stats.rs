use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Split};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub dialogues: usize,
    pub turns: usize,
}

/// Expected per-split counts to check a corpus against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedStats {
    pub splits: BTreeMap<Split, SplitCounts>,
}

impl ExpectedStats {
    /// Published partition sizes of the DSTC2 restaurant corpus.
    pub fn dstc2() -> Self {
        let c = |dialogues, turns| SplitCounts { dialogues, turns };
        Self {
            splits: BTreeMap::from([
                (Split::Train, c(1612, 10065)),
                (Split::Dev, c(506, 3428)),
                (Split::Test, c(1117, 8773)),
            ]),
        }
    }

    pub fn total(&self) -> SplitCounts {
        sum(self.splits.values())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub splits: BTreeMap<Split, SplitCounts>,
    pub total: SplitCounts,
    /// Human-readable differences against the expected manifest, if one was given.
    pub mismatches: Vec<String>,
}

impl StatsReport {
    pub fn matches(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for split in Split::ALL {
            let c = self.splits[&split];
            writeln!(f, "{split:<6} dialogues {:>6}  turns {:>7}", c.dialogues, c.turns)?;
        }
        write!(
            f,
            "total  dialogues {:>6}  turns {:>7}",
            self.total.dialogues, self.total.turns
        )?;
        for m in &self.mismatches {
            write!(f, "\nmismatch: {m}")?;
        }
        Ok(())
    }
}

fn sum<'a>(it: impl Iterator<Item = &'a SplitCounts>) -> SplitCounts {
    it.fold(SplitCounts::default(), |acc, c| SplitCounts {
        dialogues: acc.dialogues + c.dialogues,
        turns: acc.turns + c.turns,
    })
}

pub fn validate_corpus_stats(dialogues: &[Dialogue], expected: Option<&ExpectedStats>) -> StatsReport {
    let mut splits: BTreeMap<Split, SplitCounts> = Split::ALL.iter().map(|&s| (s, SplitCounts::default())).collect();
    for d in dialogues {
        let c = splits.get_mut(&d.split).expect("all splits present");
        c.dialogues += 1;
        c.turns += d.turns.len();
    }
    let total = sum(splits.values());
    let mut mismatches = Vec::new();
    if let Some(exp) = expected {
        for (split, want) in &exp.splits {
            let got = splits[split];
            if got != *want {
                mismatches.push(format!(
                    "{split}: expected {} dialogues / {} turns, found {} / {}",
                    want.dialogues, want.turns, got.dialogues, got.turns
                ));
            }
        }
    }
    StatsReport {
        splits,
        total,
        mismatches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{act, dialogue, turn};
    use crate::corpus::Speaker;

    #[test]
    fn dstc2_manifest_totals() {
        let t = ExpectedStats::dstc2().total();
        assert_eq!(t.dialogues, 3235);
        assert_eq!(t.turns, 22266);
    }

    #[test]
    fn empty_corpus_is_all_zero() {
        let r = validate_corpus_stats(&[], None);
        assert_eq!(r.total, SplitCounts::default());
        assert!(r.splits.values().all(|c| *c == SplitCounts::default()));
        assert!(r.matches());
        assert!(!validate_corpus_stats(&[], Some(&ExpectedStats::dstc2())).matches());
    }

    #[test]
    fn synthetic_counts() {
        let ds: Vec<_> = (0..10)
            .map(|i| {
                dialogue(
                    &format!("d{i}"),
                    Split::Train,
                    (0..4)
                        .map(|t| {
                            let sp = if t % 2 == 0 { Speaker::System } else { Speaker::User };
                            turn(t, sp, "", vec![act("reqmore")])
                        })
                        .collect(),
                )
            })
            .collect();
        let r = validate_corpus_stats(&ds, None);
        assert_eq!(
            r.total,
            SplitCounts {
                dialogues: 10,
                turns: 40
            }
        );
        assert_eq!(r.splits[&Split::Train].turns, 40);
        assert!(r.to_string().contains("total  dialogues     10"));
    }
}
