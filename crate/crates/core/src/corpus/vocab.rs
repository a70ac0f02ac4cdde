use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{policy_samples, Dialogue, Split};
use crate::error::{Error, Result};

/// Label count of the DSTC2 train partition once welcome turns are dropped.
pub const DSTC2_LABEL_COUNT: usize = 60;

/// Class of a sample under a train-split vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassId {
    Known(usize),
    /// Label seen only in dev/test; never predicted.
    OutOfVocab,
}

impl ClassId {
    pub fn known(self) -> Option<usize> {
        match self {
            ClassId::Known(i) => Some(i),
            ClassId::OutOfVocab => None,
        }
    }
}

/// Bijection between canonical labels and class indices, built from the
/// train split. Indices follow lexicographic label order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<usize>,
}

impl LabelVocab {
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Result<Self> {
        let train: Vec<Dialogue> = dialogues.iter().filter(|d| d.split == Split::Train).cloned().collect();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in policy_samples(&train)? {
            *counts.entry(s.label).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::contract("train split has no policy samples"));
        }
        let (labels, counts): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        Ok(Self::with_counts(labels, counts))
    }

    /// Rebuilds a vocabulary from a stored label list (e.g. a checkpoint).
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let n = labels.len();
        let v = Self::with_counts(labels, vec![0; n]);
        if v.index.len() != n {
            return Err(Error::validation("duplicate labels in vocabulary"));
        }
        Ok(v)
    }

    fn with_counts(labels: Vec<String>, counts: Vec<usize>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index, counts }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_of(&self, label: &str) -> ClassId {
        self.index
            .get(label)
            .map_or(ClassId::OutOfVocab, |&i| ClassId::Known(i))
    }

    pub fn label_of(&self, class: usize) -> Option<&str> {
        self.labels.get(class).map(String::as_str)
    }

    /// Train-split sample count per class (zeros for a vocabulary loaded from labels).
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Fraction of train samples covered by the `k` most frequent labels.
    pub fn top_k_share(&self, k: usize) -> f64 {
        let total: usize = self.counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let mut sorted = self.counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.iter().take(k).sum::<usize>() as f64 / total as f64
    }

    /// `N / (n_classes * count_c)` per class.
    pub fn balanced_class_weights(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        let n = self.len() as f64;
        self.counts
            .iter()
            .map(|&c| if c == 0 { 1.0 } else { total as f64 / (n * c as f64) })
            .collect()
    }
}
