use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::store::write_atomically;

/// `100 · (candidate − baseline) / baseline`.
pub fn relative_improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if baseline.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Domain(format!("baseline score {baseline} must be positive")));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// Mean and sample standard deviation of repeated runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

pub fn aggregate_runs(scores: &[f64]) -> Result<RunSummary> {
    if scores.is_empty() {
        return Err(Error::contract("no runs to aggregate"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = if scores.len() == 1 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(RunSummary {
        mean,
        std,
        runs: scores.len(),
    })
}

/// One line of a metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: Split,
    /// Absent when no sample of the split is in the label vocabulary.
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub urs: Option<f64>,
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    write_atomically(path, |f| {
        let mut w = BufWriter::new(f);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// A row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub architecture: String,
    pub embeddings: String,
    pub urs: RunSummary,
    pub accuracy: Option<RunSummary>,
}

/// Plain-text table: architecture × embedding source × `mean ± std`.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let header = ["Architecture", "Embeddings", "URS", "Accuracy", "Runs"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.architecture.clone(),
                r.embeddings.clone(),
                r.urs.to_string(),
                r.accuracy.map_or_else(|| "-".to_string(), |a| a.to_string()),
                r.urs.runs.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = vec![line(&header.map(String::from))];
    out.push(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-"));
    out.extend(body.iter().map(|r| line(r)));
    out.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_improvements() {
        let r = relative_improvement(85.156, 77.575).unwrap();
        assert_eq!(format!("{r:.1}"), "9.8");
        assert!((r - 9.7725).abs() < 1e-3);
        let r = relative_improvement(80.318, 77.575).unwrap();
        assert_eq!(format!("{r:.1}"), "3.5");
        assert_eq!(relative_improvement(42.0, 42.0).unwrap(), 0.0);
        assert!(matches!(relative_improvement(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(relative_improvement(1.0, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn aggregation() {
        let s = aggregate_runs(&[77.575]).unwrap();
        assert_eq!((s.mean, s.std), (77.575, 0.0));
        let s = aggregate_runs(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(s.to_string(), "2.000 ± 1.000");
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn nine_run_statistics() {
        // Reference values from Python's statistics.mean and statistics.stdev.
        let runs = [96.25, 97.5, 95.0, 98.75, 96.25, 97.5, 100.0, 93.75, 97.5];
        let s = aggregate_runs(&runs).unwrap();
        assert!((s.mean - 872.5 / 9.0).abs() < 1e-12);
        let var = runs.iter().map(|r| (r - 872.5 / 9.0f64).powi(2)).sum::<f64>() / 8.0;
        assert!((s.std - var.sqrt()).abs() < 1e-12);
        assert!((s.std - 1.886_538_570_4).abs() < 1e-6);
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![
            MetricRecord {
                run_id: "a4-s1".into(),
                seed: 1,
                epoch: 1,
                split: Split::Train,
                loss: Some(0.5),
                accuracy: 0.75,
                urs: None,
            },
            MetricRecord {
                run_id: "a4-s1".into(),
                seed: 1,
                epoch: 1,
                split: Split::Dev,
                loss: None,
                accuracy: 0.7,
                urs: Some(70.0),
            },
        ];
        write_metrics(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains(r#""split":"train""#));
        assert_eq!(read_metrics(&path).unwrap(), recs);
    }

    #[test]
    fn table_layout() {
        let rows = vec![SummaryRow {
            architecture: "a4".into(),
            embeddings: "text+speech".into(),
            urs: RunSummary {
                mean: 85.156,
                std: 0.5,
                runs: 3,
            },
            accuracy: None,
        }];
        let t = summary_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("85.156 ± 0.500"));
        assert!(lines[0].starts_with("Architecture | Embeddings"));
    }
}
