//! JSON episode report. Field order is fixed by the struct definitions, so
//! identical runs serialize to identical bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::TrajectoryCheckpoint;
use crate::error::{Error, Result};
use crate::harness::config::{EpisodeConfig, Method};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based position in the stream.
    pub step: u64,
    /// `None` for unlabeled records.
    pub label: Option<usize>,
    pub predicted: usize,
    /// Largest entry of the method's class posterior.
    pub confidence: f64,
    /// Modality weights; only the Bayesian method has them.
    pub textual_weight: Option<f64>,
    pub geometric_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub dim: usize,
    pub classes: usize,
    pub samples: usize,
    pub labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Correct over labeled; `None` when nothing is labeled.
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub labeled: usize,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_textual_weight: Option<f64>,
    pub mean_geometric_weight: Option<f64>,
    /// Geometric state updates (Bayesian method) or cache insertions (cache method).
    pub adaptation_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub schema_version: u32,
    pub method: Method,
    pub config: EpisodeConfig,
    pub stream: StreamInfo,
    pub summary: Summary,
    pub checkpoints: Vec<TrajectoryCheckpoint>,
    pub steps: Vec<StepRecord>,
}

impl EpisodeReport {
    pub fn accuracy(&self) -> Option<f64> {
        self.summary.accuracy
    }

    /// Checkpoint taken after exactly `step` samples.
    pub fn checkpoint_at(&self, step: u64) -> Option<&TrajectoryCheckpoint> {
        self.checkpoints.iter().find(|c| c.step_index == step)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map(|s| s + "\n").map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EpisodeReport =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad report: {e}")))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported report schema {}", report.schema_version)));
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// Accuracy summary recomputed from per-step records.
pub fn summarize(steps: &[StepRecord], classes: usize, adaptation_updates: u64) -> Summary {
    let mut hits = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for s in steps {
        if let Some(y) = s.label {
            seen[y] += 1;
            if s.predicted == y {
                hits[y] += 1;
            }
        }
    }
    let correct: usize = hits.iter().sum();
    let labeled: usize = seen.iter().sum();
    let mean = |f: fn(&StepRecord) -> Option<f64>| {
        let vals: Vec<f64> = steps.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Summary {
        accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        correct,
        labeled,
        per_class_accuracy: hits
            .iter()
            .zip(&seen)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect(),
        mean_textual_weight: mean(|s| s.textual_weight),
        mean_geometric_weight: mean(|s| s.geometric_weight),
        adaptation_updates,
    }
}
