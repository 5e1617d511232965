//! One pass over a labeled stream: predict each record, then adapt.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{cache_score, softmax, zero_shot_logits, CacheBank};
use crate::diagnostics::{checkpoint, ReferenceSet, TrajectoryCheckpoint};
use crate::error::{Error, Result};
use crate::fusion::{argmax, fuse_gaussians, FusionMode};
use crate::gaussian::GaussianModel;
use crate::geometric::{init_states, GeometricClassState, UpdateMode};
use crate::harness::config::{EpisodeConfig, Method};
use crate::harness::format::{FeatureStream, PromptFile};
use crate::harness::report::{summarize, EpisodeReport, StepRecord, StreamInfo, REPORT_SCHEMA_VERSION};
use crate::textual::{build_textual_models, TextualClassModel};

/// A report plus the adapted state it ended with.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub report: EpisodeReport,
    pub textual: Vec<TextualClassModel>,
    /// Final geometric states (Bayesian method only).
    pub geometric: Option<Vec<GeometricClassState>>,
    /// Final caches (cache method only).
    pub cache: Option<CacheBank>,
}

/// Checks that prompts, stream and configuration agree before any record is touched.
pub fn check_inputs(prompts: &PromptFile, stream: &FeatureStream, config: &EpisodeConfig) -> Result<()> {
    config.validate()?;
    if prompts.dim != stream.dim {
        return Err(Error::Config(format!("prompt dimension {} but stream dimension {}", prompts.dim, stream.dim)));
    }
    if prompts.classes != stream.classes {
        return Err(Error::Config(format!("prompts cover {} classes but stream declares {}", prompts.classes, stream.classes)));
    }
    if prompts.classes < 1 || prompts.dim < 1 {
        return Err(Error::Config("empty class or feature space".into()));
    }
    Ok(())
}

fn checkpoint_due(step: u64, every: u64, total: u64) -> bool {
    step == 0 || step == total || (every > 0 && step % every == 0)
}

pub fn run_episode(
    prompts: &PromptFile,
    stream: &FeatureStream,
    config: &EpisodeConfig,
    reference: Option<&ReferenceSet>,
) -> Result<EpisodeReport> {
    run_episode_detailed(prompts, stream, config, reference).map(|o| o.report)
}

pub fn run_episode_detailed(
    prompts: &PromptFile,
    stream: &FeatureStream,
    config: &EpisodeConfig,
    reference: Option<&ReferenceSet>,
) -> Result<EpisodeOutcome> {
    check_inputs(prompts, stream, config)?;
    if let Some(r) = reference {
        if r.gaussians.len() != stream.classes as usize {
            return Err(Error::Config("reference generators disagree with the stream class count".into()));
        }
        Error::check_dim(stream.dim as usize, r.gaussians[0].dim())?;
    }
    let classes = stream.classes as usize;
    let textual = build_textual_models(&prompts.to_prompt_sets()?, &config.textual())?;
    let textual_gaussians: Vec<GaussianModel> = textual.iter().map(TextualClassModel::gaussian).collect();
    let prototypes: Vec<DVector<f64>> = textual.iter().map(|t| t.empirical_mean.clone()).collect();

    let geo_config = config.geometric();
    let cache_config = config.cache();
    let mut states = match config.method {
        Method::Bayesmm => Some(init_states(&textual, &geo_config)?),
        _ => None,
    };
    let mut geo_gaussians: Vec<GaussianModel> = states
        .iter()
        .flatten()
        .map(|s| s.predictive_gaussian(geo_config.predictive_mode))
        .collect();
    let mut cache = match config.method {
        Method::Cache => Some(CacheBank::new(classes, config.cache_capacity)),
        _ => None,
    };

    let total = stream.records.len() as u64;
    let mut steps = Vec::with_capacity(stream.records.len());
    let mut checkpoints: Vec<TrajectoryCheckpoint> = Vec::new();
    let mut recent: VecDeque<DVector<f64>> = VecDeque::with_capacity(config.mmd_window);
    let mut correct = 0usize;
    let mut labeled = 0usize;
    let mut updates = 0u64;

    let mut take_checkpoint = |step: u64,
                               geo: &[GaussianModel],
                               recent: &VecDeque<DVector<f64>>,
                               correct: usize,
                               labeled: usize|
     -> Result<()> {
        let estimated = if config.method == Method::Bayesmm { geo } else { &textual_gaussians[..] };
        let window: Vec<DVector<f64>> = recent.iter().cloned().collect();
        let acc = (labeled > 0).then(|| correct as f64 / labeled as f64);
        checkpoints.push(checkpoint(step, estimated, reference, &window, acc)?);
        Ok(())
    };
    take_checkpoint(0, &geo_gaussians, &recent, 0, 0)?;

    for (t, record) in stream.records.iter().enumerate() {
        let x = record.feature_f64();
        let label = record.label();
        let step = match config.method {
            Method::Zeroshot => {
                let p = softmax(&zero_shot_logits(&x, &prototypes)?);
                let predicted = argmax(&p);
                StepRecord { step: t as u64, label, predicted, confidence: p[predicted], textual_weight: None, geometric_weight: None }
            }
            Method::Cache => {
                let bank = cache.as_mut().expect("cache method owns a cache bank");
                let scores = cache_score(&x, &prototypes, bank.caches(), &cache_config)?;
                let p = softmax(&scores);
                let predicted = argmax(&scores);
                let zs = softmax(&zero_shot_logits(&x, &prototypes)?);
                if bank.update(&x, &zs, &cache_config)?.is_some() {
                    updates += 1;
                }
                StepRecord { step: t as u64, label, predicted, confidence: p[predicted], textual_weight: None, geometric_weight: None }
            }
            Method::Bayesmm => {
                let states = states.as_mut().expect("bayesian method owns geometric states");
                let fused = fuse_gaussians(&x, &textual_gaussians, &geo_gaussians, config.fusion)?;
                let predicted = fused.predicted_class;
                let confidence = fused.confidence();
                match geo_config.update_mode {
                    UpdateMode::Hard => {
                        if confidence >= geo_config.tau {
                            states[predicted].update(&x)?;
                            geo_gaussians[predicted] = states[predicted].predictive_gaussian(geo_config.predictive_mode);
                            updates += 1;
                        }
                    }
                    UpdateMode::Soft => {
                        for (c, &w) in fused.fused_posterior.iter().enumerate() {
                            if w > 0.0 {
                                states[c].update_weighted(&x, w.min(1.0))?;
                                geo_gaussians[c] = states[c].predictive_gaussian(geo_config.predictive_mode);
                                updates += 1;
                            }
                        }
                    }
                }
                let weights = config.fusion == FusionMode::Full;
                StepRecord {
                    step: t as u64,
                    label,
                    predicted,
                    confidence,
                    textual_weight: weights.then_some(fused.textual_weight),
                    geometric_weight: weights.then_some(fused.geometric_weight),
                }
            }
        };
        if let Some(y) = step.label {
            labeled += 1;
            if y == step.predicted {
                correct += 1;
            }
        }
        steps.push(step);

        if config.mmd_window > 0 {
            if recent.len() == config.mmd_window {
                recent.pop_front();
            }
            recent.push_back(x);
        }
        let done = t as u64 + 1;
        if checkpoint_due(done, config.checkpoint_every, total) {
            take_checkpoint(done, &geo_gaussians, &recent, correct, labeled)?;
        }
    }

    let report = EpisodeReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: config.method,
        config: config.clone(),
        stream: StreamInfo { dim: stream.dim as usize, classes, samples: stream.records.len(), labeled },
        summary: summarize(&steps, classes, updates),
        checkpoints,
        steps,
    };
    Ok(EpisodeOutcome { report, textual, geometric: states, cache })
}

/// Accuracy of each method on one stream, plus differences from zero-shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub accuracy: Option<f64>,
    /// Accuracy gain over zero-shot in percentage points.
    pub delta_points: Option<f64>,
}

impl Comparison {
    pub fn accuracy(&self, method: Method) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).and_then(|r| r.accuracy)
    }
}

/// Runs zero-shot, cache and Bayesian fusion concurrently on the same stream.
pub fn compare_methods(
    prompts: &PromptFile,
    stream: &FeatureStream,
    base: &EpisodeConfig,
    reference: Option<&ReferenceSet>,
) -> Result<(Comparison, Vec<EpisodeReport>)> {
    let reports: Vec<EpisodeReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = Method::ALL
            .into_iter()
            .map(|method| {
                let config = EpisodeConfig { method, ..base.clone() };
                scope.spawn(move || run_episode(prompts, stream, &config, reference))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("episode thread panicked")).collect::<Result<_>>()
    })?;
    let zs = reports[0].accuracy();
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.method,
            accuracy: r.accuracy(),
            delta_points: r.accuracy().zip(zs).map(|(a, z)| 100.0 * (a - z)),
        })
        .collect();
    Ok((Comparison { rows }, reports))
}
