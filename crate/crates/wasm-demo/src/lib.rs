//! Browser bindings for the demo page in `www/`.
//!
//! Every export has a plain Rust counterpart returning [`bayesmm::Result`] so it
//! can be tested on the host.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use bayesmm::fusion::{fuse_gaussians, FusionMode};
use bayesmm::gaussian::{CovarianceMode, GaussianModel, SpdMatrix};
use bayesmm::harness::synth::ReferenceSampling;
use bayesmm::harness::{run_episode, synth_generate, Corruption, EpisodeConfig, Method, SynthSpec};
use bayesmm::textual::{map_prototype, MapForm};
use bayesmm::{Error, Result};

fn to_js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn isotropic(mean: &[f64], var: f64) -> Result<GaussianModel> {
    GaussianModel::new(DVector::from_column_slice(mean), SpdMatrix::scaled_identity(2, var, CovarianceMode::Full)?)
}

/// Fused prediction over a `resolution × resolution` grid covering `[-extent, extent]²`.
///
/// Means are flattened `(x, y)` pairs, one per class. Each cell yields
/// `[predicted class, fused confidence, textual weight]`, rows from top to bottom.
pub fn fusion_field(
    textual_means: &[f64],
    geometric_means: &[f64],
    textual_var: f64,
    geometric_var: f64,
    extent: f64,
    resolution: usize,
) -> Result<Vec<f32>> {
    if textual_means.len() != geometric_means.len() || textual_means.len() % 2 != 0 || textual_means.is_empty() {
        return Err(Error::invalid("means must be matching, nonempty lists of (x, y) pairs"));
    }
    if resolution < 2 || !(extent > 0.0) {
        return Err(Error::invalid("resolution must be >= 2 and extent > 0"));
    }
    let t: Vec<GaussianModel> = textual_means.chunks(2).map(|m| isotropic(m, textual_var)).collect::<Result<_>>()?;
    let g: Vec<GaussianModel> = geometric_means.chunks(2).map(|m| isotropic(m, geometric_var)).collect::<Result<_>>()?;
    let step = 2.0 * extent / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution * 3);
    for row in 0..resolution {
        for col in 0..resolution {
            let x = DVector::from_column_slice(&[-extent + col as f64 * step, extent - row as f64 * step]);
            let f = fuse_gaussians(&x, &t, &g, FusionMode::Full)?;
            out.extend([f.predicted_class as f32, f.confidence() as f32, f.textual_weight as f32]);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct Curve {
    step: u64,
    accuracy: Option<f64>,
    mean_kl: Option<f64>,
    mmd: Option<f64>,
}

#[derive(Serialize)]
struct EpisodeSummary {
    zeroshot: Option<f64>,
    cache: Option<f64>,
    bayesmm: Option<f64>,
    mean_textual_weight: Option<f64>,
    trajectory: Vec<Curve>,
}

/// Runs the three methods on one synthetic stream and returns accuracies plus the
/// Bayesian method's KL/MMD trajectory as JSON.
pub fn episode_summary(seed: u64, mean_shift: f64, samples: usize, checkpoint_every: u64) -> Result<String> {
    let spec = SynthSpec { samples, corruption: Corruption::MeanShift(mean_shift), seed, ..SynthSpec::default() };
    let data = synth_generate(&spec)?;
    let reference = data.references.reference_set(ReferenceSampling { moment_samples_per_class: 500, ..Default::default() })?;
    let run = |method: Method, reference| {
        let config = EpisodeConfig { method, checkpoint_every, ..EpisodeConfig::default() };
        run_episode(&data.prompts, &data.stream, &config, reference)
    };
    let bayes = run(Method::Bayesmm, Some(&reference))?;
    let summary = EpisodeSummary {
        zeroshot: run(Method::Zeroshot, None)?.accuracy(),
        cache: run(Method::Cache, None)?.accuracy(),
        bayesmm: bayes.accuracy(),
        mean_textual_weight: bayes.summary.mean_textual_weight,
        trajectory: bayes
            .checkpoints
            .iter()
            .map(|c| Curve { step: c.step_index, accuracy: c.accuracy_so_far, mean_kl: c.mean_kl, mmd: c.mmd })
            .collect(),
    };
    serde_json::to_string(&summary).map_err(|e| Error::invalid(e.to_string()))
}

/// `‖ν‖ / ‖z̄‖` of the MAP prototype for prompt counts `1..=max_prompts`, with an
/// isotropic scatter of variance `scatter_var`.
pub fn shrinkage_curve(beta_inv2: f64, scatter_var: f64, max_prompts: usize, form: MapForm) -> Result<Vec<f64>> {
    let cov = SpdMatrix::from_matrix(DMatrix::identity(2, 2) * scatter_var)?;
    let mean = DVector::from_column_slice(&[1.0, 0.0]);
    (1..=max_prompts).map(|m| Ok(map_prototype(&mean, &cov, m, beta_inv2, form)?.norm())).collect()
}

#[wasm_bindgen(js_name = fusionField)]
pub fn fusion_field_js(
    textual_means: &[f64],
    geometric_means: &[f64],
    textual_var: f64,
    geometric_var: f64,
    extent: f64,
    resolution: usize,
) -> std::result::Result<Vec<f32>, JsError> {
    fusion_field(textual_means, geometric_means, textual_var, geometric_var, extent, resolution).map_err(to_js)
}

#[wasm_bindgen(js_name = episodeSummary)]
pub fn episode_summary_js(seed: u32, mean_shift: f64, samples: usize) -> std::result::Result<String, JsError> {
    episode_summary(seed as u64, mean_shift, samples, 100).map_err(to_js)
}

#[wasm_bindgen(js_name = shrinkageCurve)]
pub fn shrinkage_curve_js(beta_inv2: f64, scatter_var: f64, max_prompts: usize, compact: bool) -> std::result::Result<Vec<f64>, JsError> {
    let form = if compact { MapForm::PaperMain } else { MapForm::Canonical };
    shrinkage_curve(beta_inv2, scatter_var, max_prompts, form).map_err(to_js)
}
