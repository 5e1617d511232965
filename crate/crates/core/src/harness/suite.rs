//! The default corrupted synthetic suite evaluated over several seeds.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::FusionMode;
use crate::harness::config::{EpisodeConfig, Method};
use crate::harness::episode::run_episode;
use crate::harness::synth::{synth_generate, ReferenceSampling, SynthSpec};

/// Step at which trajectory diagnostics are compared against the final checkpoint.
pub const EARLY_CHECKPOINT: u64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub zeroshot: f64,
    pub cache: f64,
    pub bayesmm: f64,
    pub textual_only: f64,
    pub geometric_only: f64,
    pub kl_early: f64,
    pub kl_final: f64,
    pub mmd_early: f64,
    pub mmd_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub seeds: Vec<SeedResult>,
    pub mean_zeroshot: f64,
    pub mean_cache: f64,
    pub mean_bayesmm: f64,
    pub mean_textual_only: f64,
    pub mean_geometric_only: f64,
    /// Seeds whose mean class KL fell between the early and final checkpoints.
    pub kl_decreased: usize,
    /// Seeds whose MMD did not rise between the early and final checkpoints.
    pub mmd_not_increased: usize,
}

/// Generates one suite instance and runs every method and ablation on it.
pub fn evaluate_seed(spec: &SynthSpec, base: &EpisodeConfig) -> Result<SeedResult> {
    let data = synth_generate(spec)?;
    let reference = data.references.reference_set(ReferenceSampling { rel_eps: base.rel_eps, ..ReferenceSampling::default() })?;
    let run = |method: Method, fusion: FusionMode, with_reference: bool| {
        let config = EpisodeConfig { method, fusion, ..base.clone() };
        run_episode(&data.prompts, &data.stream, &config, with_reference.then_some(&reference))
    };
    let acc = |r: &crate::harness::report::EpisodeReport| r.accuracy().unwrap_or(0.0);

    let full = run(Method::Bayesmm, FusionMode::Full, true)?;
    let early = full.checkpoint_at(EARLY_CHECKPOINT).or(full.checkpoints.first()).expect("initial checkpoint always exists");
    let last = full.checkpoints.last().expect("initial checkpoint always exists");
    Ok(SeedResult {
        seed: spec.seed,
        zeroshot: acc(&run(Method::Zeroshot, FusionMode::Full, false)?),
        cache: acc(&run(Method::Cache, FusionMode::Full, false)?),
        bayesmm: acc(&full),
        textual_only: acc(&run(Method::Bayesmm, FusionMode::TextualOnly, false)?),
        geometric_only: acc(&run(Method::Bayesmm, FusionMode::GeometricOnly, false)?),
        kl_early: early.mean_kl.unwrap_or(f64::NAN),
        kl_final: last.mean_kl.unwrap_or(f64::NAN),
        mmd_early: early.mmd.unwrap_or(f64::NAN),
        mmd_final: last.mmd.unwrap_or(f64::NAN),
    })
}

/// Runs the suite for every seed, one thread per seed.
pub fn evaluate_suite(seeds: &[u64], make_spec: impl Fn(u64) -> SynthSpec + Sync, base: &EpisodeConfig) -> Result<SuiteSummary> {
    let results: Vec<SeedResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let spec = make_spec(seed);
                scope.spawn(move || evaluate_seed(&spec, base))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("suite thread panicked")).collect::<Result<_>>()
    })?;
    let n = results.len().max(1) as f64;
    let mean = |f: fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(SuiteSummary {
        mean_zeroshot: mean(|r| r.zeroshot),
        mean_cache: mean(|r| r.cache),
        mean_bayesmm: mean(|r| r.bayesmm),
        mean_textual_only: mean(|r| r.textual_only),
        mean_geometric_only: mean(|r| r.geometric_only),
        kl_decreased: results.iter().filter(|r| r.kl_final < r.kl_early).count(),
        mmd_not_increased: results.iter().filter(|r| r.mmd_final <= r.mmd_early).count(),
        seeds: results,
    })
}

/// The frozen default suite: [`SynthSpec::default_suite`] with default episode settings.
pub fn evaluate_default_suite(seeds: &[u64]) -> Result<SuiteSummary> {
    evaluate_suite(seeds, SynthSpec::default_suite, &EpisodeConfig::default())
}
