//! Synthetic corrupted-stream benchmark.
//!
//! Class means are unit vectors drawn around a random axis with a tunable
//! concentration (0 gives the uniform sphere), subject to a minimum pairwise
//! angle. Prompt embeddings jitter the class means; test features are drawn
//! from per-class Gaussians whose means are displaced by the corruption.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::ReferenceSet;
use crate::error::{Error, Result};
use crate::gaussian::{regularize_scatter, GaussianModel};
use crate::harness::format::{
    ClassManifest, FeatureStream, PromptFile, StreamRecord, FLAG_NORMALIZED,
};

const MAX_REJECTIONS: usize = 100_000;

/// Distribution shift applied to the test stream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    /// Moves each class mean by `scale` along its own fixed random unit direction.
    MeanShift(f64),
    /// Multiplies the generator covariance by `factor`.
    CovarianceInflate(f64),
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::None => write!(f, "none"),
            Corruption::MeanShift(s) => write!(f, "mean_shift:{s}"),
            Corruption::CovarianceInflate(s) => write!(f, "covariance_inflate:{s}"),
        }
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let value = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::Config(format!("corruption {kind} needs a value, e.g. {kind}:0.4")))?;
            a.parse::<f64>().map_err(|_| Error::Config(format!("bad corruption value {a:?}")))
        };
        match kind {
            "none" if arg.is_none() => Ok(Corruption::None),
            "mean_shift" => Ok(Corruption::MeanShift(value(arg)?)),
            "covariance_inflate" => Ok(Corruption::CovarianceInflate(value(arg)?)),
            _ => Err(Error::Config(format!("unknown corruption {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub prompts_per_class: usize,
    pub samples: usize,
    pub corruption: Corruption,
    pub seed: u64,
    /// Per-coordinate jitter of prompt embeddings around the class mean.
    pub sigma_text: f64,
    /// Per-coordinate standard deviation of test features around their generator mean.
    pub sigma_gen: f64,
    /// Squared cosine between each class mean and the shared axis; 0 draws uniformly on the sphere.
    pub concentration: f64,
    pub min_angle_deg: f64,
    pub normalize: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            dim: 32,
            prompts_per_class: 64,
            samples: 2000,
            corruption: Corruption::None,
            seed: 0,
            sigma_text: 0.15,
            sigma_gen: 0.15,
            concentration: 0.7,
            min_angle_deg: 20.0,
            normalize: true,
        }
    }
}

impl SynthSpec {
    /// The frozen corrupted suite: C = 10, d = 32, 2000 samples, mean shift 0.4.
    pub fn default_suite(seed: u64) -> Self {
        SynthSpec { corruption: Corruption::MeanShift(0.4), seed, ..SynthSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic suite needs at least 2 classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("synthetic suite needs dimension >= 2".into()));
        }
        if self.samples < 1 || self.prompts_per_class < 1 {
            return Err(Error::Config("samples and prompts_per_class must be positive".into()));
        }
        if !(self.sigma_text >= 0.0 && self.sigma_gen >= 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.concentration) {
            return Err(Error::Config(format!("concentration must lie in [0, 1), got {}", self.concentration)));
        }
        if !(0.0..180.0).contains(&self.min_angle_deg) {
            return Err(Error::Config(format!("min_angle_deg must lie in [0, 180), got {}", self.min_angle_deg)));
        }
        match self.corruption {
            Corruption::MeanShift(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::Config(format!("mean shift must be finite and >= 0, got {s}")))
            }
            Corruption::CovarianceInflate(f) if !(f > 0.0 && f.is_finite()) => {
                Err(Error::Config(format!("covariance inflation must be finite and > 0, got {f}")))
            }
            _ => Ok(()),
        }
    }
}

/// Test-feature generator of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGenerator {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

/// The ground-truth generators behind a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGenerators {
    pub seed: u64,
    pub normalize: bool,
    pub classes: Vec<ClassGenerator>,
}

/// Sample counts used to turn generators into a [`ReferenceSet`].
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSampling {
    /// Draws per class for the moment-matched reference Gaussians.
    pub moment_samples_per_class: usize,
    /// Draws per class for the MMD reference and probe sets.
    pub mmd_samples_per_class: usize,
    pub rel_eps: f64,
}

impl Default for ReferenceSampling {
    fn default() -> Self {
        ReferenceSampling { moment_samples_per_class: 2000, mmd_samples_per_class: 20, rel_eps: 1e-3 }
    }
}

impl ReferenceGenerators {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn sample(&self, class: usize, rng: &mut impl Rng) -> DVector<f64> {
        let g = &self.classes[class];
        let x = DVector::from_iterator(g.mean.len(), g.mean.iter().map(|m| m + g.sigma * rng.sample::<f64, _>(StandardNormal)));
        if self.normalize {
            normalized_or_self(x)
        } else {
            x
        }
    }

    /// Moment-matched per-class Gaussians of the generated features, fresh mixture
    /// samples for MMD, and fixed probe noise. Deterministic given the generator seed.
    pub fn reference_set(&self, sampling: ReferenceSampling) -> Result<ReferenceSet> {
        if sampling.moment_samples_per_class < 2 || sampling.mmd_samples_per_class < 1 {
            return Err(Error::Config("reference sampling needs >= 2 moment and >= 1 mmd samples".into()));
        }
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9E37_79B9_7F4A_7C15);
        let mut gaussians = Vec::with_capacity(self.classes.len());
        for c in 0..self.classes.len() {
            let draws: Vec<DVector<f64>> = (0..sampling.moment_samples_per_class).map(|_| self.sample(c, &mut rng)).collect();
            let n = draws.len() as f64;
            let mean = draws.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
            let mut scatter = DMatrix::zeros(d, d);
            for x in &draws {
                let c = x - &mean;
                scatter.ger(1.0, &c, &c, 1.0);
            }
            let cov = regularize_scatter(&(scatter / (n - 1.0)), sampling.rel_eps)?;
            gaussians.push(GaussianModel::new(mean, cov)?);
        }
        let mut samples = Vec::new();
        for c in 0..self.classes.len() {
            for _ in 0..sampling.mmd_samples_per_class {
                samples.push(self.sample(c, &mut rng));
            }
        }
        let probe_noise = (0..self.classes.len())
            .map(|_| {
                (0..sampling.mmd_samples_per_class)
                    .map(|_| DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal))))
                    .collect()
            })
            .collect();
        ReferenceSet::new(gaussians, samples, probe_noise)
    }
}

/// Everything one synthetic run produces.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub prompts: PromptFile,
    pub stream: FeatureStream,
    pub manifest: ClassManifest,
    pub references: ReferenceGenerators,
    /// Uncorrupted class means (unit norm).
    pub class_means: Vec<DVector<f64>>,
}

fn unit_vector(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn normalized_or_self(x: DVector<f64>) -> DVector<f64> {
    let n = x.norm();
    if n > 0.0 {
        x / n
    } else {
        x
    }
}

fn to_f32(v: &DVector<f64>) -> impl Iterator<Item = f32> + '_ {
    v.iter().map(|&x| x as f32)
}

fn draw_class_means(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<DVector<f64>>> {
    let axis = unit_vector(rng, spec.dim);
    let min_cos = spec.min_angle_deg.to_radians().cos();
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(spec.classes);
    let mut rejections = 0;
    while means.len() < spec.classes {
        let v = unit_vector(rng, spec.dim);
        let candidate = if spec.concentration > 0.0 {
            let orth = &v - &axis * axis.dot(&v);
            let n = orth.norm();
            if n < 1e-12 {
                continue;
            }
            &axis * spec.concentration.sqrt() + (orth / n) * (1.0 - spec.concentration).sqrt()
        } else {
            v
        };
        if means.iter().all(|m| m.dot(&candidate) <= min_cos) {
            means.push(candidate);
        } else {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(Error::Config(format!(
                    "could not place {} class means at >= {} degrees apart after {MAX_REJECTIONS} rejections",
                    spec.classes, spec.min_angle_deg
                )));
            }
        }
    }
    Ok(means)
}

/// Generates prompt embeddings, a labeled feature stream and the reference generators.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = draw_class_means(spec, &mut rng)?;
    // shift directions are drawn for every corruption so a zero shift reproduces `none`
    let directions: Vec<DVector<f64>> = (0..spec.classes).map(|_| unit_vector(&mut rng, spec.dim)).collect();

    let d = spec.dim;
    let mut prompt_values = Vec::with_capacity(spec.classes * spec.prompts_per_class * d);
    for m in &means {
        for _ in 0..spec.prompts_per_class {
            let z = DVector::from_iterator(d, m.iter().map(|v| v + spec.sigma_text * rng.sample::<f64, _>(StandardNormal)));
            prompt_values.extend(to_f32(&normalized_or_self(z)));
        }
    }

    let (shift, sigma) = match spec.corruption {
        Corruption::None => (0.0, spec.sigma_gen),
        Corruption::MeanShift(s) => (s, spec.sigma_gen),
        Corruption::CovarianceInflate(f) => (0.0, spec.sigma_gen * f.sqrt()),
    };
    let references = ReferenceGenerators {
        seed: spec.seed,
        normalize: spec.normalize,
        classes: means
            .iter()
            .zip(&directions)
            .map(|(m, u)| ClassGenerator { mean: (m + u * shift).iter().copied().collect(), sigma })
            .collect(),
    };

    let records = (0..spec.samples)
        .map(|_| {
            let label = rng.random_range(0..spec.classes);
            let x = references.sample(label, &mut rng);
            StreamRecord { label: label as i32, feature: to_f32(&x).collect() }
        })
        .collect();

    Ok(SynthOutput {
        prompts: PromptFile {
            dim: d as u32,
            classes: spec.classes as u32,
            prompts_per_class: spec.prompts_per_class as u32,
            values: prompt_values,
        },
        stream: FeatureStream {
            flags: if spec.normalize { FLAG_NORMALIZED } else { 0 },
            dim: d as u32,
            classes: spec.classes as u32,
            records,
        },
        manifest: ClassManifest { classes: (0..spec.classes).map(|c| format!("class_{c:02}")).collect() },
        references,
        class_means: means,
    })
}

/// `<stream path>.reference.json`
pub fn reference_path(stream_path: impl AsRef<Path>) -> PathBuf {
    let mut p = stream_path.as_ref().as_os_str().to_owned();
    p.push(".reference.json");
    PathBuf::from(p)
}

pub fn write_references(path: impl AsRef<Path>, refs: &ReferenceGenerators) -> Result<()> {
    let text = serde_json::to_string_pretty(refs).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_references(path: impl AsRef<Path>) -> Result<ReferenceGenerators> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("bad reference file: {e}")))
}
