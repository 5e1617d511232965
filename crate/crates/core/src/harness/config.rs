use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{CacheConfig, CacheSimilarity};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::gaussian::CovarianceMode;
use crate::geometric::{GeometricConfig, InitCovMode, PredictiveMode, UpdateMode};
use crate::textual::{MapForm, TextualConfig, TextualCovariance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Zeroshot,
    Cache,
    #[default]
    Bayesmm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Zeroshot, Method::Cache, Method::Bayesmm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Zeroshot => "zeroshot",
            Method::Cache => "cache",
            Method::Bayesmm => "bayesmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected zeroshot, cache or bayesmm)")))
    }
}

/// Everything that controls one pass over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub method: Method,
    pub fusion: FusionMode,
    /// Prior variance of the geometric class means.
    pub alpha2: f64,
    /// Prior variance of the textual prototypes; `inf` gives a flat prior.
    #[serde(with = "maybe_infinite")]
    pub beta2: f64,
    pub rel_eps: f64,
    /// Minimum fused confidence for a hard geometric update.
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Cache capacity per class.
    pub cache_capacity: usize,
    pub insert_threshold: f64,
    pub cache_similarity: CacheSimilarity,
    pub map_form: MapForm,
    pub init_cov_mode: InitCovMode,
    pub predictive_mode: PredictiveMode,
    pub update_mode: UpdateMode,
    pub covariance_mode: CovarianceMode,
    pub textual_covariance: TextualCovariance,
    /// Steps between diagnostic checkpoints; 0 keeps only the first and last.
    pub checkpoint_every: u64,
    /// Recent observations compared against the reference in `window_mmd`.
    pub mmd_window: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        let geo = GeometricConfig::default();
        let text = TextualConfig::default();
        let cache = CacheConfig::default();
        EpisodeConfig {
            method: Method::Bayesmm,
            fusion: FusionMode::Full,
            alpha2: geo.alpha2,
            beta2: 1.0 / text.beta_inv2,
            rel_eps: text.rel_eps,
            tau: geo.tau,
            lambda: cache.lambda,
            gamma: cache.gamma,
            cache_capacity: cache.capacity,
            insert_threshold: cache.insert_threshold,
            cache_similarity: cache.similarity,
            map_form: text.map_form,
            init_cov_mode: geo.init_cov_mode,
            predictive_mode: geo.predictive_mode,
            update_mode: geo.update_mode,
            covariance_mode: text.covariance_mode,
            textual_covariance: text.class_covariance,
            checkpoint_every: 500,
            mmd_window: 200,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn for_method(method: Method) -> Self {
        EpisodeConfig { method, ..EpisodeConfig::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: EpisodeConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn textual(&self) -> TextualConfig {
        TextualConfig {
            beta_inv2: 1.0 / self.beta2,
            rel_eps: self.rel_eps,
            map_form: self.map_form,
            covariance_mode: self.covariance_mode,
            class_covariance: self.textual_covariance,
        }
    }

    pub fn geometric(&self) -> GeometricConfig {
        GeometricConfig {
            alpha2: self.alpha2,
            init_cov_mode: self.init_cov_mode,
            tau: self.tau,
            predictive_mode: self.predictive_mode,
            update_mode: self.update_mode,
        }
    }

    pub fn cache(&self) -> CacheConfig {
        CacheConfig {
            lambda: self.lambda,
            gamma: self.gamma,
            capacity: self.cache_capacity,
            insert_threshold: self.insert_threshold,
            similarity: self.cache_similarity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta2 > 0.0) {
            return Err(Error::Config(format!("beta2 must be > 0, got {}", self.beta2)));
        }
        self.textual().validate()?;
        self.geometric().validate()?;
        self.cache().validate()
    }
}

/// Writes an infinite value as the string `"inf"`, which JSON can carry.
mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}
