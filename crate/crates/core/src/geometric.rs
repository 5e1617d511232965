//! Online Gaussian posterior over each class mean.
//!
//! The state is stored in natural parameters: precision `Λ_t` and shift
//! `η_t = Λ_t μ_t`. Absorbing an observation `x` adds `Λ_obs` to the
//! precision and `Λ_obs x` to the shift, so the recursion equals the batch
//! conjugate posterior up to summation order.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianModel, SpdMatrix};
use crate::textual::TextualClassModel;

/// How the initial posterior covariance `Σ₀` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCovMode {
    /// `Σ₀ = α² I`
    #[default]
    AlphaIdentity,
    /// `Σ₀ = S`, the shared regularized textual covariance.
    TextualScatter,
}

/// Covariance of the class-conditional density used for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    /// `N(x | μ_t, Σ_t)`
    PaperLiteral,
    /// `N(x | μ_t, Σ_t + Σ_obs)`
    #[default]
    PosteriorPredictive,
}

/// Which states absorb each test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Only the argmax class of the fused posterior, when its probability reaches `tau`.
    #[default]
    Hard,
    /// Every class, with the observation precision scaled by its fused posterior.
    Soft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricConfig {
    pub alpha2: f64,
    pub init_cov_mode: InitCovMode,
    pub tau: f64,
    pub predictive_mode: PredictiveMode,
    pub update_mode: UpdateMode,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        GeometricConfig {
            alpha2: 1.0,
            init_cov_mode: InitCovMode::AlphaIdentity,
            tau: 0.0,
            predictive_mode: PredictiveMode::PosteriorPredictive,
            update_mode: UpdateMode::Hard,
        }
    }
}

impl GeometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config(format!("alpha2 must be finite and > 0, got {}", self.alpha2)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeometricClassState {
    class_id: usize,
    precision: SpdMatrix,
    shift: DVector<f64>,
    mu: DVector<f64>,
    post_cov: SpdMatrix,
    obs_cov: Arc<SpdMatrix>,
    obs_precision: Arc<SpdMatrix>,
    update_count: u64,
}

impl GeometricClassState {
    /// Starts from `μ₀ = z̄` and the configured `Σ₀`, observing through the shared textual covariance.
    pub fn init(class_id: usize, textual: &TextualClassModel, config: &GeometricConfig) -> Result<Self> {
        let obs_precision = Arc::new(textual.shared_cov.inverse());
        Self::init_with(class_id, textual, config, obs_precision)
    }

    fn init_with(
        class_id: usize,
        textual: &TextualClassModel,
        config: &GeometricConfig,
        obs_precision: Arc<SpdMatrix>,
    ) -> Result<Self> {
        config.validate()?;
        let obs_cov = Arc::clone(&textual.shared_cov);
        let d = obs_cov.dim();
        Error::check_dim(d, textual.dim())?;
        let post_cov = match config.init_cov_mode {
            InitCovMode::AlphaIdentity => SpdMatrix::scaled_identity(d, config.alpha2, obs_cov.mode())?,
            InitCovMode::TextualScatter => (*obs_cov).clone(),
        };
        let mu = textual.empirical_mean.clone();
        Self::from_moments(class_id, mu, post_cov, obs_cov, obs_precision)
    }

    /// Builds a state from an explicit prior `N(mu, post_cov)` and observation covariance.
    pub fn from_prior(
        class_id: usize,
        mu: DVector<f64>,
        post_cov: SpdMatrix,
        obs_cov: SpdMatrix,
    ) -> Result<Self> {
        let obs_precision = Arc::new(obs_cov.inverse());
        Self::from_moments(class_id, mu, post_cov, Arc::new(obs_cov), obs_precision)
    }

    fn from_moments(
        class_id: usize,
        mu: DVector<f64>,
        post_cov: SpdMatrix,
        obs_cov: Arc<SpdMatrix>,
        obs_precision: Arc<SpdMatrix>,
    ) -> Result<Self> {
        Error::check_dim(post_cov.dim(), mu.len())?;
        Error::check_dim(obs_cov.dim(), mu.len())?;
        let precision = post_cov.inverse();
        let shift = precision.mul_vec(&mu);
        Ok(GeometricClassState { class_id, precision, shift, mu, post_cov, obs_cov, obs_precision, update_count: 0 })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn post_cov(&self) -> &SpdMatrix {
        &self.post_cov
    }

    pub fn obs_cov(&self) -> &SpdMatrix {
        &self.obs_cov
    }

    pub fn precision(&self) -> &SpdMatrix {
        &self.precision
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Absorbs one observation with full weight.
    pub fn update(&mut self, x: &DVector<f64>) -> Result<()> {
        self.update_weighted(x, 1.0)
    }

    /// Absorbs `x` with its observation precision scaled by `weight` (a responsibility in `[0, 1]`).
    /// On error the state is left untouched.
    pub fn update_weighted(&mut self, x: &DVector<f64>, weight: f64) -> Result<()> {
        Error::check_dim(self.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation has non-finite entries"));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(format!("update weight must lie in [0, 1], got {weight}")));
        }
        let precision = self.precision.add_scaled(&self.obs_precision, weight)?;
        let shift = &self.shift + self.obs_precision.mul_vec(x) * weight;
        let mu = precision.solve(&shift);
        let post_cov = precision.inverse();
        self.precision = precision;
        self.shift = shift;
        self.mu = mu;
        self.post_cov = post_cov;
        self.update_count += 1;
        Ok(())
    }

    /// Class-conditional density used for scoring.
    pub fn predictive_gaussian(&self, mode: PredictiveMode) -> GaussianModel {
        let cov = match mode {
            PredictiveMode::PaperLiteral => self.post_cov.clone(),
            PredictiveMode::PosteriorPredictive => {
                self.post_cov.add(&self.obs_cov).expect("state covariances share a dimension")
            }
        };
        GaussianModel::new(self.mu.clone(), cov).expect("state mean and covariance share a dimension")
    }
}

/// One initial state per textual class model, sharing the observation precision.
pub fn init_states(
    textual: &[TextualClassModel],
    config: &GeometricConfig,
) -> Result<Vec<GeometricClassState>> {
    let first = textual.first().ok_or_else(|| Error::invalid("no textual models"))?;
    let obs_precision = Arc::new(first.shared_cov.inverse());
    textual
        .iter()
        .map(|t| GeometricClassState::init_with(t.class_id, t, config, Arc::clone(&obs_precision)))
        .collect()
}
