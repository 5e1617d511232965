//! Textual class distributions built from prompt-paraphrase embeddings.
//!
//! Each class gets an empirical mean and unnormalized scatter over its prompt
//! embeddings. A pooled within-class covariance is shared by all classes, and
//! the class prototype is the MAP estimate of the latent text embedding under
//! a zero-centered isotropic prior with precision `beta_inv2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{regularize_scatter_with, CovarianceMode, GaussianModel, SpdMatrix};

/// The `M` prompt embeddings of one class.
#[derive(Debug, Clone)]
pub struct PromptEmbeddingSet {
    class_id: usize,
    embeddings: Vec<DVector<f64>>,
}

impl PromptEmbeddingSet {
    pub fn new(class_id: usize, embeddings: Vec<DVector<f64>>) -> Result<Self> {
        let first = embeddings
            .first()
            .ok_or_else(|| Error::invalid(format!("class {class_id} has no prompt embeddings")))?;
        let d = first.len();
        if d == 0 {
            return Err(Error::invalid("prompt embeddings must have positive dimension"));
        }
        for e in &embeddings {
            Error::check_dim(d, e.len())?;
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("class {class_id} has a non-finite prompt embedding")));
            }
        }
        Ok(PromptEmbeddingSet { class_id, embeddings })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn embeddings(&self) -> &[DVector<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }
}

/// Which of the two algebraic forms of the MAP prototype to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapForm {
    /// `(b·I + M·S⁻¹)⁻¹ · M·S⁻¹ · z̄`; recovers `z̄` as `b → 0`.
    #[default]
    Canonical,
    /// `(b·I + M·S⁻¹)⁻¹ · S⁻¹ · z̄`, the compact form with the factor `M` dropped.
    PaperMain,
}

/// Covariance used by the textual likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextualCovariance {
    #[default]
    Shared,
    PerClass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextualConfig {
    /// Prior precision `1/β²` of the prototype. Zero means an improper flat prior.
    pub beta_inv2: f64,
    pub rel_eps: f64,
    pub map_form: MapForm,
    pub covariance_mode: CovarianceMode,
    pub class_covariance: TextualCovariance,
}

impl Default for TextualConfig {
    fn default() -> Self {
        TextualConfig {
            beta_inv2: 1.0,
            rel_eps: 1e-3,
            map_form: MapForm::Canonical,
            covariance_mode: CovarianceMode::Full,
            class_covariance: TextualCovariance::Shared,
        }
    }
}

impl TextualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_inv2 >= 0.0 && self.beta_inv2.is_finite()) {
            return Err(Error::Config(format!("beta_inv2 must be finite and >= 0, got {}", self.beta_inv2)));
        }
        if !(self.rel_eps >= 0.0 && self.rel_eps.is_finite()) {
            return Err(Error::Config(format!("rel_eps must be finite and >= 0, got {}", self.rel_eps)));
        }
        Ok(())
    }
}

/// Per-class textual distribution.
#[derive(Debug, Clone)]
pub struct TextualClassModel {
    pub class_id: usize,
    pub prompt_count: usize,
    pub empirical_mean: DVector<f64>,
    /// Unnormalized scatter `Σ (zᵢ - z̄)(zᵢ - z̄)ᵀ`.
    pub scatter: DMatrix<f64>,
    pub map_prototype: DVector<f64>,
    /// Regularized pooled covariance shared by every class.
    pub shared_cov: Arc<SpdMatrix>,
    /// Covariance of this class's likelihood; the shared one unless per-class mode is selected.
    pub likelihood_cov: Arc<SpdMatrix>,
}

impl TextualClassModel {
    pub fn dim(&self) -> usize {
        self.empirical_mean.len()
    }

    /// `N(ν_MAP, likelihood_cov)`, the class-conditional density of the textual modality.
    pub fn gaussian(&self) -> GaussianModel {
        GaussianModel::new(self.map_prototype.clone(), (*self.likelihood_cov).clone())
            .expect("textual model dimensions are consistent")
    }
}

/// Empirical mean and unnormalized scatter of one class's prompt embeddings.
pub fn empirical_stats(prompts: &PromptEmbeddingSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if prompts.is_empty() {
        return Err(Error::invalid("empty prompt set"));
    }
    let d = prompts.dim();
    let m = prompts.len() as f64;

    // Neumaier-compensated sum keeps the mean insensitive to prompt order.
    let mut sum = DVector::<f64>::zeros(d);
    let mut comp = DVector::<f64>::zeros(d);
    for z in prompts.embeddings() {
        for i in 0..d {
            let t = sum[i] + z[i];
            if sum[i].abs() >= z[i].abs() {
                comp[i] += (sum[i] - t) + z[i];
            } else {
                comp[i] += (z[i] - t) + sum[i];
            }
            sum[i] = t;
        }
    }
    let mean = (sum + comp) / m;

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for z in prompts.embeddings() {
        let c = z - &mean;
        scatter.ger(1.0, &c, &c, 1.0);
    }
    Ok((mean, scatter))
}

/// Pooled within-class covariance `Σ S_c / Σ (M_c - 1)`, regularized.
///
/// When no class has more than one prompt the pooled scatter is zero and the
/// result is `rel_eps · I`.
pub fn pooled_shared_cov(
    scatters: &[(&DMatrix<f64>, usize)],
    rel_eps: f64,
    mode: CovarianceMode,
) -> Result<SpdMatrix> {
    let (first, _) = scatters
        .first()
        .ok_or_else(|| Error::invalid("pooled covariance needs at least one class"))?;
    let d = first.nrows();
    let mut pooled = DMatrix::<f64>::zeros(d, d);
    let mut dof = 0usize;
    for (s, m) in scatters {
        Error::check_dim(d, s.nrows())?;
        Error::check_dim(d, s.ncols())?;
        if *m == 0 {
            return Err(Error::invalid("class with zero prompts"));
        }
        pooled += *s;
        dof += m - 1;
    }
    if dof > 0 {
        pooled /= dof as f64;
    } else {
        pooled.fill(0.0);
    }
    regularize_scatter_with(&pooled, rel_eps, mode)
}

/// MAP prototype of the latent text embedding, solved without forming `S⁻¹`.
///
/// Both forms reduce to a single SPD solve: `(b·I + M·S⁻¹)⁻¹ = (b·S + M·I)⁻¹ S`,
/// so canonical is `M (b·S + M·I)⁻¹ z̄` and the compact form is `(b·S + M·I)⁻¹ z̄`.
pub fn map_prototype(
    mean: &DVector<f64>,
    shared_cov: &SpdMatrix,
    prompt_count: usize,
    beta_inv2: f64,
    form: MapForm,
) -> Result<DVector<f64>> {
    Error::check_dim(shared_cov.dim(), mean.len())?;
    if prompt_count == 0 {
        return Err(Error::invalid("prompt count must be positive"));
    }
    if !(beta_inv2 >= 0.0 && beta_inv2.is_finite()) {
        return Err(Error::invalid(format!("beta_inv2 must be finite and >= 0, got {beta_inv2}")));
    }
    let m = prompt_count as f64;
    let d = mean.len();
    let system = if shared_cov.is_diagonal() {
        SpdMatrix::from_diagonal(shared_cov.diagonal() * beta_inv2 + DVector::from_element(d, m))?
    } else {
        let mut a = shared_cov.to_dense() * beta_inv2;
        for i in 0..d {
            a[(i, i)] += m;
        }
        SpdMatrix::from_matrix(a)?
    };
    let rhs = match form {
        MapForm::Canonical => mean * m,
        MapForm::PaperMain => mean.clone(),
    };
    Ok(system.solve(&rhs))
}

/// Builds every class's textual model. Class ids must be exactly `0..C`.
pub fn build_textual_models(
    all_prompts: &[PromptEmbeddingSet],
    config: &TextualConfig,
) -> Result<Vec<TextualClassModel>> {
    config.validate()?;
    if all_prompts.is_empty() {
        return Err(Error::invalid("no classes"));
    }
    let c = all_prompts.len();
    let mut order: Vec<Option<&PromptEmbeddingSet>> = vec![None; c];
    for set in all_prompts {
        let id = set.class_id();
        if id >= c {
            return Err(Error::invalid(format!("class id {id} outside 0..{c} (missing class)")));
        }
        if order[id].is_some() {
            return Err(Error::invalid(format!("duplicate class id {id}")));
        }
        order[id] = Some(set);
    }
    let sets: Vec<&PromptEmbeddingSet> = order.into_iter().map(|s| s.expect("ids form a permutation")).collect();
    let d = sets[0].dim();
    for s in &sets {
        Error::check_dim(d, s.dim())?;
    }

    let stats: Vec<(DVector<f64>, DMatrix<f64>)> =
        sets.iter().map(|s| empirical_stats(s)).collect::<Result<_>>()?;
    let pooled_input: Vec<(&DMatrix<f64>, usize)> =
        stats.iter().zip(&sets).map(|((_, s), set)| (s, set.len())).collect();
    let shared = Arc::new(pooled_shared_cov(&pooled_input, config.rel_eps, config.covariance_mode)?);

    sets.iter()
        .zip(stats)
        .map(|(set, (mean, scatter))| {
            let likelihood_cov = match config.class_covariance {
                TextualCovariance::Shared => Arc::clone(&shared),
                TextualCovariance::PerClass => Arc::new(pooled_shared_cov(
                    &[(&scatter, set.len())],
                    config.rel_eps,
                    config.covariance_mode,
                )?),
            };
            let map = map_prototype(&mean, &likelihood_cov, set.len(), config.beta_inv2, config.map_form)?;
            Ok(TextualClassModel {
                class_id: set.class_id(),
                prompt_count: set.len(),
                empirical_mean: mean,
                scatter,
                map_prototype: map,
                shared_cov: Arc::clone(&shared),
                likelihood_cov,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn set(id: usize, v: Vec<Vec<f64>>) -> PromptEmbeddingSet {
        PromptEmbeddingSet::new(id, v.into_iter().map(DVector::from_vec).collect()).unwrap()
    }

    #[test]
    fn stats_single_prompt() {
        let (m, s) = empirical_stats(&set(0, vec![vec![0.3, -0.2, 0.9]])).unwrap();
        assert_eq!(m, DVector::from_vec(vec![0.3, -0.2, 0.9]));
        assert_eq!(s, DMatrix::zeros(3, 3));
    }

    #[test]
    fn stats_symmetric_pair() {
        let v = DVector::from_vec(vec![0.5, -1.0]);
        let (m, s) = empirical_stats(&set(0, vec![vec![0.5, -1.0], vec![-0.5, 1.0]])).unwrap();
        assert_eq!(m, DVector::zeros(2));
        assert_abs_diff_eq!(s, &v * v.transpose() * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(PromptEmbeddingSet::new(0, vec![]).is_err());
        assert!(PromptEmbeddingSet::new(0, vec![DVector::zeros(2), DVector::zeros(3)]).is_err());
    }

    #[test]
    fn stats_order_insensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut embeddings: Vec<DVector<f64>> = (0..9).map(|_| rand_vec(&mut rng, 4)).collect();
        let (m1, s1) = empirical_stats(&PromptEmbeddingSet::new(0, embeddings.clone()).unwrap()).unwrap();
        embeddings.reverse();
        embeddings.swap(0, 4);
        let (m2, s2) = empirical_stats(&PromptEmbeddingSet::new(0, embeddings).unwrap()).unwrap();
        assert_abs_diff_eq!(m1, m2, epsilon = 1e-12);
        assert_abs_diff_eq!(s1, s2, epsilon = 1e-12);
    }

    #[test]
    fn pooled_one_class_pair() {
        let (_, s) = empirical_stats(&set(0, vec![vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap();
        let pooled = pooled_shared_cov(&[(&s, 2)], 1e-3, CovarianceMode::Full).unwrap();
        // 2 e1 e1ᵀ / 1, regularized by 1e-3 · trace/d = 1e-3
        let expected = DMatrix::from_row_slice(2, 2, &[2.001, 0.0, 0.0, 0.001]);
        assert_abs_diff_eq!(pooled.to_dense(), expected, epsilon = 1e-15);
    }

    #[test]
    fn pooled_all_singletons_fall_back() {
        let z = DMatrix::zeros(3, 3);
        let pooled = pooled_shared_cov(&[(&z, 1), (&z, 1)], 1e-3, CovarianceMode::Full).unwrap();
        assert_eq!(pooled.to_dense(), DMatrix::identity(3, 3) * 1e-3);
    }

    #[test]
    fn pooled_dimension_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(3, 3);
        assert!(matches!(
            pooled_shared_cov(&[(&a, 2), (&b, 2)], 1e-3, CovarianceMode::Full),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn map_flat_prior_recovers_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean = rand_vec(&mut rng, 3);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let s = SpdMatrix::from_matrix(&a * a.transpose() + DMatrix::identity(3, 3)).unwrap();
        let nu = map_prototype(&mean, &s, 7, 0.0, MapForm::Canonical).unwrap();
        assert_abs_diff_eq!(nu, mean, epsilon = 1e-9);
        let nu = map_prototype(&mean, &s, 4, 0.0, MapForm::PaperMain).unwrap();
        assert_abs_diff_eq!(nu, &mean / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn map_scalar_reduction() {
        let s = SpdMatrix::scaled_identity(2, 2.0, CovarianceMode::Full).unwrap();
        let nu = map_prototype(&DVector::from_vec(vec![1.0, 0.0]), &s, 3, 1.0, MapForm::Canonical).unwrap();
        assert_abs_diff_eq!(nu, DVector::from_vec(vec![0.6, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn map_matches_gradient_descent() {
        // Minimize ½b‖ν‖² + (M/2)(z̄-ν)ᵀS⁻¹(z̄-ν) directly.
        let s_dense = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let s_inv = s_dense.clone().try_inverse().unwrap();
        let (b, m) = (1.0, 3.0);
        let zbar = DVector::from_vec(vec![1.0, -0.5]);
        let mut nu = DVector::zeros(2);
        for _ in 0..20_000 {
            let grad = &nu * b - &s_inv * (&zbar - &nu) * m;
            nu -= grad * 0.05;
        }
        let got = map_prototype(&zbar, &SpdMatrix::from_matrix(s_dense).unwrap(), 3, b, MapForm::Canonical).unwrap();
        assert_abs_diff_eq!(got, nu, epsilon = 1e-10);
    }

    #[test]
    fn map_shrinks_monotonically() {
        // Diagonal case: ν = (M/s)/(b + M/s) · z̄
        let s = SpdMatrix::scaled_identity(1, 0.5, CovarianceMode::Diagonal).unwrap();
        let zbar = DVector::from_element(1, 0.8);
        let mut last = f64::INFINITY;
        for b in [0.0, 0.1, 1.0, 3.0, 10.0, 100.0] {
            let nu = map_prototype(&zbar, &s, 5, b, MapForm::Canonical).unwrap()[0];
            assert_abs_diff_eq!(nu, (10.0 / (b + 10.0)) * 0.8, epsilon = 1e-14);
            assert!(nu.abs() < last);
            last = nu.abs();
        }
    }

    #[test]
    fn build_single_prompt_class() {
        let models = build_textual_models(
            &[set(0, vec![vec![0.6, 0.8]])],
            &TextualConfig { beta_inv2: 0.0, ..TextualConfig::default() },
        )
        .unwrap();
        assert_abs_diff_eq!(models[0].map_prototype, DVector::from_vec(vec![0.6, 0.8]), epsilon = 1e-12);
        // a positive prior precision shrinks along I
        let models = build_textual_models(&[set(0, vec![vec![0.6, 0.8]])], &TextualConfig::default()).unwrap();
        let ratio = models[0].map_prototype[0] / 0.6;
        assert!(ratio < 1.0 && ratio > 0.0);
        assert_abs_diff_eq!(models[0].map_prototype[1] / 0.8, ratio, epsilon = 1e-12);
    }

    #[test]
    fn build_orthogonal_classes() {
        let t = 1e-4;
        let models = build_textual_models(
            &[
                set(1, vec![vec![0.0, 1.0 + t], vec![0.0, 1.0 - t]]),
                set(0, vec![vec![1.0, t], vec![1.0, -t]]),
            ],
            &TextualConfig { beta_inv2: 0.0, ..TextualConfig::default() },
        )
        .unwrap();
        assert_eq!(models[0].class_id, 0);
        assert_abs_diff_eq!(models[0].map_prototype, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-6);
        assert_abs_diff_eq!(models[1].map_prototype, DVector::from_vec(vec![0.0, 1.0]), epsilon = 1e-6);
    }

    #[test]
    fn build_rejects_bad_ids() {
        let cfg = TextualConfig::default();
        assert!(build_textual_models(&[set(0, vec![vec![1.0]]), set(0, vec![vec![2.0]])], &cfg).is_err());
        assert!(build_textual_models(&[set(0, vec![vec![1.0]]), set(2, vec![vec![2.0]])], &cfg).is_err());
    }

    #[test]
    fn build_matches_standalone_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sets: Vec<PromptEmbeddingSet> = (0..5)
            .map(|c| PromptEmbeddingSet::new(c, (0..8).map(|_| rand_vec(&mut rng, 6)).collect()).unwrap())
            .collect();
        let cfg = TextualConfig::default();
        let models = build_textual_models(&sets, &cfg).unwrap();
        for (m, s) in models.iter().zip(&sets) {
            let (mean, _) = empirical_stats(s).unwrap();
            let nu = map_prototype(&mean, &m.shared_cov, 8, cfg.beta_inv2, cfg.map_form).unwrap();
            assert_abs_diff_eq!(m.map_prototype, nu, epsilon = 1e-14);
        }
    }

    #[test]
    fn per_class_covariance_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sets: Vec<PromptEmbeddingSet> = (0..2)
            .map(|c| PromptEmbeddingSet::new(c, (0..6).map(|_| rand_vec(&mut rng, 3)).collect()).unwrap())
            .collect();
        let cfg = TextualConfig { class_covariance: TextualCovariance::PerClass, ..TextualConfig::default() };
        let models = build_textual_models(&sets, &cfg).unwrap();
        let expected = pooled_shared_cov(&[(&models[1].scatter, 6)], cfg.rel_eps, CovarianceMode::Full).unwrap();
        assert_abs_diff_eq!(models[1].likelihood_cov.to_dense(), expected.to_dense(), epsilon = 1e-15);
    }
}
