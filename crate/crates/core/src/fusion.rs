//! Per-modality GDA posteriors and their Bayesian-model-averaged fusion.
//!
//! Each modality scores a sample with its class-conditional Gaussians under a
//! uniform class prior. Its evidence is the mean class likelihood, and the two
//! modality weights are a softmax over the log-evidences. All arithmetic stays
//! in log space until the final per-class exponentials.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, GaussianModel};
use crate::geometric::{GeometricClassState, PredictiveMode};
use crate::textual::TextualClassModel;

/// Class posterior of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityPosterior {
    pub log_class_likelihoods: Vec<f64>,
    pub class_posterior: Vec<f64>,
    /// `ln((1/C) Σ_c N(x | class c))`
    pub log_evidence: f64,
    /// Every likelihood underflowed to zero; the posterior fell back to uniform.
    pub degenerate: bool,
}

/// Posterior under Gaussian discriminant analysis with a uniform class prior.
pub fn gda_posterior(x: &DVector<f64>, class_gaussians: &[GaussianModel]) -> Result<ModalityPosterior> {
    if class_gaussians.is_empty() {
        return Err(Error::invalid("gda_posterior needs at least one class"));
    }
    let log_lik: Vec<f64> = class_gaussians.iter().map(|g| g.log_density(x)).collect::<Result<_>>()?;
    Ok(posterior_from_log_likelihoods(log_lik))
}

/// Normalizes log-likelihoods into a [`ModalityPosterior`].
pub fn posterior_from_log_likelihoods(log_class_likelihoods: Vec<f64>) -> ModalityPosterior {
    let c = log_class_likelihoods.len();
    let lse = log_sum_exp(&log_class_likelihoods).unwrap_or(f64::NEG_INFINITY);
    if lse == f64::NEG_INFINITY {
        return ModalityPosterior {
            log_class_likelihoods,
            class_posterior: vec![1.0 / c as f64; c],
            log_evidence: f64::NEG_INFINITY,
            degenerate: true,
        };
    }
    // normalizing exp(l - max) keeps the posterior exactly invariant to a common shift
    let max = log_class_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_class_likelihoods.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let class_posterior = weights.iter().map(|w| w / total).collect();
    ModalityPosterior { log_class_likelihoods, class_posterior, log_evidence: lse - (c as f64).ln(), degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityWeights {
    pub textual: f64,
    pub geometric: f64,
    /// Both evidences were `-∞`; the weights fell back to `(0.5, 0.5)`.
    pub degenerate: bool,
}

/// Two-way softmax over the modality log-evidences (uniform model prior).
pub fn modality_weights(log_evidence_textual: f64, log_evidence_geometric: f64) -> Result<ModalityWeights> {
    let (t, g) = (log_evidence_textual, log_evidence_geometric);
    if t.is_nan() || g.is_nan() || t == f64::INFINITY || g == f64::INFINITY {
        return Err(Error::invalid("log-evidences must be finite or -inf"));
    }
    if t == f64::NEG_INFINITY && g == f64::NEG_INFINITY {
        return Ok(ModalityWeights { textual: 0.5, geometric: 0.5, degenerate: true });
    }
    // logistic in the numerically safe direction
    let textual = if t >= g {
        1.0 / (1.0 + (g - t).exp())
    } else {
        let e = (t - g).exp();
        e / (1.0 + e)
    };
    Ok(ModalityWeights { textual, geometric: 1.0 - textual, degenerate: false })
}

/// Which modalities contribute to the fused posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Full,
    TextualOnly,
    GeometricOnly,
}

#[derive(Debug, Clone)]
pub struct FusedPrediction {
    pub fused_posterior: Vec<f64>,
    pub predicted_class: usize,
    pub textual_weight: f64,
    pub geometric_weight: f64,
    pub textual: ModalityPosterior,
    pub geometric: ModalityPosterior,
}

impl FusedPrediction {
    pub fn confidence(&self) -> f64 {
        self.fused_posterior[self.predicted_class]
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fuses precomputed class-conditional Gaussians of both modalities.
pub fn fuse_gaussians(
    x: &DVector<f64>,
    textual: &[GaussianModel],
    geometric: &[GaussianModel],
    mode: FusionMode,
) -> Result<FusedPrediction> {
    if textual.len() != geometric.len() {
        return Err(Error::invalid(format!(
            "modalities disagree on class count: {} textual, {} geometric",
            textual.len(),
            geometric.len()
        )));
    }
    let pt = gda_posterior(x, textual)?;
    let pg = gda_posterior(x, geometric)?;
    let (wt, wg) = match mode {
        FusionMode::TextualOnly => (1.0, 0.0),
        FusionMode::GeometricOnly => (0.0, 1.0),
        FusionMode::Full => {
            let w = modality_weights(pt.log_evidence, pg.log_evidence)?;
            (w.textual, w.geometric)
        }
    };
    let fused_posterior: Vec<f64> = match mode {
        FusionMode::TextualOnly => pt.class_posterior.clone(),
        FusionMode::GeometricOnly => pg.class_posterior.clone(),
        FusionMode::Full => pt
            .class_posterior
            .iter()
            .zip(&pg.class_posterior)
            .map(|(a, b)| wt * a + wg * b)
            .collect(),
    };
    Ok(FusedPrediction {
        predicted_class: argmax(&fused_posterior),
        fused_posterior,
        textual_weight: wt,
        geometric_weight: wg,
        textual: pt,
        geometric: pg,
    })
}

/// Fuses the textual models and the current geometric states for one sample.
pub fn fuse(
    x: &DVector<f64>,
    textual_models: &[TextualClassModel],
    geometric_states: &[GeometricClassState],
    predictive_mode: PredictiveMode,
    mode: FusionMode,
) -> Result<FusedPrediction> {
    let tg: Vec<GaussianModel> = textual_models.iter().map(TextualClassModel::gaussian).collect();
    let gg: Vec<GaussianModel> =
        geometric_states.iter().map(|s| s.predictive_gaussian(predictive_mode)).collect();
    fuse_gaussians(x, &tg, &gg, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{CovarianceMode, SpdMatrix};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn g(mean: &[f64], var: f64) -> GaussianModel {
        GaussianModel::new(
            DVector::from_column_slice(mean),
            SpdMatrix::scaled_identity(mean.len(), var, CovarianceMode::Full).unwrap(),
        )
        .unwrap()
    }

    fn naive_density(m: &GaussianModel, x: &DVector<f64>) -> f64 {
        let cov = m.cov().to_dense();
        let d = x.len() as f64;
        let diff = x - m.mean();
        let q = (diff.transpose() * cov.clone().try_inverse().unwrap() * &diff)[0];
        (-0.5 * q).exp() / ((2.0 * PI).powf(d) * cov.determinant()).sqrt()
    }

    #[test]
    fn symmetric_classes_split_evenly() {
        let p = gda_posterior(&DVector::zeros(2), &[g(&[1.0, 0.0], 1.0), g(&[-1.0, 0.0], 1.0)]).unwrap();
        assert_abs_diff_eq!(p.class_posterior[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.class_posterior[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn far_classes_are_near_one_hot() {
        let classes = [g(&[0.0, 0.0], 1.0), g(&[12.0, 0.0], 1.0), g(&[0.0, 12.0], 1.0)];
        let p = gda_posterior(&DVector::zeros(2), &classes).unwrap();
        assert!(p.class_posterior[1] < 1e-6 && p.class_posterior[2] < 1e-6);
        // softmax of -½‖x-μ‖²: exp(-72) each
        assert_abs_diff_eq!(p.class_posterior[1], (-72f64).exp() / (1.0 + 2.0 * (-72f64).exp()), epsilon = 1e-40);
    }

    #[test]
    fn gda_matches_density_ratio() {
        let covs = [
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5]),
            DMatrix::from_row_slice(3, 3, &[0.6, 0.0, 0.1, 0.0, 1.2, 0.0, 0.1, 0.0, 0.9]),
            DMatrix::identity(3, 3) * 0.7,
            DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.5, 0.5, 1.0, 0.2, 0.5, 0.2, 1.5]),
        ];
        let means = [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.5], [0.3, -0.3, 0.0], [0.0, 0.6, -0.2]];
        let classes: Vec<GaussianModel> = covs
            .iter()
            .zip(means)
            .map(|(c, m)| GaussianModel::new(DVector::from_column_slice(&m), SpdMatrix::from_matrix(c.clone()).unwrap()).unwrap())
            .collect();
        let x = DVector::from_vec(vec![0.05, 0.1, 0.2]);
        let dens: Vec<f64> = classes.iter().map(|m| naive_density(m, &x)).collect();
        let total: f64 = dens.iter().sum();
        let p = gda_posterior(&x, &classes).unwrap();
        for (a, b) in p.class_posterior.iter().zip(&dens) {
            assert_abs_diff_eq!(*a, b / total, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(p.log_evidence, (total / 4.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn weight_cases() {
        let w = modality_weights(-3.0, -3.0).unwrap();
        assert_eq!((w.textual, w.geometric), (0.5, 0.5));
        let w = modality_weights(-1.0 + 3f64.ln(), -1.0).unwrap();
        assert_abs_diff_eq!(w.textual, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w.geometric, 0.25, epsilon = 1e-15);
        let w = modality_weights(f64::NEG_INFINITY, f64::NEG_INFINITY).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.textual, 0.5);
        let w = modality_weights(f64::NEG_INFINITY, -2.0).unwrap();
        assert_eq!((w.textual, w.geometric), (0.0, 1.0));
        let w = modality_weights(-2.0, f64::NEG_INFINITY).unwrap();
        assert_eq!((w.textual, w.geometric), (1.0, 0.0));
        assert!(modality_weights(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn weights_match_exp_normalize() {
        for (t, gv) in [(-10.5, -11.25), (3.0, 2.0), (-700.0, -701.0), (0.1, 40.0)] {
            let w = modality_weights(t, gv).unwrap();
            let m = f64::max(t, gv);
            let (et, eg) = ((t - m).exp(), (gv - m).exp());
            assert_abs_diff_eq!(w.textual, et / (et + eg), epsilon = 1e-15);
            assert_abs_diff_eq!(w.textual + w.geometric, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn ablation_flags() {
        let t = [g(&[1.0, 0.0], 0.5), g(&[0.0, 1.0], 0.5)];
        let gm = [g(&[0.8, 0.3], 0.2), g(&[-0.2, 1.1], 0.2)];
        let x = DVector::from_vec(vec![0.5, 0.4]);
        let f = fuse_gaussians(&x, &t, &gm, FusionMode::TextualOnly).unwrap();
        assert_eq!(f.fused_posterior, gda_posterior(&x, &t).unwrap().class_posterior);
        assert_eq!((f.textual_weight, f.geometric_weight), (1.0, 0.0));
        let f = fuse_gaussians(&x, &t, &gm, FusionMode::GeometricOnly).unwrap();
        assert_eq!(f.fused_posterior, gda_posterior(&x, &gm).unwrap().class_posterior);
    }

    #[test]
    fn identical_modalities_fixed_point() {
        let t = [g(&[1.0, 0.0], 0.5), g(&[0.0, 1.0], 0.5), g(&[-1.0, 0.0], 0.3)];
        let x = DVector::from_vec(vec![0.2, 0.4]);
        let f = fuse_gaussians(&x, &t, &t, FusionMode::Full).unwrap();
        let p = gda_posterior(&x, &t).unwrap();
        for (a, b) in f.fused_posterior.iter().zip(&p.class_posterior) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn handcrafted_fusion() {
        let t = [g(&[1.0, 0.0], 0.5), g(&[0.0, 1.0], 0.5), g(&[-1.0, -1.0], 0.5)];
        let gm = [g(&[0.6, 0.6], 0.1), g(&[0.2, 1.2], 0.3), g(&[-0.5, 0.0], 0.2)];
        let x = DVector::from_vec(vec![0.4, 0.5]);
        let dt: Vec<f64> = t.iter().map(|m| naive_density(m, &x)).collect();
        let dg: Vec<f64> = gm.iter().map(|m| naive_density(m, &x)).collect();
        let (st, sg) = (dt.iter().sum::<f64>(), dg.iter().sum::<f64>());
        let (et, eg) = (st / 3.0, sg / 3.0);
        let (wt, wg) = (et / (et + eg), eg / (et + eg));
        let f = fuse_gaussians(&x, &t, &gm, FusionMode::Full).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(f.fused_posterior[c], wt * dt[c] / st + wg * dg[c] / sg, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(f.textual_weight, wt, epsilon = 1e-12);
        assert_eq!(f.predicted_class, argmax(&f.fused_posterior));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn class_count_mismatch() {
        let t = [g(&[1.0], 1.0)];
        let gm = [g(&[1.0], 1.0), g(&[0.0], 1.0)];
        assert!(fuse_gaussians(&DVector::zeros(1), &t, &gm, FusionMode::Full).is_err());
    }

    #[test]
    fn posterior_rescaling_invariance() {
        let ll = vec![-3.0, -1.5, -7.0];
        let shifted: Vec<f64> = ll.iter().map(|v| v + 250.0).collect();
        let a = posterior_from_log_likelihoods(ll);
        let b = posterior_from_log_likelihoods(shifted);
        for (x, y) in a.class_posterior.iter().zip(&b.class_posterior) {
            assert_abs_diff_eq!(*x, *y, epsilon = 0.0);
        }
        assert_abs_diff_eq!(b.log_evidence - a.log_evidence, 250.0, epsilon = 1e-12);
    }

    #[test]
    fn underflowed_modality_defers_to_other() {
        let pt = posterior_from_log_likelihoods(vec![f64::NEG_INFINITY; 3]);
        assert!(pt.degenerate);
        let w = modality_weights(pt.log_evidence, -4.0).unwrap();
        assert_eq!(w.textual, 0.0);
    }
}
