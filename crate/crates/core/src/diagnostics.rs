//! Distribution-consistency diagnostics: mean per-class Gaussian KL against
//! reference distributions and RBF-kernel MMD between sample sets.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_kl, GaussianModel};

/// Mean over classes of `KL(estimated_c ‖ reference_c)`.
pub fn mean_class_kl(estimated: &[GaussianModel], reference: &[GaussianModel]) -> Result<f64> {
    if estimated.len() != reference.len() {
        return Err(Error::invalid(format!(
            "class count mismatch: {} estimated, {} reference",
            estimated.len(),
            reference.len()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::invalid("mean_class_kl needs at least one class"));
    }
    let total = estimated
        .iter()
        .zip(reference)
        .map(|(e, r)| gaussian_kl(e, r))
        .sum::<Result<f64>>()?;
    Ok(total / estimated.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Lower median of pairwise distances over the pooled set.
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdResult {
    pub mmd: f64,
    pub sigma: f64,
    /// The median heuristic produced zero and `σ = 1` was used instead.
    pub bandwidth_fallback: bool,
}

/// Lower median of all pairwise Euclidean distances.
pub fn median_pairwise_distance(points: &[&DVector<f64>]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            dists.push((points[i] - points[j]).norm());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    let k = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(k, f64::total_cmp);
    *median
}

fn mean_kernel(a: &[DVector<f64>], b: &[DVector<f64>], inv_two_sigma2: f64) -> f64 {
    let mut total = 0.0;
    for u in a {
        for v in b {
            total += (-(u - v).norm_squared() * inv_two_sigma2).exp();
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) MMD with an RBF kernel `exp(-‖u-v‖²/(2σ²))`.
pub fn mmd_rbf(a: &[DVector<f64>], b: &[DVector<f64>], bandwidth: Bandwidth) -> Result<MmdResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("mmd_rbf needs two nonempty sample sets"));
    }
    let d = a[0].len();
    for v in a.iter().chain(b) {
        Error::check_dim(d, v.len())?;
    }
    let (sigma, bandwidth_fallback) = match bandwidth {
        Bandwidth::Fixed(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {s}")));
            }
            (s, false)
        }
        Bandwidth::MedianHeuristic => {
            let pooled: Vec<&DVector<f64>> = a.iter().chain(b).collect();
            let m = median_pairwise_distance(&pooled);
            if m > 0.0 {
                (m, false)
            } else {
                (1.0, true)
            }
        }
    };
    let g = 1.0 / (2.0 * sigma * sigma);
    let mmd2 = mean_kernel(a, a, g) + mean_kernel(b, b, g) - 2.0 * mean_kernel(a, b, g);
    Ok(MmdResult { mmd: mmd2.max(0.0).sqrt(), sigma, bandwidth_fallback })
}

/// Ground-truth distributions used by trajectory checkpoints.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    /// Per-class reference Gaussians.
    pub gaussians: Vec<GaussianModel>,
    /// Fresh samples from the reference mixture.
    pub samples: Vec<DVector<f64>>,
    /// Standard-normal draws per class, reused at every checkpoint to sample the learned model.
    pub probe_noise: Vec<Vec<DVector<f64>>>,
    /// Kernel bandwidth shared by every checkpoint of an episode.
    pub sigma: f64,
}

impl ReferenceSet {
    /// Fixes the bandwidth with the median heuristic on the reference samples.
    pub fn new(
        gaussians: Vec<GaussianModel>,
        samples: Vec<DVector<f64>>,
        probe_noise: Vec<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if gaussians.is_empty() || samples.is_empty() {
            return Err(Error::invalid("reference set needs gaussians and samples"));
        }
        if probe_noise.len() != gaussians.len() {
            return Err(Error::invalid("one probe-noise block per class required"));
        }
        let refs: Vec<&DVector<f64>> = samples.iter().collect();
        let m = median_pairwise_distance(&refs);
        let sigma = if m > 0.0 { m } else { 1.0 };
        Ok(ReferenceSet { gaussians, samples, probe_noise, sigma })
    }

    /// Samples the estimated class Gaussians with the fixed probe noise: `μ_c + L_c ε`.
    pub fn probe_samples(&self, estimated: &[GaussianModel]) -> Result<Vec<DVector<f64>>> {
        if estimated.len() != self.probe_noise.len() {
            return Err(Error::invalid("class count mismatch in probe sampling"));
        }
        let mut out = Vec::new();
        for (g, noise) in estimated.iter().zip(&self.probe_noise) {
            let l = g.cov().cholesky_factor();
            for eps in noise {
                out.push(g.mean() + &l * eps);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheckpoint {
    pub step_index: u64,
    /// Mean `KL(learned ‖ reference)` over classes.
    pub mean_kl: Option<f64>,
    /// MMD between samples of the learned class Gaussians and reference samples.
    pub mmd: Option<f64>,
    /// MMD between the most recent observed features and reference samples.
    pub window_mmd: Option<f64>,
    pub accuracy_so_far: Option<f64>,
}

/// Records diagnostics for the learned class Gaussians at one step.
/// Without references only the accuracy is kept.
pub fn checkpoint(
    step: u64,
    estimated: &[GaussianModel],
    reference: Option<&ReferenceSet>,
    recent_samples: &[DVector<f64>],
    accuracy_so_far: Option<f64>,
) -> Result<TrajectoryCheckpoint> {
    let Some(reference) = reference else {
        return Ok(TrajectoryCheckpoint { step_index: step, mean_kl: None, mmd: None, window_mmd: None, accuracy_so_far });
    };
    let bw = Bandwidth::Fixed(reference.sigma);
    let mean_kl = mean_class_kl(estimated, &reference.gaussians)?;
    let probes = reference.probe_samples(estimated)?;
    let mmd = mmd_rbf(&probes, &reference.samples, bw)?.mmd;
    let window_mmd = if recent_samples.is_empty() {
        None
    } else {
        Some(mmd_rbf(recent_samples, &reference.samples, bw)?.mmd)
    };
    Ok(TrajectoryCheckpoint { step_index: step, mean_kl: Some(mean_kl), mmd: Some(mmd), window_mmd, accuracy_so_far })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{CovarianceMode, SpdMatrix};
    use approx::assert_abs_diff_eq;

    fn g(mean: &[f64]) -> GaussianModel {
        GaussianModel::new(
            DVector::from_column_slice(mean),
            SpdMatrix::scaled_identity(mean.len(), 1.0, CovarianceMode::Full).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn kl_identical_is_zero() {
        let a = vec![g(&[0.0, 1.0]), g(&[2.0, -1.0])];
        assert_eq!(mean_class_kl(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn kl_two_class_mean_shift() {
        let est = vec![g(&[1.0, 2.0]), g(&[0.0, 0.0])];
        let reference = vec![g(&[0.0, 0.0]), g(&[0.0, 0.0])];
        assert_abs_diff_eq!(mean_class_kl(&est, &reference).unwrap(), 0.25 * 5.0, epsilon = 1e-12);
        assert!(mean_class_kl(&est, &reference[..1]).is_err());
    }

    #[test]
    fn mmd_identical_sets_zero() {
        let a: Vec<DVector<f64>> = (0..5).map(|i| DVector::from_vec(vec![i as f64, 0.5])).collect();
        assert_eq!(mmd_rbf(&a, &a, Bandwidth::MedianHeuristic).unwrap().mmd, 0.0);
    }

    #[test]
    fn mmd_single_points() {
        let v = DVector::from_vec(vec![0.6, 0.8, 1.0]);
        let sigma = 0.9;
        let r = mmd_rbf(&[DVector::zeros(3)], &[v.clone()], Bandwidth::Fixed(sigma)).unwrap();
        let expected = (2.0 - 2.0 * (-v.norm_squared() / (2.0 * sigma * sigma)).exp()).sqrt();
        assert_abs_diff_eq!(r.mmd, expected, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_bandwidth_falls_back() {
        let a = vec![DVector::from_vec(vec![1.0, 1.0]); 3];
        let r = mmd_rbf(&a, &a, Bandwidth::MedianHeuristic).unwrap();
        assert!(r.bandwidth_fallback);
        assert_eq!(r.sigma, 1.0);
    }

    #[test]
    fn lower_median() {
        // distances 1, 2, 3 from the origin plus 1, 2, 1 between others
        let pts = [0.0, 1.0, 2.0, 3.0].map(|x| DVector::from_vec(vec![x]));
        let refs: Vec<&DVector<f64>> = pts.iter().collect();
        // sorted: 1 1 1 2 2 3 → lower median (index 2) = 1
        assert_eq!(median_pairwise_distance(&refs), 1.0);
    }

    #[test]
    fn mmd_symmetric_and_order_invariant() {
        let a: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_vec(vec![(i as f64).sin(), (i as f64 * 0.7).cos()])).collect();
        let b: Vec<DVector<f64>> = (0..4).map(|i| DVector::from_vec(vec![0.3 * i as f64, -0.2])).collect();
        let ab = mmd_rbf(&a, &b, Bandwidth::MedianHeuristic).unwrap().mmd;
        let ba = mmd_rbf(&b, &a, Bandwidth::MedianHeuristic).unwrap().mmd;
        let mut a_rev = a.clone();
        a_rev.reverse();
        let ab_rev = mmd_rbf(&a_rev, &b, Bandwidth::MedianHeuristic).unwrap().mmd;
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-14);
        assert_abs_diff_eq!(ab, ab_rev, epsilon = 1e-14);
        assert!(mmd_rbf(&[], &b, Bandwidth::MedianHeuristic).is_err());
    }

    #[test]
    fn checkpoint_without_reference() {
        let cp = checkpoint(3, &[g(&[0.0])], None, &[], Some(0.5)).unwrap();
        assert_eq!(cp.mean_kl, None);
        assert_eq!(cp.accuracy_so_far, Some(0.5));
    }

    #[test]
    fn checkpoint_at_reference_is_zero_kl() {
        let gs = vec![g(&[0.0, 0.0]), g(&[1.0, 0.0])];
        let samples = vec![DVector::from_vec(vec![0.1, 0.0]), DVector::from_vec(vec![0.9, 0.1])];
        let noise = vec![vec![DVector::from_vec(vec![0.5, -0.5])], vec![DVector::from_vec(vec![0.0, 1.0])]];
        let r = ReferenceSet::new(gs.clone(), samples, noise).unwrap();
        let cp = checkpoint(0, &gs, Some(&r), &[], None).unwrap();
        assert_eq!(cp.step_index, 0);
        assert_eq!(cp.mean_kl, Some(0.0));
        assert!(cp.mmd.unwrap() >= 0.0);
        assert_eq!(cp.window_mmd, None);
    }
}
