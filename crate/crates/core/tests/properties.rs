use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;

use bayesmm::baselines::{cache_bonus, CacheBank, CacheConfig, CacheSimilarity};
use bayesmm::diagnostics::{mmd_rbf, Bandwidth};
use bayesmm::fusion::{fuse_gaussians, posterior_from_log_likelihoods, FusionMode};
use bayesmm::gaussian::{gaussian_kl, log_sum_exp, CovarianceMode, GaussianModel, SpdMatrix};
use bayesmm::geometric::GeometricClassState;
use bayesmm::harness::format::{decode_stream, stream_to_bytes, FeatureStream, StreamRecord};
use bayesmm::harness::Corruption;

fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (vec(-1.0f64..1.0, d * d), 0.1f64..2.0).prop_map(move |(a, s)| {
        let a = DMatrix::from_vec(d, d, a);
        let m = &a * a.transpose() + DMatrix::identity(d, d) * s;
        (&m + m.transpose()) * 0.5
    })
}

fn point(d: usize) -> impl Strategy<Value = DVector<f64>> {
    vec(-3.0f64..3.0, d).prop_map(DVector::from_vec)
}

fn gaussian(d: usize) -> impl Strategy<Value = GaussianModel> {
    (point(d), spd(d)).prop_map(|(m, c)| GaussianModel::new(m, SpdMatrix::from_matrix(c).unwrap()).unwrap())
}

fn permute(v: &DVector<f64>, p: &[usize]) -> DVector<f64> {
    DVector::from_iterator(p.len(), p.iter().map(|&i| v[i]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn log_density_is_permutation_invariant(
        (mean, cov, x, perm) in (1usize..6).prop_flat_map(|d| {
            (point(d), spd(d), point(d), Just((0..d).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let d = mean.len();
        let g = GaussianModel::new(mean.clone(), SpdMatrix::from_matrix(cov.clone()).unwrap()).unwrap();
        let pc = DMatrix::from_fn(d, d, |i, j| cov[(perm[i], perm[j])]);
        let gp = GaussianModel::new(permute(&mean, &perm), SpdMatrix::from_matrix(pc).unwrap()).unwrap();
        let a = g.log_density(&x).unwrap();
        let b = gp.log_density(&permute(&x, &perm)).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self((p, q) in (1usize..6).prop_flat_map(|d| (gaussian(d), gaussian(d)))) {
        prop_assert!(gaussian_kl(&p, &q).unwrap() >= 0.0);
        prop_assert!(gaussian_kl(&p, &p).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn log_sum_exp_bounds(v in vec(-500.0f64..500.0, 1..20)) {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&v).unwrap();
        prop_assert!(l >= m && l <= m + (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn class_posterior_is_shift_invariant(v in vec(-50.0f64..50.0, 2..10), shift in -300i32..300) {
        // integer shifts keep every difference exact, so the posterior must match bit for bit
        let v: Vec<f64> = v.iter().map(|x| (x * 8.0).round() / 8.0).collect();
        let a = posterior_from_log_likelihoods(v.clone());
        let b = posterior_from_log_likelihoods(v.iter().map(|x| x + shift as f64).collect());
        prop_assert_eq!(a.class_posterior, b.class_posterior);
    }

    #[test]
    fn fused_posterior_is_normalized_and_bounded(
        (t, g, x) in (1usize..5, 2usize..6).prop_flat_map(|(d, c)| (vec(gaussian(d), c), vec(gaussian(d), c), point(d)))
    ) {
        let f = fuse_gaussians(&x, &t, &g, FusionMode::Full).unwrap();
        prop_assert!((f.fused_posterior.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!((f.textual_weight + f.geometric_weight - 1.0).abs() <= 1e-15);
        for k in 0..t.len() {
            let (a, b) = (f.textual.class_posterior[k], f.geometric.class_posterior[k]);
            prop_assert!(f.fused_posterior[k] >= a.min(b) - 1e-15 && f.fused_posterior[k] <= a.max(b) + 1e-15);
        }
    }

    #[test]
    fn mmd_is_symmetric_and_order_invariant(
        (a, b) in (1usize..4).prop_flat_map(|d| (vec(point(d), 2..12), vec(point(d), 2..12)))
    ) {
        let ab = mmd_rbf(&a, &b, Bandwidth::MedianHeuristic).unwrap();
        let ba = mmd_rbf(&b, &a, Bandwidth::MedianHeuristic).unwrap();
        let mut ar = a.clone();
        ar.reverse();
        let r = mmd_rbf(&ar, &b, Bandwidth::MedianHeuristic).unwrap();
        prop_assert!((ab.mmd - ba.mmd).abs() <= 1e-12);
        prop_assert!((ab.mmd - r.mmd).abs() <= 1e-12);
        prop_assert!(ab.mmd >= 0.0);
        prop_assert!(mmd_rbf(&a, &a, Bandwidth::Fixed(1.0)).unwrap().mmd <= 1e-7);
    }

    #[test]
    fn cache_bonus_is_scale_invariant(
        (entries, x) in (2usize..6).prop_flat_map(|d| (vec(point(d), 1..6), point(d))),
        scale in 0.01f64..100.0,
        max_entry in any::<bool>(),
    ) {
        prop_assume!(x.norm() > 1e-3);
        let similarity = if max_entry { CacheSimilarity::MaxEntry } else { CacheSimilarity::Mean };
        let config = CacheConfig { capacity: 8, similarity, ..CacheConfig::default() };
        let mut bank = CacheBank::new(1, 8);
        for e in &entries {
            bank.update(e, &[1.0], &config).unwrap();
        }
        let a = cache_bonus(&x, &bank.caches()[0], &config);
        let b = cache_bonus(&(&x * scale), &bank.caches()[0], &config);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn geometric_covariance_trace_never_grows(
        (prior, obs, xs) in (1usize..6).prop_flat_map(|d| (spd(d), spd(d), vec(point(d), 1..30))),
        weights in vec(0.0f64..=1.0, 30),
    ) {
        let d = prior.nrows();
        let mut s = GeometricClassState::from_prior(
            0,
            DVector::zeros(d),
            SpdMatrix::from_matrix(prior).unwrap(),
            SpdMatrix::from_matrix(obs).unwrap(),
        ).unwrap();
        let mut tr = s.post_cov().trace();
        for (x, w) in xs.iter().zip(&weights) {
            s.update_weighted(x, *w).unwrap();
            let next = s.post_cov().trace();
            prop_assert!(next <= tr + 1e-12);
            tr = next;
        }
    }

    #[test]
    fn diagonal_and_full_agree_on_diagonal_matrices(diag in vec(0.1f64..5.0, 1..8), x in vec(-2.0f64..2.0, 8)) {
        let d = diag.len();
        let x = DVector::from_column_slice(&x[..d]);
        let dv = DVector::from_vec(diag);
        let full = SpdMatrix::from_matrix(DMatrix::from_diagonal(&dv)).unwrap();
        let diagonal = SpdMatrix::from_diagonal(dv).unwrap().with_mode(CovarianceMode::Diagonal);
        prop_assert!((full.log_det() - diagonal.log_det()).abs() <= 1e-12);
        prop_assert!((full.inv_quad_form(&x) - diagonal.inv_quad_form(&x)).abs() <= 1e-10);
    }

    #[test]
    fn stream_round_trip(
        (dim, classes) in (1u32..8, 1u32..6),
        raw in vec((any::<i32>(), vec(any::<u32>(), 8)), 0..30),
        flags in 0u32..2,
    ) {
        let records: Vec<StreamRecord> = raw
            .into_iter()
            .map(|(l, f)| StreamRecord {
                label: l.rem_euclid(classes as i32 + 1) - 1,
                feature: f.into_iter().take(dim as usize).map(f32::from_bits).collect(),
            })
            .collect();
        let s = FeatureStream { flags, dim, classes, records };
        let bytes = stream_to_bytes(&s).unwrap();
        prop_assert_eq!(bytes.len() as u64, 28 + s.records.len() as u64 * 4 * (1 + dim as u64));
        let back = decode_stream(&bytes).unwrap();
        prop_assert_eq!(stream_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_display_parses_back(v in 0.0f64..10.0, kind in 0u8..3) {
        let c = match kind {
            0 => Corruption::None,
            1 => Corruption::MeanShift(v),
            _ => Corruption::CovarianceInflate(v + 0.01),
        };
        prop_assert_eq!(c.to_string().parse::<Corruption>().unwrap(), c);
    }
}
