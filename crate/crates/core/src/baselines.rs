//! Zero-shot prototype scoring and the cache-based comparison baseline.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::argmax;

/// `logit[c] = z_cᵀ x`.
pub fn zero_shot_logits(x: &DVector<f64>, prototypes: &[DVector<f64>]) -> Result<Vec<f64>> {
    prototypes
        .iter()
        .map(|z| {
            Error::check_dim(z.len(), x.len())?;
            Ok(z.dot(x))
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cosine similarity with a zero-vector guard returning 0.
pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        (a.dot(b) / denom).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub feature: DVector<f64>,
    /// Max zero-shot softmax probability when the entry was inserted.
    pub confidence: f64,
    seq: u64,
}

/// Bounded per-class store of confidently predicted test features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCache {
    capacity: usize,
    entries: Vec<CacheEntry>,
}

impl ClassCache {
    pub fn new(capacity: usize) -> Self {
        ClassCache { capacity, entries: Vec::with_capacity(capacity + 1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean(&self) -> Option<DVector<f64>> {
        let first = self.entries.first()?;
        let mut sum = DVector::zeros(first.feature.len());
        for e in &self.entries {
            sum += &e.feature;
        }
        Some(sum / self.entries.len() as f64)
    }

    /// Inserts, then evicts the lowest-confidence entry (oldest on ties) if over capacity.
    fn insert(&mut self, feature: DVector<f64>, confidence: f64, seq: u64) {
        self.entries.push(CacheEntry { feature, confidence, seq });
        if self.entries.len() > self.capacity {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.confidence.total_cmp(&b.confidence).then(a.seq.cmp(&b.seq)))
                .map(|(i, _)| i)
                .expect("cache is nonempty");
            self.entries.remove(victim);
        }
    }
}

/// How the cosine term compares a sample against a class cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheSimilarity {
    /// Cosine against the mean of the cached features.
    #[default]
    Mean,
    /// Largest cosine over individual entries.
    MaxEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub capacity: usize,
    pub insert_threshold: f64,
    pub similarity: CacheSimilarity,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { lambda: 1.0, gamma: 1.0, capacity: 3, insert_threshold: 0.0, similarity: CacheSimilarity::Mean }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.capacity == 0 {
            return Err(Error::Config("cache capacity must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.insert_threshold) {
            return Err(Error::Config(format!("insert_threshold must lie in [0, 1], got {}", self.insert_threshold)));
        }
        Ok(())
    }
}

/// Class caches plus an insertion counter for tie-breaking evictions.
#[derive(Debug, Clone)]
pub struct CacheBank {
    caches: Vec<ClassCache>,
    inserted: u64,
}

impl CacheBank {
    pub fn new(classes: usize, capacity: usize) -> Self {
        CacheBank { caches: vec![ClassCache::new(capacity); classes], inserted: 0 }
    }

    pub fn caches(&self) -> &[ClassCache] {
        &self.caches
    }

    /// Inserts `x` into the argmax class when its probability reaches the threshold.
    /// Returns the class that received the entry.
    pub fn update(&mut self, x: &DVector<f64>, zero_shot_posterior: &[f64], config: &CacheConfig) -> Result<Option<usize>> {
        if zero_shot_posterior.len() != self.caches.len() {
            return Err(Error::invalid("posterior length differs from class count"));
        }
        let total: f64 = zero_shot_posterior.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("posterior sums to {total}")));
        }
        let c = argmax(zero_shot_posterior);
        let p = zero_shot_posterior[c];
        if p < config.insert_threshold {
            return Ok(None);
        }
        self.caches[c].insert(x.clone(), p, self.inserted);
        self.inserted += 1;
        Ok(Some(c))
    }
}

/// Bonus term `λ·exp(-γ[1 - cos])` for one class; zero for an empty cache.
pub fn cache_bonus(x: &DVector<f64>, cache: &ClassCache, config: &CacheConfig) -> f64 {
    let cos = match config.similarity {
        CacheSimilarity::Mean => match cache.mean() {
            Some(m) => cosine(x, &m),
            None => return 0.0,
        },
        CacheSimilarity::MaxEntry => {
            if cache.is_empty() {
                return 0.0;
            }
            cache.entries().iter().map(|e| cosine(x, &e.feature)).fold(f64::NEG_INFINITY, f64::max)
        }
    };
    config.lambda * (-config.gamma * (1.0 - cos)).exp()
}

/// Zero-shot logits plus the cache bonus of each class.
pub fn cache_score(
    x: &DVector<f64>,
    prototypes: &[DVector<f64>],
    caches: &[ClassCache],
    config: &CacheConfig,
) -> Result<Vec<f64>> {
    if caches.len() != prototypes.len() {
        return Err(Error::invalid("one cache per class required"));
    }
    let mut scores = zero_shot_logits(x, prototypes)?;
    if config.lambda == 0.0 {
        return Ok(scores);
    }
    for (s, cache) in scores.iter_mut().zip(caches) {
        if !cache.is_empty() {
            *s += cache_bonus(x, cache, config);
        }
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn zero_shot_orthogonal_prototypes() {
        let protos = [v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0]), v(&[0.0, 0.0, 1.0])];
        assert_eq!(zero_shot_logits(&v(&[1.0, 0.0, 0.0]), &protos).unwrap(), vec![1.0, 0.0, 0.0]);
        let protos = [v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0])];
        assert_eq!(zero_shot_logits(&v(&[0.0, 0.0, 1.0]), &protos).unwrap(), vec![0.0, 0.0]);
        assert!(zero_shot_logits(&v(&[0.0, 1.0]), &protos).is_err());
    }

    #[test]
    fn lambda_zero_collapses() {
        let protos = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let mut bank = CacheBank::new(2, 3);
        let cfg = CacheConfig { lambda: 0.0, ..CacheConfig::default() };
        bank.update(&v(&[0.9, 0.1]), &[0.7, 0.3], &cfg).unwrap();
        let x = v(&[0.3, 0.8]);
        assert_eq!(cache_score(&x, &protos, bank.caches(), &cfg).unwrap(), zero_shot_logits(&x, &protos).unwrap());
    }

    #[test]
    fn cache_mean_equal_to_x_adds_lambda() {
        let protos = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let cfg = CacheConfig { lambda: 0.7, gamma: 3.0, ..CacheConfig::default() };
        let mut bank = CacheBank::new(2, 3);
        let x = v(&[0.6, 0.8]);
        bank.update(&x, &[0.6, 0.4], &cfg).unwrap();
        let s = cache_score(&x, &protos, bank.caches(), &cfg).unwrap();
        assert_abs_diff_eq!(s[0], 0.6 + 0.7, epsilon = 1e-15);
        assert_eq!(s[1], 0.8);
    }

    #[test]
    fn hand_evaluated_scores() {
        let protos = [v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0]), v(&[0.0, 0.0, 1.0])];
        let cfg = CacheConfig { lambda: 1.0, gamma: 2.0, capacity: 3, ..CacheConfig::default() };
        let mut bank = CacheBank::new(3, 3);
        bank.update(&v(&[1.0, 0.0, 0.0]), &[0.5, 0.25, 0.25], &cfg).unwrap();
        bank.update(&v(&[0.0, 1.0, 0.0]), &[0.5, 0.25, 0.25], &cfg).unwrap();
        bank.update(&v(&[0.0, 0.0, 2.0]), &[0.2, 0.3, 0.5], &cfg).unwrap();
        let x = v(&[0.5, 0.5, 0.0]);
        let s = cache_score(&x, &protos, bank.caches(), &cfg).unwrap();
        // class 0 cache mean (0.5, 0.5, 0): cos = 1 → bonus 1
        assert_abs_diff_eq!(s[0], 0.5 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 1e-12);
        // class 2 cache (0, 0, 2): cos = 0 → bonus exp(-2)
        assert_abs_diff_eq!(s[2], (-2f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn max_entry_similarity() {
        let cfg = CacheConfig { similarity: CacheSimilarity::MaxEntry, ..CacheConfig::default() };
        let mut bank = CacheBank::new(1, 3);
        bank.update(&v(&[1.0, 0.0]), &[1.0], &cfg).unwrap();
        bank.update(&v(&[0.0, 1.0]), &[1.0], &cfg).unwrap();
        let b = cache_bonus(&v(&[0.0, 3.0]), &bank.caches()[0], &cfg);
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn first_insert_and_threshold() {
        let cfg = CacheConfig { insert_threshold: 0.6, ..CacheConfig::default() };
        let mut bank = CacheBank::new(2, 2);
        assert_eq!(bank.update(&v(&[1.0, 0.0]), &[0.55, 0.45], &cfg).unwrap(), None);
        assert!(bank.caches().iter().all(ClassCache::is_empty));
        assert_eq!(bank.update(&v(&[1.0, 0.0]), &[0.4, 0.6], &cfg).unwrap(), Some(1));
        assert_eq!(bank.caches()[1].len(), 1);
    }

    #[test]
    fn eviction_drops_lowest_confidence() {
        let cfg = CacheConfig { capacity: 2, ..CacheConfig::default() };
        let mut bank = CacheBank::new(2, 2);
        bank.update(&v(&[1.0, 0.0]), &[0.9, 0.1], &cfg).unwrap();
        bank.update(&v(&[1.0, 0.1]), &[0.8, 0.2], &cfg).unwrap();
        bank.update(&v(&[1.0, 0.2]), &[0.85, 0.15], &cfg).unwrap();
        let conf: Vec<f64> = bank.caches()[0].entries().iter().map(|e| e.confidence).collect();
        assert_eq!(conf, vec![0.9, 0.85]);
    }

    #[test]
    fn eviction_ties_drop_oldest() {
        let cfg = CacheConfig { capacity: 2, ..CacheConfig::default() };
        let mut bank = CacheBank::new(2, 2);
        bank.update(&v(&[1.0, 0.0]), &[0.75, 0.25], &cfg).unwrap();
        bank.update(&v(&[2.0, 0.0]), &[0.75, 0.25], &cfg).unwrap();
        bank.update(&v(&[3.0, 0.0]), &[0.75, 0.25], &cfg).unwrap();
        let firsts: Vec<f64> = bank.caches()[0].entries().iter().map(|e| e.feature[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0]);
    }

    #[test]
    fn rejects_unnormalized_posterior() {
        let mut bank = CacheBank::new(2, 2);
        assert!(bank.update(&v(&[1.0, 0.0]), &[0.5, 0.6], &CacheConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CacheConfig { capacity: 0, ..CacheConfig::default() }.validate().is_err());
        assert!(CacheConfig { lambda: -1.0, ..CacheConfig::default() }.validate().is_err());
        assert!(CacheConfig::default().validate().is_ok());
    }

    #[test]
    fn cosine_zero_guard() {
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), 0.0);
    }
}
