use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::d2l::PatchedBatch;
use crate::error::{Error, Result};
use crate::ml::{DenseMatrix, LabelMatrix};

const MAX_EMPTY_RETRIES: usize = 100;

/// Parameters of the synthetic multi-label generator.
///
/// Labels come from a Gaussian copula: a latent `u ~ N(0, Σ)` where `Σ` has
/// unit diagonal and correlation `correlation` between classes that share a
/// block (zero elsewhere), thresholded per class so that `P(y_k = 1) = π_k`.
/// Each active class is placed in one uniformly chosen patch; a patch's
/// feature vector is the sum of its classes' prototypes plus noise, and the
/// global view is the patch mean plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub patches: usize,
    pub n_total: usize,
    pub n_test: usize,
    /// Marginal positive rate per class, each in `(0, 1)`.
    pub priors: Vec<f64>,
    pub correlation: f64,
    /// Disjoint groups of class indices that co-occur.
    #[serde(default)]
    pub blocks: Vec<Vec<usize>>,
    pub prototype_sigma: f64,
    pub feature_sigma: f64,
    /// Resample instances with no positive label (bounded retries).
    #[serde(default = "default_true")]
    pub require_positive: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl SynthConfig {
    /// A config with the same prior for every class and no correlation.
    pub fn uniform(classes: usize, dim: usize, patches: usize, n_total: usize, n_test: usize, prior: f64, seed: u64) -> Self {
        Self {
            classes,
            dim,
            patches,
            n_total,
            n_test,
            priors: vec![prior; classes],
            correlation: 0.0,
            blocks: Vec::new(),
            prototype_sigma: 1.0,
            feature_sigma: 0.3,
            require_positive: true,
            seed,
        }
    }

    pub fn n_train(&self) -> usize {
        self.n_total - self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("classes", self.classes),
            ("dim", self.dim),
            ("patches", self.patches),
            ("n_total", self.n_total),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.n_test >= self.n_total {
            return Err(Error::config("n_test", "must be smaller than n_total"));
        }
        if self.priors.len() != self.classes {
            return Err(Error::config(
                "priors",
                format!("expected {} entries, got {}", self.classes, self.priors.len()),
            ));
        }
        if let Some((k, p)) = self.priors.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::config(format!("priors[{k}]"), format!("{p} not in (0, 1)")));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::config("correlation", "must lie in [0, 1)"));
        }
        let mut seen = vec![false; self.classes];
        for (b, block) in self.blocks.iter().enumerate() {
            for &k in block {
                if k >= self.classes {
                    return Err(Error::config(format!("blocks[{b}]"), format!("class {k} out of range")));
                }
                if std::mem::replace(&mut seen[k], true) {
                    // Overlapping blocks would give Σ entries that need not be PSD.
                    return Err(Error::config(format!("blocks[{b}]"), format!("class {k} appears in two blocks")));
                }
            }
        }
        for (field, v) in [("prototype_sigma", self.prototype_sigma), ("feature_sigma", self.feature_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Generated data before the labeled / unlabeled split.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: PatchedBatch,
    pub train_labels: LabelMatrix,
    pub test: PatchedBatch,
    pub test_labels: LabelMatrix,
    pub prototypes: DenseMatrix,
    /// For every instance (train first, then test): `(class, patch)` pairs.
    pub placements: Vec<Vec<(usize, usize)>>,
    /// Instances that still had no positive after the retry budget.
    pub empty_after_retries: usize,
}

fn draw_labels<R: Rng>(cfg: &SynthConfig, cutoffs: &[f64], block_of: &[Option<usize>], rng: &mut R) -> Vec<u8> {
    let shared: Vec<f64> = (0..cfg.blocks.len()).map(|_| StandardNormal.sample(rng)).collect();
    let (a, b) = (cfg.correlation.sqrt(), (1.0 - cfg.correlation).sqrt());
    (0..cfg.classes)
        .map(|k| {
            let e: f64 = StandardNormal.sample(rng);
            let u = match block_of[k] {
                Some(g) => a * shared[g] + b * e,
                None => e,
            };
            u8::from(u > cutoffs[k])
        })
        .collect()
}

/// Generates a corpus; bit-reproducible from the config (which carries the seed).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = StdNormal::new(0.0, 1.0).expect("standard normal");
    let cutoffs: Vec<f64> = cfg.priors.iter().map(|&p| std_normal.inverse_cdf(1.0 - p)).collect();
    let mut block_of = vec![None; cfg.classes];
    for (g, block) in cfg.blocks.iter().enumerate() {
        for &k in block {
            block_of[k] = Some(g);
        }
    }

    let (k, d, n) = (cfg.classes, cfg.dim, cfg.patches);
    let proto_dist = Normal::new(0.0, cfg.prototype_sigma).map_err(|e| Error::config("prototype_sigma", e.to_string()))?;
    let feat_dist = Normal::new(0.0, cfg.feature_sigma).map_err(|e| Error::config("feature_sigma", e.to_string()))?;
    let prototypes = DenseMatrix::from_vec(k, d, (0..k * d).map(|_| proto_dist.sample(&mut rng)).collect())?;

    let total = cfg.n_total;
    let mut labels = Vec::with_capacity(total * k);
    let mut global = Vec::with_capacity(total * d);
    let mut patches = vec![Vec::with_capacity(total * d); n];
    let mut placements = Vec::with_capacity(total);
    let mut empty_after_retries = 0;

    for _ in 0..total {
        let mut y = draw_labels(cfg, &cutoffs, &block_of, &mut rng);
        if cfg.require_positive {
            let mut tries = 0;
            while y.iter().all(|&v| v == 0) && tries < MAX_EMPTY_RETRIES {
                y = draw_labels(cfg, &cutoffs, &block_of, &mut rng);
                tries += 1;
            }
            if y.iter().all(|&v| v == 0) {
                empty_after_retries += 1;
            }
        }

        let mut place = Vec::new();
        let mut patch_feats = vec![vec![0.0; d]; n];
        for (c, &yc) in y.iter().enumerate() {
            if yc == 1 {
                let o = rng.random_range(0..n);
                place.push((c, o));
                for (f, &p) in patch_feats[o].iter_mut().zip(prototypes.row(c)) {
                    *f += p;
                }
            }
        }
        for pf in &mut patch_feats {
            for v in pf.iter_mut() {
                *v += feat_dist.sample(&mut rng);
            }
        }
        for j in 0..d {
            let mean = patch_feats.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            global.push(mean + feat_dist.sample(&mut rng));
        }
        for (dst, src) in patches.iter_mut().zip(patch_feats) {
            dst.extend(src);
        }
        labels.extend(y);
        placements.push(place);
    }

    let all = PatchedBatch::new(
        DenseMatrix::from_vec(total, d, global)?,
        patches
            .into_iter()
            .map(|p| DenseMatrix::from_vec(total, d, p))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let all_labels = LabelMatrix::from_vec(total, k, labels)?;
    let n_train = cfg.n_train();
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..total).collect();
    Ok(SyntheticCorpus {
        train: all.select(&train_idx),
        train_labels: all_labels.select_rows(&train_idx),
        test: all.select(&test_idx),
        test_labels: all_labels.select_rows(&test_idx),
        prototypes,
        placements,
        empty_after_retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
        cov / (va * vb).sqrt()
    }

    #[test]
    fn independent_labels_are_uncorrelated() {
        let mut cfg = SynthConfig::uniform(5, 4, 2, 5000, 1, 0.3, 17);
        cfg.require_positive = false;
        let c = generate_synthetic(&cfg).unwrap();
        for i in 0..5 {
            for j in (i + 1)..5 {
                let r = pearson(&c.train_labels.column(i), &c.train_labels.column(j));
                assert!(r.abs() < 0.05, "classes {i},{j}: r = {r}");
            }
        }
    }

    #[test]
    fn block_correlation_shows_up() {
        let mut cfg = SynthConfig::uniform(4, 4, 2, 5000, 1, 0.3, 3);
        cfg.require_positive = false;
        cfg.correlation = 0.8;
        cfg.blocks = vec![vec![0, 1]];
        let c = generate_synthetic(&cfg).unwrap();
        let inside = pearson(&c.train_labels.column(0), &c.train_labels.column(1));
        let outside = pearson(&c.train_labels.column(0), &c.train_labels.column(2));
        assert!(inside > 0.3, "{inside}");
        assert!(outside.abs() < 0.05, "{outside}");
    }

    #[test]
    fn balanced_prior_frequency() {
        let mut cfg = SynthConfig::uniform(6, 3, 1, 5000, 1, 0.5, 5);
        cfg.require_positive = false;
        let c = generate_synthetic(&cfg).unwrap();
        for k in 0..6 {
            let f = c.train_labels.column_positives(k) as f64 / c.train_labels.rows() as f64;
            assert!((f - 0.5).abs() < 0.03, "class {k}: {f}");
        }
    }

    #[test]
    fn reproducible_and_nonempty() {
        let cfg = SynthConfig::uniform(8, 6, 4, 300, 50, 0.1, 99);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        for r in 0..a.train_labels.rows() {
            assert!(a.train_labels.row(r).contains(&1));
        }
    }

    #[test]
    fn noiseless_patches_match_placements() {
        let mut cfg = SynthConfig::uniform(5, 7, 4, 60, 10, 0.4, 1);
        cfg.feature_sigma = 0.0;
        let c = generate_synthetic(&cfg).unwrap();
        for (i, place) in c.placements.iter().take(c.train.len()).enumerate() {
            let inst = c.train.crop(i, 4).unwrap();
            let mut expected = vec![vec![0.0; 7]; 4];
            for &(class, patch) in place {
                for (e, &p) in expected[patch].iter_mut().zip(c.prototypes.row(class)) {
                    *e += p;
                }
            }
            for (o, e) in expected.iter().enumerate() {
                for (a, b) in inst.patches[o].iter().zip(e) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = SynthConfig::uniform(3, 2, 1, 10, 2, 0.3, 0);
        cfg.blocks = vec![vec![0, 1], vec![1, 2]];
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config { .. })));
        cfg.blocks = vec![vec![5]];
        assert!(generate_synthetic(&cfg).is_err());
        cfg.blocks.clear();
        cfg.priors[0] = 1.0;
        assert!(generate_synthetic(&cfg).is_err());
    }
}
