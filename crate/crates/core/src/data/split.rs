use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::SyntheticCorpus;
use crate::d2l::PatchedBatch;
use crate::error::{Error, Result};
use crate::ml::LabelMatrix;

/// True labels of the unlabeled pool, kept only for measuring pseudo-label
/// quality. Training code never takes this type.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditLabels(LabelMatrix);

impl AuditLabels {
    pub fn new(labels: LabelMatrix) -> Self {
        Self(labels)
    }

    pub fn for_audit(&self) -> &LabelMatrix {
        &self.0
    }
}

/// Labeled, unlabeled and test splits of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmllDataset {
    pub labeled: PatchedBatch,
    pub labels: LabelMatrix,
    pub unlabeled: PatchedBatch,
    pub audit: AuditLabels,
    pub test: PatchedBatch,
    pub test_labels: LabelMatrix,
    /// Classes with no positive in the labeled split.
    pub degenerate_classes: Vec<usize>,
}

impl SsmllDataset {
    pub fn classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn dim(&self) -> usize {
        self.labeled.dim()
    }

    pub fn n_patches(&self) -> usize {
        self.labeled.n_patches()
    }
}

/// Number of labeled instances for proportion `p` of `n_train`.
pub fn labeled_count(n_train: usize, p: f64) -> usize {
    ((p * n_train as f64).round() as usize).clamp(1, n_train)
}

/// Randomly marks a proportion `p` of the training instances as labeled; the
/// rest become the unlabeled pool.
pub fn split_labeled(corpus: &SyntheticCorpus, p: f64, seed: u64) -> Result<SsmllDataset> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config("labeled_fraction", format!("{p} not in (0, 1)")));
    }
    let n_train = corpus.train.len();
    if n_train == 0 {
        return Err(Error::Validation("no training instances to split".into()));
    }
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_labeled = labeled_count(n_train, p);
    let (lab, unl) = order.split_at(n_labeled);

    let labels = corpus.train_labels.select_rows(lab);
    let degenerate_classes: Vec<usize> = (0..labels.cols()).filter(|&k| labels.column_positives(k) == 0).collect();
    Ok(SsmllDataset {
        labeled: corpus.train.select(lab),
        labels,
        unlabeled: corpus.train.select(unl),
        audit: AuditLabels::new(corpus.train_labels.select_rows(unl)),
        test: corpus.test.clone(),
        test_labels: corpus.test_labels.clone(),
        degenerate_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn corpus() -> SyntheticCorpus {
        generate_synthetic(&SynthConfig::uniform(4, 3, 2, 1100, 100, 0.3, 2)).unwrap()
    }

    #[test]
    fn proportion_sizes() {
        let c = corpus();
        let s = split_labeled(&c, 0.05, 1).unwrap();
        assert_eq!(s.labeled.len(), 50);
        assert_eq!(s.unlabeled.len(), 950);
        assert_eq!(s.audit.for_audit().rows(), 950);
        assert_eq!(labeled_count(10, 0.01), 1);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let c = corpus();
        let a = split_labeled(&c, 0.1, 7).unwrap();
        let b = split_labeled(&c, 0.1, 7).unwrap();
        assert_eq!(a, b);
        // Rows of the corpus are distinct with probability 1, so checking
        // global rows for overlap checks index disjointness.
        for i in 0..a.labeled.len() {
            let row = a.labeled.global.row(i);
            assert!((0..a.unlabeled.len()).all(|j| a.unlabeled.global.row(j) != row));
        }
    }

    #[test]
    fn rejects_bad_proportion() {
        let c = corpus();
        assert!(split_labeled(&c, 0.0, 1).is_err());
        assert!(split_labeled(&c, 1.0, 1).is_err());
    }
}
