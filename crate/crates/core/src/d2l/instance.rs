use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentMode, AugmentSpec};
use crate::error::{Error, Result};
use crate::ml::DenseMatrix;

/// One instance seen whole (`global`) and as `n` equal-size patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchedInstance {
    pub global: Vec<f64>,
    pub patches: Vec<Vec<f64>>,
}

impl PatchedInstance {
    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }
}

/// A set of instances stored column-wise: one `rows x d` matrix for the
/// global views and one per patch position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchedBatch {
    pub global: DenseMatrix,
    pub patches: Vec<DenseMatrix>,
}

impl PatchedBatch {
    pub fn new(global: DenseMatrix, patches: Vec<DenseMatrix>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Validation("an instance needs at least one patch".into()));
        }
        for p in &patches {
            if p.shape() != global.shape() {
                return Err(Error::dim(
                    "PatchedBatch::new",
                    format!("{:?}", global.shape()),
                    format!("{:?}", p.shape()),
                ));
            }
        }
        Ok(Self { global, patches })
    }

    pub fn empty(dim: usize, n_patches: usize) -> Self {
        Self {
            global: DenseMatrix::empty(dim),
            patches: vec![DenseMatrix::empty(dim); n_patches.max(1)],
        }
    }

    pub fn from_instances(instances: &[PatchedInstance]) -> Result<Self> {
        let Some(first) = instances.first() else {
            return Err(Error::Validation("no instances".into()));
        };
        let n = first.n_patches();
        let globals: Vec<&[f64]> = instances.iter().map(|i| i.global.as_slice()).collect();
        let global = DenseMatrix::from_rows(&globals)?;
        let mut patches = Vec::with_capacity(n);
        for o in 0..n {
            let rows: Result<Vec<&[f64]>> = instances
                .iter()
                .map(|i| {
                    i.patches
                        .get(o)
                        .map(Vec::as_slice)
                        .ok_or_else(|| Error::dim("PatchedBatch::from_instances", n, i.n_patches()))
                })
                .collect();
            patches.push(DenseMatrix::from_rows(&rows?)?);
        }
        Self::new(global, patches)
    }

    pub fn len(&self) -> usize {
        self.global.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.global.cols()
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    /// Looks up instance `i` in its stored decomposition. The requested patch
    /// count must match the stored one.
    pub fn crop(&self, i: usize, n: usize) -> Result<PatchedInstance> {
        if n != self.n_patches() {
            return Err(Error::dim("crop", self.n_patches(), n));
        }
        if i >= self.len() {
            return Err(Error::Validation(format!("instance {i} out of range ({})", self.len())));
        }
        Ok(PatchedInstance {
            global: self.global.row(i).to_vec(),
            patches: self.patches.iter().map(|p| p.row(i).to_vec()).collect(),
        })
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            global: self.global.select_rows(indices),
            patches: self.patches.iter().map(|p| p.select_rows(indices)).collect(),
        }
    }

    /// Augments the global view and every patch with independent draws.
    pub fn augmented<R: Rng + ?Sized>(&self, spec: &AugmentSpec, mode: AugmentMode, rng: &mut R) -> Self {
        Self {
            global: augment(&self.global, spec, mode, rng),
            patches: self.patches.iter().map(|p| augment(p, spec, mode, rng)).collect(),
        }
    }
}
