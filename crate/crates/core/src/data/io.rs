//! CSV matrices and dataset manifests.
//!
//! Matrices are written with a header row (`class_0,…,class_{K-1}` by
//! default) and one row per instance. Real values use 17 significant digits
//! so every `f64` survives a round trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::split::{AuditLabels, SsmllDataset};
use super::synth::SynthConfig;
use crate::d2l::PatchedBatch;
use crate::error::{Error, Result};
use crate::ml::{DenseMatrix, LabelMatrix};

/// 17-significant-digit decimal rendering.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(prefix: &str, cols: usize) -> String {
    (0..cols).map(|j| format!("{prefix}{j}")).collect::<Vec<_>>().join(",")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn matrix_to_csv(m: &DenseMatrix, prefix: &str) -> String {
    let mut s = header(prefix, m.cols());
    s.push('\n');
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| format_real(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Writes a real matrix with a `class_j` header.
pub fn save_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    save_matrix_with_prefix(path, m, "class_")
}

pub fn save_matrix_with_prefix(path: impl AsRef<Path>, m: &DenseMatrix, prefix: &str) -> Result<()> {
    write_file(path.as_ref(), &matrix_to_csv(m, prefix))
}

/// Writes a binary matrix as `0` / `1` cells with a `class_j` header.
pub fn save_labels(path: impl AsRef<Path>, m: &LabelMatrix) -> Result<()> {
    let mut s = header("class_", m.cols());
    s.push('\n');
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    write_file(path.as_ref(), &s)
}

/// Parses CSV text produced by [`save_matrix`]. `name` is used in errors.
pub fn parse_matrix(text: &str, name: &str) -> Result<DenseMatrix> {
    let perr = |row: usize, col: usize, message: String| Error::Parse {
        file: name.to_string(),
        row,
        col,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, head)) = lines.next() else {
        return Err(perr(1, 1, "missing header row".into()));
    };
    let head_cells: Vec<&str> = head.split(',').map(str::trim).collect();
    if head_cells.iter().all(|c| c.parse::<f64>().is_ok()) {
        return Err(perr(1, 1, "missing header row (first row is numeric)".into()));
    }
    let cols = head_cells.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(perr(idx + 1, cells.len().min(cols) + 1, format!("expected {cols} cells, found {}", cells.len())));
        }
        for (j, c) in cells.iter().enumerate() {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| perr(idx + 1, j + 1, format!("not a number: {c:?}")))?;
            if !v.is_finite() {
                return Err(perr(idx + 1, j + 1, format!("non-finite value {c:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    LabelMatrix::from_dense(&load_matrix(path)?)
}

/// Files of one split, relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub global: String,
    pub patches: Vec<String>,
    pub labels: Option<String>,
    /// True labels of the unlabeled pool, for pseudo-label audits only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_labels: Option<String>,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: usize,
    pub dim: usize,
    pub patches: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub labeled_fraction: f64,
    pub config_hash: String,
    pub degenerate_classes: Vec<usize>,
    pub splits: BTreeMap<String, SplitFiles>,
}

/// SHA-256 of the config's canonical JSON encoding.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

fn write_split(
    dir: &Path,
    name: &str,
    batch: &PatchedBatch,
    labels: Option<&LabelMatrix>,
    audit: Option<&LabelMatrix>,
) -> Result<SplitFiles> {
    let global = format!("{name}/global.csv");
    save_matrix_with_prefix(dir.join(&global), &batch.global, "feat_")?;
    let mut patches = Vec::new();
    for (o, p) in batch.patches.iter().enumerate() {
        let f = format!("{name}/patch_{o}.csv");
        save_matrix_with_prefix(dir.join(&f), p, "feat_")?;
        patches.push(f);
    }
    let labels = labels
        .map(|l| {
            let f = format!("{name}/labels.csv");
            save_labels(dir.join(&f), l).map(|_| f)
        })
        .transpose()?;
    let audit_labels = audit
        .map(|l| {
            let f = format!("{name}/audit_labels.csv");
            save_labels(dir.join(&f), l).map(|_| f)
        })
        .transpose()?;
    fs::write(dir.join(name).join("split.json"), serde_json::to_string_pretty(&SplitFiles {
        global: "global.csv".into(),
        patches: (0..batch.n_patches()).map(|o| format!("patch_{o}.csv")).collect(),
        labels: labels.as_ref().map(|_| "labels.csv".into()),
        audit_labels: audit_labels.as_ref().map(|_| "audit_labels.csv".into()),
        rows: batch.len(),
    })?)
    .map_err(|e| Error::io(dir.join(name), e))?;
    Ok(SplitFiles {
        global,
        patches,
        labels,
        audit_labels,
        rows: batch.len(),
    })
}

/// Writes every split as CSV plus `manifest.json` under `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    data: &SsmllDataset,
    cfg: &SynthConfig,
    labeled_fraction: f64,
    split_seed: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut splits = BTreeMap::new();
    splits.insert("labeled".into(), write_split(dir, "labeled", &data.labeled, Some(&data.labels), None)?);
    splits.insert(
        "unlabeled".into(),
        write_split(dir, "unlabeled", &data.unlabeled, None, Some(data.audit.for_audit()))?,
    );
    splits.insert("test".into(), write_split(dir, "test", &data.test, Some(&data.test_labels), None)?);
    let manifest = DatasetManifest {
        classes: data.classes(),
        dim: data.dim(),
        patches: data.n_patches(),
        seed: cfg.seed,
        split_seed,
        labeled_fraction,
        config_hash: config_hash(cfg)?,
        degenerate_classes: data.degenerate_classes.clone(),
        splits,
    };
    let path = dir.join("manifest.json");
    write_file(&path, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// A split read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSplit {
    pub batch: PatchedBatch,
    pub labels: Option<LabelMatrix>,
    pub audit: Option<AuditLabels>,
}

/// Reads a split directory written by [`write_dataset`] (it holds `split.json`).
pub fn read_split(dir: impl AsRef<Path>) -> Result<LoadedSplit> {
    let dir = dir.as_ref();
    let meta_path = dir.join("split.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let files: SplitFiles = serde_json::from_str(&text)?;
    let global = load_matrix(dir.join(&files.global))?;
    let patches = files
        .patches
        .iter()
        .map(|p| load_matrix(dir.join(p)))
        .collect::<Result<Vec<_>>>()?;
    let batch = PatchedBatch::new(global, patches)?;
    let labels = files.labels.as_ref().map(|f| load_labels(dir.join(f))).transpose()?;
    let audit = files
        .audit_labels
        .as_ref()
        .map(|f| load_labels(dir.join(f)).map(AuditLabels::new))
        .transpose()?;
    if let Some(l) = &labels {
        if l.rows() != batch.len() {
            return Err(Error::dim("read_split labels", batch.len(), l.rows()));
        }
    }
    Ok(LoadedSplit { batch, labels, audit })
}
