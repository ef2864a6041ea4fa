//! Synthetic correlated multi-label data, labeled/unlabeled splitting, and
//! on-disk formats.

mod io;
mod split;
mod synth;

pub use io::{
    config_hash, format_real, load_labels, load_matrix, matrix_to_csv, parse_matrix, read_split,
    save_labels, save_matrix, save_matrix_with_prefix, write_dataset, DatasetManifest, LoadedSplit,
    SplitFiles,
};
pub use split::{labeled_count, split_labeled, AuditLabels, SsmllDataset};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};
