//! Many experiments at once: a base config, a list of variants expressed as
//! JSON merge patches, and a list of seeds. Runs are independent and execute
//! in parallel; results are collected in a fixed order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, write_run, ExperimentRun};
use crate::data::format_real;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    /// Merge patch applied to the base config's JSON.
    #[serde(default)]
    pub overrides: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub base: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Also write every run's report and traces, not just the tables.
    #[serde(default)]
    pub write_runs: bool,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].iter().any(|o| o.label == v.label) {
                return Err(Error::config(format!("variants[{i}].label"), format!("duplicate label {:?}", v.label)));
            }
            self.variant_config(v, self.seeds[0])?;
        }
        Ok(())
    }

    /// The experiment config of one (variant, seed) cell.
    pub fn variant_config(&self, variant: &Variant, seed: u64) -> Result<ExperimentConfig> {
        let mut doc = serde_json::to_value(&self.base)?;
        json_patch::merge(&mut doc, &variant.overrides);
        let mut cfg: ExperimentConfig = serde_json::from_value(doc)
            .map_err(|e| Error::config(format!("variants.{}", variant.label), e.to_string()))?;
        cfg.name = format!("{}/{}/seed_{seed}", self.name, variant.label);
        cfg.seed = seed;
        cfg.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("variants.{}.{field}", variant.label), message),
            other => other,
        })?;
        Ok(cfg)
    }
}

/// Headline numbers of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub seed: u64,
    pub map: f64,
    pub cf1: f64,
    pub of1: f64,
    pub pseudo_cf1: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl SweepRow {
    fn of(variant: &str, seed: u64, run: &ExperimentRun) -> Self {
        let r = &run.report;
        Self {
            variant: variant.into(),
            seed,
            map: r.test.map,
            cf1: r.test.cf1,
            of1: r.test.of1,
            pseudo_cf1: r.final_pseudo_quality().map(|q| q.cf1),
            best_epoch: r.best_epoch,
            epochs_run: r.epochs.len(),
        }
    }
}

/// Per-variant means and sample standard deviations over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub map_mean: f64,
    pub map_std: f64,
    pub cf1_mean: f64,
    pub of1_mean: f64,
    pub pseudo_cf1_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<VariantSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepResult {
    pub fn variant(&self, label: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == label)
    }

    pub fn comparison_csv(&self) -> String {
        let mut s = String::from("variant,seed,map,cf1,of1,pseudo_cf1,best_epoch,epochs_run\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.variant,
                r.seed,
                format_real(r.map),
                format_real(r.cf1),
                format_real(r.of1),
                r.pseudo_cf1.map(format_real).unwrap_or_default(),
                r.best_epoch,
                r.epochs_run
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("variant,runs,map_mean,map_std,cf1_mean,of1_mean,pseudo_cf1_mean\n");
        for v in &self.summary {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                v.variant,
                v.runs,
                format_real(v.map_mean),
                format_real(v.map_std),
                format_real(v.cf1_mean),
                format_real(v.of1_mean),
                v.pseudo_cf1_mean.map(format_real).unwrap_or_default()
            );
        }
        s
    }
}

fn summarize(variants: &[Variant], rows: &[SweepRow]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|v| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.variant == v.label).collect();
            let col = |f: fn(&SweepRow) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (map_mean, map_std) = mean_std(&col(|r| r.map));
            let pseudo: Vec<f64> = mine.iter().filter_map(|r| r.pseudo_cf1).collect();
            VariantSummary {
                variant: v.label.clone(),
                runs: mine.len(),
                map_mean,
                map_std,
                cf1_mean: mean_std(&col(|r| r.cf1)).0,
                of1_mean: mean_std(&col(|r| r.of1)).0,
                pseudo_cf1_mean: (pseudo.len() == mine.len()).then(|| mean_std(&pseudo).0),
            }
        })
        .collect()
}

/// Runs every (variant, seed) cell. With `out_dir`, writes `comparison.csv`,
/// `summary.csv` and `sweep.json` there (plus per-run outputs when
/// `write_runs` is set).
pub fn run_sweep(cfg: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepResult> {
    cfg.validate()?;
    let cells: Vec<(&Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(v, seed)| {
            let exp = cfg.variant_config(v, seed)?;
            let run = run_experiment(&exp)?;
            if let (Some(dir), true) = (out_dir, cfg.write_runs) {
                write_run(dir.join(&v.label).join(format!("seed_{seed}")), &run)?;
            }
            Ok(SweepRow::of(&v.label, seed, &run))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = SweepResult {
        name: cfg.name.clone(),
        summary: summarize(&cfg.variants, &rows),
        rows,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("comparison.csv", result.comparison_csv())?;
        put("summary.csv", result.summary_csv())?;
        put("sweep.json", serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthConfig;
    use crate::harness::TrainConfig;
    use serde_json::json;

    fn sweep() -> SweepConfig {
        SweepConfig {
            name: "s".into(),
            base: ExperimentConfig {
                name: "base".into(),
                seed: 0,
                labeled_fraction: 0.2,
                data: SynthConfig::uniform(3, 6, 2, 200, 60, 0.3, 0),
                train: TrainConfig {
                    epochs: 1,
                    warmup_epochs: 1,
                    backbone: crate::ml::BackboneSpec::Identity,
                    ..Default::default()
                },
            },
            seeds: vec![1, 2],
            variants: vec![
                Variant {
                    label: "mat".into(),
                    overrides: json!({}),
                },
                Variant {
                    label: "fixed".into(),
                    overrides: json!({"train": {"strategy": {"kind": "fixed", "tau": 0.5}}}),
                },
            ],
            write_runs: false,
        }
    }

    #[test]
    fn overrides_merge_into_base() {
        let s = sweep();
        let c = s.variant_config(&s.variants[1], 9).unwrap();
        assert_eq!(c.train.strategy, crate::harness::Strategy::Fixed { tau: 0.5 });
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.epochs, 1);
    }

    #[test]
    fn bad_override_names_the_variant() {
        let mut s = sweep();
        s.variants[1].overrides = json!({"train": {"alpha": -1.0}});
        let err = s.validate().unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "variants.fixed.train.alpha"), "{err}");
        let mut s = sweep();
        s.variants[1].label = "mat".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn tables_cover_every_cell() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_sweep(&sweep(), Some(dir.path())).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.summary.len(), 2);
        assert_eq!(r.variant("mat").unwrap().runs, 2);
        let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(dir.path().join("summary.csv").exists());
    }
}
