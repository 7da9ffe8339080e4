//! Train-and-evaluate runs and ablation grids over module toggles.
//!
//! Every run of seed `s` initializes from stream `Init` of `s`, trains on
//! streams of `s` and evaluates with `s`, whatever the configuration. Rows
//! are therefore independent of grid order, and configurations sharing a
//! seed see the same initial weights and episodes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Benchmark;
use crate::episode::{evaluate, train_model, EvalReport, StepMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::layers::HfeInput;
use crate::lfr::{GammaDist, ReplaceMode};
use crate::model::{HfeConfig, ModelConfig, ModelState, NUM_BLOCKS};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_tasks: usize,
    pub m_query: usize,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_tasks: 1000,
            m_query: 16,
            threads: 1,
        }
    }
}

/// Everything one training and evaluation run needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.n_way != self.train.n_way {
            return Err(Error::config(
                "model.n_way",
                format!("{} differs from train.n_way {}", self.model.n_way, self.train.n_way),
            ));
        }
        if self.eval.n_tasks == 0 {
            return Err(Error::config("eval.n_tasks", "must be positive"));
        }
        Ok(())
    }

    /// Baseline: no frequency modules and no pseudo-task loss.
    pub fn baseline(mut self) -> Self {
        self.model.backbone = self.model.backbone.with_modules(false, false);
        self.train.loss_terms.pseudo = false;
        self
    }
}

/// Overrides applied to a base configuration; `None` keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationDelta {
    pub name: String,
    pub lfr: Option<bool>,
    pub hfe: Option<bool>,
    pub gff: Option<bool>,
    pub gamma: Option<GammaDist>,
    pub mode: Option<ReplaceMode>,
    pub hfe_band: Option<(f64, f64)>,
    pub hfe_input: Option<HfeInput>,
}

impl AblationDelta {
    pub fn modules(name: &str, lfr: bool, hfe: bool, gff: bool) -> Self {
        AblationDelta {
            name: name.to_string(),
            lfr: Some(lfr),
            hfe: Some(hfe),
            gff: Some(gff),
            ..AblationDelta::default()
        }
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        if let Some(on) = self.lfr {
            cfg.train.loss_terms.pseudo = on;
        }
        if let Some(on) = self.hfe {
            cfg.model.backbone.hfe_enabled = vec![on; NUM_BLOCKS];
        }
        if let Some(on) = self.gff {
            cfg.model.backbone.gff_enabled = vec![on; NUM_BLOCKS];
        }
        if let Some(g) = self.gamma {
            cfg.train.lfr.gamma = g;
        }
        if let Some(m) = self.mode {
            cfg.train.lfr.mode = m;
        }
        let HfeConfig { band, input } = cfg.model.hfe;
        cfg.model.hfe = HfeConfig {
            band: self.hfe_band.unwrap_or(band),
            input: self.hfe_input.unwrap_or(input),
        };
        cfg
    }
}

/// The eight module-removal configurations: baseline, each single module,
/// each pair, and all three.
pub fn standard_grid() -> Vec<AblationDelta> {
    let mut grid = Vec::with_capacity(8);
    for (lfr, hfe, gff) in [
        (false, false, false),
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (true, true, false),
        (true, false, true),
        (false, true, true),
        (true, true, true),
    ] {
        let name = match (lfr, hfe, gff) {
            (false, false, false) => "baseline".to_string(),
            (true, true, true) => "full".to_string(),
            _ => [("lfr", lfr), ("hfe", hfe), ("gff", gff)]
                .iter()
                .filter(|(_, on)| *on)
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join("+"),
        };
        grid.push(AblationDelta::modules(&name, lfr, hfe, gff));
    }
    grid
}

/// A trained model with its history and test-split evaluation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: ModelState,
    pub history: Vec<StepMetrics>,
    pub eval: EvalReport,
}

/// Trains a fresh model with `seed` and evaluates it on the target test split.
pub fn run_experiment(bench: &Benchmark, cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.train.seed = seed;
    cfg.validate()?;
    let mut model = ModelState::new(cfg.model.clone(), &mut stream_rng(seed, Stream::Init))?;
    let history = train_model(&mut model, bench, &cfg.train, |_| Ok(()))?;
    let eval = evaluate(
        &bench.target_test,
        &model,
        cfg.train.n_way,
        cfg.train.k_shot,
        cfg.eval.m_query,
        cfg.eval.n_tasks,
        seed,
        cfg.eval.threads,
    )?;
    Ok(RunResult { model, history, eval })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

impl AblationRow {
    pub fn new(name: &str, seeds: &[u64], accuracies: Vec<f64>) -> Self {
        let n = accuracies.len().max(1) as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        AblationRow {
            name: name.to_string(),
            seeds: seeds.to_vec(),
            accuracies,
            mean,
            std,
        }
    }
}

/// Trains and evaluates every `(delta, seed)` pair; `on_run` sees each result.
pub fn run_ablation_suite(
    bench: &Benchmark,
    base: &ExperimentConfig,
    grid: &[AblationDelta],
    seeds: &[u64],
    mut on_run: impl FnMut(&AblationDelta, u64, &RunResult) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for delta in grid {
        let cfg = delta.apply(base);
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = run_experiment(bench, &cfg, seed)?;
            log::info!("{} seed {seed}: {:.4} ± {:.4}", delta.name, run.eval.mean, run.eval.ci95);
            on_run(delta, seed, &run)?;
            accs.push(run.eval.mean);
        }
        rows.push(AblationRow::new(&delta.name, seeds, accs));
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: [&str; 5] = ["config", "n_seeds", "mean_acc", "std_acc", "accs"];

/// One row per configuration; `accs` holds the per-seed accuracies joined by `;`.
pub fn write_ablation_csv<W: std::io::Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_CSV_HEADER)?;
    for r in rows {
        let accs: Vec<String> = r.accuracies.iter().map(f64::to_string).collect();
        w.write_record([
            r.name.clone(),
            r.seeds.len().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            accs.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("ablation csv", e))
}

pub fn write_ablation_files(csv_path: &Path, json_path: &Path, rows: &[AblationRow]) -> Result<()> {
    let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    write_ablation_csv(file, rows)?;
    std::fs::write(json_path, serde_json::to_string_pretty(rows)?).map_err(|e| Error::io(json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_splits, SynthConfig};
    use crate::model::{BackboneConfig, HeadKind};

    #[test]
    fn empty_grid_gives_header_only() {
        let mut out = Vec::new();
        write_ablation_csv(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "config,n_seeds,mean_acc,std_acc,accs\n");
    }

    #[test]
    fn standard_grid_has_eight_distinct_rows() {
        let grid = standard_grid();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0].name, "baseline");
        assert_eq!(grid[7].name, "full");
        let names: std::collections::BTreeSet<_> = grid.iter().map(|d| d.name.clone()).collect();
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn delta_toggles_modules() {
        let base = ExperimentConfig::default();
        let cfg = AblationDelta::modules("x", false, true, false).apply(&base);
        assert!(!cfg.train.loss_terms.pseudo);
        assert_eq!(cfg.model.backbone.hfe_enabled, vec![true; 4]);
        assert_eq!(cfg.model.backbone.gff_enabled, vec![false; 4]);
    }

    fn tiny() -> (Benchmark, ExperimentConfig) {
        let bench = synthetic_splits(&SynthConfig {
            image_size: 16,
            source_classes: 4,
            source_images: 6,
            target_train_classes: 3,
            target_test_classes: 3,
            target_test_images: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ExperimentConfig {
            model: ModelConfig {
                backbone: BackboneConfig {
                    block_channels: vec![2, 2, 4, 4],
                    input_size: 16,
                    ..BackboneConfig::default()
                },
                head: HeadKind::Proto,
                n_way: 3,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                n_way: 3,
                m_query: 2,
                epochs: 1,
                episodes_per_epoch: 2,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                n_tasks: 4,
                m_query: 2,
                threads: 1,
            },
        };
        (bench, cfg)
    }

    #[test]
    fn rows_are_reproducible_and_order_independent() {
        let (bench, base) = tiny();
        let grid = vec![
            AblationDelta::modules("baseline", false, false, false),
            AblationDelta::modules("lfr", true, false, false),
        ];
        let a = run_ablation_suite(&bench, &base, &grid, &[1, 2], |_, _, _| Ok(())).unwrap();
        let reversed: Vec<_> = grid.iter().rev().cloned().collect();
        let b = run_ablation_suite(&bench, &base, &reversed, &[1, 2], |_, _, _| Ok(())).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
    }
}
