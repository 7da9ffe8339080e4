//! Run-config snapshots and flag overrides.

use std::path::{Path, PathBuf};

use freqshot::analysis::ExperimentConfig;
use freqshot::data::{synthetic_splits, Benchmark, SynthConfig};
use freqshot::lfr::{GammaDist, ReplaceMode};
use freqshot::model::{HeadKind, NUM_BLOCKS};
use freqshot::{Error, Reduction, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, ExperimentArgs, GammaArgs, HeadArg, ModeArg, ReductionArg};

/// Where a run's images came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic(SynthConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Benchmark> {
        match self {
            DataSource::Manifest(p) => Benchmark::load(p),
            DataSource::Synthetic(cfg) => synthetic_splits(cfg),
        }
    }
}

/// The `config.json` written into every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSnapshot {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    /// Command-specific settings.
    #[serde(default)]
    pub args: serde_json::Value,
}

impl RunSnapshot {
    pub fn new(command: &str) -> Self {
        RunSnapshot {
            command: command.to_string(),
            experiment: None,
            data: None,
            args: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("config.json"), self)
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// An experiment file holds either a bare experiment config or a run snapshot.
fn read_experiment_file(path: &Path) -> Result<(ExperimentConfig, Option<DataSource>)> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("command").is_some() {
        let snap: RunSnapshot = serde_json::from_value(value)?;
        let exp = snap
            .experiment
            .ok_or_else(|| config_error("experiment", format!("{} has no experiment section", path.display())))?;
        Ok((exp, snap.data))
    } else {
        Ok((serde_json::from_value(value)?, None))
    }
}

/// The data source named by flags, falling back to `fallback`, then the default synthetic benchmark.
pub fn data_source(args: &DataArgs, fallback: Option<DataSource>) -> Result<DataSource> {
    if let Some(p) = &args.data {
        return Ok(DataSource::Manifest(p.clone()));
    }
    if let Some(p) = &args.synth_config {
        let cfg: SynthConfig = read_json(p)?;
        return Ok(DataSource::Synthetic(cfg));
    }
    Ok(fallback.unwrap_or_else(|| DataSource::Synthetic(SynthConfig::default())))
}

pub fn gamma_dist(args: &GammaArgs) -> Result<Option<GammaDist>> {
    if let Some(g) = args.gamma {
        return Ok(Some(GammaDist::Fixed { gamma: g }));
    }
    match args.gamma_range.as_deref() {
        None => Ok(None),
        Some(&[lo, hi]) if lo <= hi => Ok(Some(GammaDist::Uniform { lo, hi })),
        Some(&[lo, hi]) => Err(config_error("gamma_range", format!("lower bound {lo} exceeds upper bound {hi}"))),
        Some(v) => Err(config_error("gamma_range", format!("expected two values, got {}", v.len()))),
    }
}

pub fn replace_mode(m: ModeArg) -> ReplaceMode {
    match m {
        ModeArg::Lfr => ReplaceMode::Lfr,
        ModeArg::Hfr => ReplaceMode::Hfr,
    }
}

/// Resolves `--config` and applies every flag on top; flags win.
pub fn experiment(args: &ExperimentArgs, threads: usize) -> Result<(ExperimentConfig, Option<DataSource>)> {
    let (mut cfg, data) = match &args.config {
        Some(p) => read_experiment_file(p)?,
        None => (ExperimentConfig::default(), None),
    };
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.episodes_per_epoch {
        cfg.train.episodes_per_epoch = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(n) = args.n_way {
        cfg.train.n_way = n;
        cfg.model.n_way = n;
    }
    if let Some(k) = args.k_shot {
        cfg.train.k_shot = k;
    }
    if let Some(m) = args.m_query {
        cfg.train.m_query = m;
    }
    if let Some(h) = args.head {
        cfg.model.head = match h {
            HeadArg::Proto => HeadKind::Proto,
            HeadArg::Gnn => HeadKind::Gnn,
        };
    }
    if let Some(r) = args.reduction {
        cfg.train.reduction = match r {
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Mean => Reduction::Mean,
        };
    }
    if let Some(ch) = &args.channels {
        if ch.len() != NUM_BLOCKS {
            return Err(config_error("channels", format!("needs {NUM_BLOCKS} comma-separated widths")));
        }
        cfg.model.backbone.block_channels = ch.clone();
    }
    if let Some(s) = args.input_size {
        cfg.model.backbone.input_size = s;
    }
    if let Some(on) = args.lfr {
        cfg.train.loss_terms.pseudo = on;
    }
    if let Some(on) = args.hfe {
        cfg.model.backbone.hfe_enabled = vec![on; NUM_BLOCKS];
    }
    if let Some(on) = args.gff {
        cfg.model.backbone.gff_enabled = vec![on; NUM_BLOCKS];
    }
    if let Some(g) = gamma_dist(&args.gamma)? {
        cfg.train.lfr.gamma = g;
    }
    if let Some(m) = args.mode {
        cfg.train.lfr.mode = replace_mode(m);
    }
    if let Some(n) = args.n_tasks {
        cfg.eval.n_tasks = n;
    }
    if let Some(m) = args.eval_m_query {
        cfg.eval.m_query = m;
    }
    cfg.eval.threads = threads;
    cfg.validate()?;
    Ok((cfg, data))
}

/// Checks that the benchmark's images match the model's expected input.
pub fn check_input_size(cfg: &ExperimentConfig, bench: &Benchmark) -> Result<()> {
    let img = bench
        .source
        .classes
        .first()
        .and_then(|c| c.images.first())
        .ok_or_else(|| Error::Manifest("source split has no images".into()))?
        .load()?;
    let s = img.shape();
    let b = &cfg.model.backbone;
    if s[0] != b.in_channels {
        return Err(config_error(
            "model.backbone.in_channels",
            format!("{} but images have {} channels", b.in_channels, s[0]),
        ));
    }
    if s[1] != b.input_size || s[2] != b.input_size {
        return Err(config_error(
            "model.backbone.input_size",
            format!("{} but images are {}×{}", b.input_size, s[1], s[2]),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        exp: ExperimentArgs,
    }

    fn parse(flags: &[&str]) -> ExperimentArgs {
        Wrap::parse_from(std::iter::once("t").chain(flags.iter().copied())).exp
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        let mut base = ExperimentConfig::default();
        base.train.lr = 0.5;
        base.train.epochs = 3;
        write_json(&path, &base).unwrap();
        let (cfg, data) = experiment(&parse(&["--config", path.to_str().unwrap(), "--lr", "0.01"]), 1).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.epochs, 3);
        assert!(data.is_none());
    }

    #[test]
    fn snapshot_files_are_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut exp = ExperimentConfig::default();
        exp.train.seed = 11;
        let snap = RunSnapshot {
            experiment: Some(exp),
            data: Some(DataSource::Manifest("m.json".into())),
            ..RunSnapshot::new("train")
        };
        snap.write(dir.path()).unwrap();
        let args = parse(&["--config", dir.path().join("config.json").to_str().unwrap()]);
        let (cfg, data) = experiment(&args, 1).unwrap();
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(data, Some(DataSource::Manifest("m.json".into())));
    }

    #[test]
    fn n_way_sets_model_and_train() {
        let (cfg, _) = experiment(&parse(&["--n-way", "3"]), 1).unwrap();
        assert_eq!((cfg.model.n_way, cfg.train.n_way), (3, 3));
    }

    #[test]
    fn invalid_values_name_their_field() {
        match experiment(&parse(&["--lr=-1"]), 1) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lr"),
            other => panic!("expected config error, got {other:?}"),
        }
        match experiment(&parse(&["--gamma-range", "0.3", "0.1"]), 1) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "gamma_range"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn gamma_flags() {
        let g = parse(&["--gamma", "0.1"]).gamma;
        assert_eq!(gamma_dist(&g).unwrap(), Some(GammaDist::Fixed { gamma: 0.1 }));
        let g = parse(&["--gamma-range", "0", "0.2"]).gamma;
        assert_eq!(gamma_dist(&g).unwrap(), Some(GammaDist::Uniform { lo: 0.0, hi: 0.2 }));
        assert_eq!(gamma_dist(&parse(&[]).gamma).unwrap(), None);
    }
}
