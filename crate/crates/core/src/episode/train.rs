//! The three-term episodic objective and its training loop.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_episode, DomainTag, Episode};
use crate::autodiff::{Reduction, Var};
use crate::data::{Benchmark, DatasetSplit};
use crate::error::{Error, Result};
use crate::layers::{Forward, Mode};
use crate::lfr::{apply_lfr, LfrConfig};
use crate::model::ModelState;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    /// Loss on the original source task.
    pub source: bool,
    /// Loss on the target-train task.
    pub target: bool,
    /// Loss on the low-frequency-replaced pseudo source task.
    pub pseudo: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            source: true,
            target: true,
            pseudo: true,
        }
    }
}

impl LossTerms {
    pub fn baseline() -> Self {
        LossTerms {
            pseudo: false,
            ..LossTerms::default()
        }
    }

    pub fn any(&self) -> bool {
        self.source || self.target || self.pseudo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub lr: f64,
    pub seed: u64,
    pub lfr: LfrConfig,
    pub loss_terms: LossTerms,
    pub reduction: Reduction,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_way: 5,
            k_shot: 1,
            m_query: 16,
            epochs: 40,
            episodes_per_epoch: 50,
            lr: 1e-3,
            seed: 0,
            lfr: LfrConfig::default(),
            loss_terms: LossTerms::default(),
            reduction: Reduction::Mean,
            precision: Precision::Double,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::config("n_way", "must be at least 2"));
        }
        if self.k_shot == 0 {
            return Err(Error::config("k_shot", "must be at least 1"));
        }
        if self.m_query == 0 {
            return Err(Error::config("m_query", "must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if !self.loss_terms.any() {
            return Err(Error::config("loss_terms", "all three loss terms are disabled"));
        }
        self.lfr.validate()
    }

    /// Queries per class that `split` supports alongside `k_shot` supports.
    pub fn queries_for(&self, split: &DatasetSplit) -> Result<usize> {
        let avail = split.min_images_per_class();
        if avail <= self.k_shot {
            return Err(Error::InsufficientImages {
                class: split
                    .classes
                    .iter()
                    .min_by_key(|c| c.images.len())
                    .map(|c| c.id.clone())
                    .unwrap_or_default(),
                available: avail,
                required: self.k_shot + 1,
            });
        }
        Ok(self.m_query.min(avail - self.k_shot))
    }
}

/// Loss values of one step; disabled terms are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub episode: usize,
    pub loss_src: Option<f64>,
    pub loss_tar: Option<f64>,
    pub loss_pseudo: Option<f64>,
    pub total: f64,
}

/// Cross-entropy of the episode's query predictions.
pub fn few_shot_loss(model: &ModelState, f: &mut Forward, episode: &Episode, reduction: Reduction) -> Result<Var> {
    let logits = model.episode_logits(f, episode)?;
    f.tape.cross_entropy(logits, &episode.query_labels, reduction)
}

/// One optimizer step on `L_src + L_tar + L_pseudo` (enabled terms only).
pub fn train_step<R: Rng + ?Sized>(
    model: &mut ModelState,
    adam: &mut Adam,
    src: &Episode,
    tar: &Episode,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepMetrics> {
    let terms = cfg.loss_terms;
    if !terms.any() {
        return Err(Error::InvalidArgument("empty objective: every loss term is disabled".into()));
    }
    let pseudo = if terms.pseudo {
        Some(apply_lfr(src, tar, &cfg.lfr, rng)?.0)
    } else {
        None
    };
    let (grads, stats, values) = {
        let mut f = model.forward_with_precision(Mode::Train, true, cfg.precision);
        let mut parts: Vec<(usize, Var)> = Vec::new();
        if terms.source {
            parts.push((0, few_shot_loss(model, &mut f, src, cfg.reduction)?));
        }
        if terms.target {
            parts.push((1, few_shot_loss(model, &mut f, tar, cfg.reduction)?));
        }
        if let Some(p) = &pseudo {
            parts.push((2, few_shot_loss(model, &mut f, p, cfg.reduction)?));
        }
        let mut total = parts[0].1;
        for &(_, v) in &parts[1..] {
            total = f.tape.add(total, v)?;
        }
        let mut values = [None; 3];
        for &(slot, v) in &parts {
            values[slot] = Some(f.tape.value(v).item()?);
        }
        let grads = f.gradients(total)?;
        (grads, f.into_stats(), values)
    };
    adam.step(&mut model.store.params, &grads)?;
    model.store.apply_stats(&stats)?;
    Ok(StepMetrics {
        epoch: 0,
        episode: 0,
        loss_src: values[0],
        loss_tar: values[1],
        loss_pseudo: values[2],
        total: values.iter().flatten().sum(),
    })
}

/// Trains for `epochs × episodes_per_epoch` steps, reporting each step to `on_step`.
///
/// Episodes come from the `Episodes` stream and augmentation draws from the
/// `Augment` stream of `cfg.seed`.
pub fn train_model(
    model: &mut ModelState,
    bench: &Benchmark,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    let m_src = cfg.queries_for(&bench.source)?;
    let m_tar = cfg.queries_for(&bench.target_train)?;
    let mut episodes = stream_rng(cfg.seed, Stream::Episodes);
    let mut augment = stream_rng(cfg.seed, Stream::Augment);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut history = Vec::with_capacity(cfg.epochs * cfg.episodes_per_epoch);
    for epoch in 0..cfg.epochs {
        for episode in 0..cfg.episodes_per_epoch {
            let src = sample_episode(&bench.source, cfg.n_way, cfg.k_shot, m_src, DomainTag::Source, &mut episodes)?;
            let tar = sample_episode(&bench.target_train, cfg.n_way, cfg.k_shot, m_tar, DomainTag::Target, &mut episodes)?;
            let mut m = train_step(model, &mut adam, &src, &tar, cfg, &mut augment)?;
            m.epoch = epoch;
            m.episode = episode;
            if !m.total.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite loss at epoch {epoch}, episode {episode}"
                )));
            }
            on_step(&m)?;
            history.push(m);
        }
    }
    Ok(history)
}

pub const METRICS_CSV_HEADER: [&str; 6] = ["epoch", "episode", "loss_src", "loss_tar", "loss_pseudo", "total"];

/// Streams one CSV row per training step.
pub struct MetricsWriter {
    inner: csv::Writer<Box<dyn Write>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Self::from_writer(Box::new(std::io::BufWriter::new(file)))
    }

    pub fn from_writer(w: Box<dyn Write>) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(METRICS_CSV_HEADER)?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.inner.write_record([
            m.epoch.to_string(),
            m.episode.to_string(),
            opt(m.loss_src),
            opt(m.loss_tar),
            opt(m.loss_pseudo),
            m.total.to_string(),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io("metrics.csv", e))
    }
}
