//! The few-shot network: four stride-2 residual blocks with high-frequency
//! enhancement inside and a global frequency filter after each block,
//! global average pooling, and a prototypical or graph metric head.

mod heads;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::episode::Episode;
use crate::error::{shape_err, Error, Result};
use crate::layers::{init_batch_norm, Conv, Forward, GffLayer, HfeInput, HfeLayer, Mode, ParamStore};
use crate::tensor::{Precision, Tensor};
use crate::autodiff::Var;

pub use heads::{gnn_head, proto_head, EpisodeLogits, GnnHead, GNN_LAYERS};

pub const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub block_channels: Vec<usize>,
    pub input_size: usize,
    pub in_channels: usize,
    pub hfe_enabled: Vec<bool>,
    pub gff_enabled: Vec<bool>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            block_channels: vec![16, 32, 64, 64],
            input_size: 32,
            in_channels: 3,
            hfe_enabled: vec![true; NUM_BLOCKS],
            gff_enabled: vec![true; NUM_BLOCKS],
        }
    }
}

impl BackboneConfig {
    /// Side length of block `l`'s output.
    pub fn block_size(&self, l: usize) -> usize {
        (0..=l).fold(self.input_size, |s, _| s.div_ceil(2))
    }

    pub fn embedding_dim(&self) -> usize {
        self.block_channels.last().copied().unwrap_or(0)
    }

    pub fn with_modules(mut self, hfe: bool, gff: bool) -> Self {
        self.hfe_enabled = vec![hfe; NUM_BLOCKS];
        self.gff_enabled = vec![gff; NUM_BLOCKS];
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HfeConfig {
    /// Normalized radius band `[lo, hi)` passed to the enhancement branch.
    pub band: (f64, f64),
    pub input: HfeInput,
}

impl Default for HfeConfig {
    fn default() -> Self {
        HfeConfig {
            band: (0.5, 1.0),
            input: HfeInput::Freq,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Proto,
    #[default]
    Gnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub hfe: HfeConfig,
    pub head: HeadKind,
    /// Classes per episode; fixes the graph head's label encoding and output width.
    pub n_way: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            hfe: HfeConfig::default(),
            head: HeadKind::default(),
            n_way: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.block_channels.len() != NUM_BLOCKS || b.block_channels.contains(&0) {
            return Err(Error::config("block_channels", format!("needs {NUM_BLOCKS} positive widths")));
        }
        if b.hfe_enabled.len() != NUM_BLOCKS {
            return Err(Error::config("hfe_enabled", format!("needs {NUM_BLOCKS} flags")));
        }
        if b.gff_enabled.len() != NUM_BLOCKS {
            return Err(Error::config("gff_enabled", format!("needs {NUM_BLOCKS} flags")));
        }
        if b.input_size < 1 << NUM_BLOCKS {
            return Err(Error::config("input_size", format!("must be at least {}", 1 << NUM_BLOCKS)));
        }
        if b.in_channels == 0 {
            return Err(Error::config("in_channels", "must be positive"));
        }
        if self.n_way < 2 {
            return Err(Error::config("n_way", "must be at least 2"));
        }
        let (lo, hi) = self.hfe.band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::config("hfe.band", format!("[{lo}, {hi}) needs 0 ≤ lo < hi ≤ 1")));
        }
        Ok(())
    }
}

/// One residual block and its frequency modules.
#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    shortcut: Conv,
    prefix: String,
    hfe: Option<HfeLayer>,
    gff: Option<GffLayer>,
}

impl Block {
    fn new(cfg: &ModelConfig, l: usize) -> Result<Self> {
        let b = &cfg.backbone;
        let c_in = if l == 0 { b.in_channels } else { b.block_channels[l - 1] };
        let c = b.block_channels[l];
        let size = b.block_size(l);
        let prefix = format!("blocks.{l}");
        let hfe = if b.hfe_enabled[l] {
            Some(HfeLayer::new(format!("{prefix}.hfe"), c, size, size, cfg.hfe.band, cfg.hfe.input)?)
        } else {
            None
        };
        let gff = if b.gff_enabled[l] {
            Some(GffLayer::new(format!("{prefix}.gff"), c, size, size)?)
        } else {
            None
        };
        Ok(Block {
            conv1: Conv::new(format!("{prefix}.conv1"), c_in, c, 3, 2, false),
            conv2: Conv::new(format!("{prefix}.conv2"), c, c, 3, 1, false),
            shortcut: Conv::new(format!("{prefix}.shortcut"), c_in, c, 1, 2, false),
            prefix,
            hfe,
            gff,
        })
    }

    fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let c = self.conv1.c_out;
        self.conv1.init(store, rng);
        init_batch_norm(store, &format!("{}.bn1", self.prefix), c);
        self.conv2.init(store, rng);
        init_batch_norm(store, &format!("{}.bn2", self.prefix), c);
        self.shortcut.init(store, rng);
        init_batch_norm(store, &format!("{}.shortcut_bn", self.prefix), c);
        if let Some(h) = &self.hfe {
            h.init(store, rng);
        }
        if let Some(g) = &self.gff {
            g.init(store);
        }
    }

    fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let h = self.conv1.forward(f, x)?;
        let h = f.batch_norm(&format!("{}.bn1", self.prefix), h)?;
        let h = f.tape.relu(h);
        let h = self.conv2.forward(f, h)?;
        let f_res = f.batch_norm(&format!("{}.bn2", self.prefix), h)?;
        let s = self.shortcut.forward(f, x)?;
        let shortcut = f.batch_norm(&format!("{}.shortcut_bn", self.prefix), s)?;
        let f_res = match &self.hfe {
            Some(hfe) => hfe.forward(f, shortcut, f_res)?,
            None => f_res,
        };
        let sum = f.tape.add(f_res, shortcut)?;
        let out = f.tape.relu(sum);
        match &self.gff {
            Some(gff) => gff.forward(f, out),
            None => Ok(out),
        }
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl ModelState {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        for l in 0..NUM_BLOCKS {
            Block::new(&config, l)?.init(&mut store, rng);
        }
        if config.head == HeadKind::Gnn {
            GnnHead::new(config.backbone.embedding_dim(), config.n_way).init(&mut store, rng);
        }
        Ok(ModelState { config, store })
    }

    fn blocks(&self) -> Result<Vec<Block>> {
        (0..NUM_BLOCKS).map(|l| Block::new(&self.config, l)).collect()
    }

    pub fn forward<'s>(&'s self, mode: Mode, track_grads: bool) -> Forward<'s> {
        Forward::new(&self.store, mode, track_grads)
    }

    pub fn forward_with_precision<'s>(&'s self, mode: Mode, track_grads: bool, precision: Precision) -> Forward<'s> {
        Forward::with_precision(&self.store, mode, track_grads, precision)
    }

    /// `[B, C, H, W]` images to `[B, D]` embeddings.
    pub fn embed(&self, f: &mut Forward, images: Var) -> Result<Var> {
        let b = &self.config.backbone;
        match *f.tape.shape(images) {
            [_, c, h, w] if c == b.in_channels && h == b.input_size && w == b.input_size => {}
            ref s => {
                return Err(shape_err!(
                    "model expects [B,{},{},{}] images, got {:?}",
                    b.in_channels,
                    b.input_size,
                    b.input_size,
                    s
                ))
            }
        }
        let mut x = images;
        for block in self.blocks()? {
            x = block.forward(f, x)?;
        }
        f.tape.global_avg_pool(x)
    }

    /// Head logits `[N·M, N]` from embeddings.
    pub fn head_logits(
        &self,
        f: &mut Forward,
        support: Var,
        support_labels: &[usize],
        query: Var,
        n_way: usize,
    ) -> Result<Var> {
        match self.config.head {
            HeadKind::Proto => proto_head(&mut f.tape, support, support_labels, query, n_way),
            HeadKind::Gnn => {
                if n_way != self.config.n_way {
                    return Err(Error::InvalidArgument(format!(
                        "graph head built for {}-way episodes, got {n_way}-way",
                        self.config.n_way
                    )));
                }
                GnnHead::new(self.config.backbone.embedding_dim(), n_way).forward(f, support, support_labels, query)
            }
        }
    }

    /// Embeds support and query images in one batch and applies the head.
    pub fn episode_logits(&self, f: &mut Forward, episode: &Episode) -> Result<Var> {
        let n_s = episode.support.shape()[0];
        let n_q = episode.query.shape()[0];
        let images = f.input(Tensor::concat_outer(&[&episode.support, &episode.query])?);
        let emb = self.embed(f, images)?;
        let s_rows: Vec<usize> = (0..n_s).collect();
        let q_rows: Vec<usize> = (n_s..n_s + n_q).collect();
        let support = f.tape.select_rows(emb, &s_rows)?;
        let query = f.tape.select_rows(emb, &q_rows)?;
        self.head_logits(f, support, &episode.support_labels, query, episode.n_way)
    }

    /// Query class probabilities in eval mode.
    pub fn predict(&self, episode: &Episode) -> Result<EpisodeLogits> {
        let mut f = self.forward(Mode::Eval, false);
        let logits = self.episode_logits(&mut f, episode)?;
        EpisodeLogits::from_logits(f.tape.value(logits), episode.query_labels.clone())
    }

    /// Eval-mode embeddings of `images`, processed in chunks of `batch`.
    pub fn embed_eval(&self, images: &Tensor, batch: usize) -> Result<Tensor> {
        let n = images.shape()[0];
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let rows: Vec<Tensor> = (start..end).map(|i| images.slice_outer(i)).collect::<Result<_>>()?;
            let mut f = self.forward(Mode::Eval, false);
            let x = f.input(Tensor::stack(&rows)?);
            let e = self.embed(&mut f, x)?;
            parts.push(f.tape.value(e).clone());
            start = end;
        }
        Tensor::concat_outer(&parts.iter().collect::<Vec<_>>())
    }

    /// Writes parameters and buffers to `path` and the config to [`config_path`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<(String, &Tensor)> = self
            .store
            .params
            .iter()
            .map(|(k, v)| (format!("param:{k}"), v))
            .chain(self.store.buffers.iter().map(|(k, v)| (format!("buffer:{k}"), v)))
            .collect();
        let refs: Vec<(&str, &Tensor)> = records.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        write_checkpoint(path, &refs)?;
        let cfg = config_path(path);
        std::fs::write(&cfg, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&cfg, e))
    }

    /// Reads a model written by [`ModelState::save`], checking every tensor shape.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = config_path(path);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let template = ModelState::new(config, &mut rng)?;
        let mut store = ParamStore::default();
        for (name, t) in read_checkpoint(path)? {
            let (map, want, key) = if let Some(k) = name.strip_prefix("param:") {
                (&mut store.params, template.store.params.get(k), k)
            } else if let Some(k) = name.strip_prefix("buffer:") {
                (&mut store.buffers, template.store.buffers.get(k), k)
            } else {
                return Err(Error::Checkpoint(format!("unexpected record `{name}`")));
            };
            match want {
                Some(w) if w.shape() == t.shape() => {
                    map.insert(key.to_string(), t);
                }
                Some(w) => {
                    return Err(Error::Checkpoint(format!(
                        "record `{name}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        w.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("record `{name}` is not part of the model"))),
            }
        }
        for k in template.store.params.keys() {
            if !store.params.contains_key(k) {
                return Err(Error::Checkpoint(format!("checkpoint lacks parameter `{k}`")));
            }
        }
        for k in template.store.buffers.keys() {
            if !store.buffers.contains_key(k) {
                return Err(Error::Checkpoint(format!("checkpoint lacks buffer `{k}`")));
            }
        }
        Ok(ModelState {
            config: template.config,
            store,
        })
    }
}

/// `model.ckpt` → `model.ckpt.model.json`.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".model.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests;
