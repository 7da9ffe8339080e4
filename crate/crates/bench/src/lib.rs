//! Shared fixtures for the criterion benches.

use freqshot::data::{synthetic_splits, Benchmark, SynthConfig};
use freqshot::episode::{sample_episode, DomainTag, Episode};
use freqshot::model::{HeadKind, ModelConfig, ModelState};
use freqshot::rng::{stream_rng, Stream};

/// A small in-memory benchmark of `size`×`size` images.
pub fn bench_data(size: usize) -> Benchmark {
    synthetic_splits(&SynthConfig {
        image_size: size,
        source_images: 20,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}

/// A 5-way 1-shot source episode and target episode with `m` queries.
pub fn episode_pair(bench: &Benchmark, m: usize) -> (Episode, Episode) {
    let mut rng = stream_rng(0, Stream::Episodes);
    let src = sample_episode(&bench.source, 5, 1, m, DomainTag::Source, &mut rng).expect("source episode");
    let tar = sample_episode(&bench.target_train, 5, 1, m.min(4), DomainTag::Target, &mut rng).expect("target episode");
    (src, tar)
}

pub fn model(channels: [usize; 4], size: usize, head: HeadKind) -> ModelState {
    let mut cfg = ModelConfig {
        head,
        ..ModelConfig::default()
    };
    cfg.backbone.block_channels = channels.to_vec();
    cfg.backbone.input_size = size;
    ModelState::new(cfg, &mut stream_rng(0, Stream::Init)).expect("valid model config")
}
