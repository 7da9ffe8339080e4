//! Domain-gap measurement, frequency-band probes and ablation sweeps.

mod ablation;
mod mmd;
mod probe;

use rand::seq::index::sample;
use rand::Rng;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

pub use ablation::{
    run_ablation_suite, run_experiment, standard_grid, write_ablation_csv, write_ablation_files, AblationDelta,
    AblationRow, EvalConfig, ExperimentConfig, RunResult, ABLATION_CSV_HEADER,
};
pub use mmd::{mmd, MmdReport};
pub use probe::{band_variants, frequency_probe, FreqProbeReport};

/// `count` distinct images of `split`, drawn uniformly over all its images.
pub fn sample_images<R: Rng + ?Sized>(split: &DatasetSplit, count: usize, rng: &mut R) -> Result<Tensor> {
    let all: Vec<_> = split.images().map(|(_, img)| img).collect();
    if count == 0 || count > all.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {count} of the {} images in split `{}`",
            all.len(),
            split.name
        )));
    }
    let picks = sample(rng, all.len(), count).into_vec();
    let images = picks.iter().map(|&i| all[i].load().map(|t| (*t).clone())).collect::<Result<Vec<_>>>()?;
    Tensor::stack(&images)
}

/// Eval-mode final-block pooled features `[n, D]`.
pub fn extract_features(model: &ModelState, images: &Tensor) -> Result<Tensor> {
    model.embed_eval(images, 64)
}

/// MMD between features of `count` images from each split.
pub fn domain_gap<R: Rng + ?Sized>(
    model: &ModelState,
    a: &DatasetSplit,
    b: &DatasetSplit,
    count: usize,
    rng: &mut R,
) -> Result<MmdReport> {
    let fa = extract_features(model, &sample_images(a, count.min(a.num_images()), rng)?)?;
    let fb = extract_features(model, &sample_images(b, count.min(b.num_images()), rng)?)?;
    mmd(&fa, &fb)
}
