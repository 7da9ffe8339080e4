//! Episodes, episodic training and the evaluation protocol.
//!
//! Support and query images are stored class-major: class `c` owns support
//! rows `c·K .. (c+1)·K` and query rows `c·M .. (c+1)·M`, with episode-local
//! labels `0..N`.

mod eval;
mod train;

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub use eval::{
    evaluate, evaluate_with, write_eval_csv, EpisodeClassifier, EvalReport, ModelClassifier, OracleClassifier,
    RandomClassifier, EVAL_CSV_HEADER,
};
pub use train::{
    few_shot_loss, train_model, train_step, LossTerms, MetricsWriter, StepMetrics, TrainConfig,
    METRICS_CSV_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    /// `[N·K, C, H, W]`
    pub support: Tensor,
    pub support_labels: Vec<usize>,
    /// `[N·M, C, H, W]`
    pub query: Tensor,
    pub query_labels: Vec<usize>,
    pub domain: DomainTag,
    /// Global class id of each episode label.
    pub class_ids: Vec<String>,
    pub support_ids: Vec<String>,
    pub query_ids: Vec<String>,
}

fn class_major_labels(n: usize, per_class: usize) -> Vec<usize> {
    (0..n).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
}

impl Episode {
    /// Image dimensions `[C, H, W]`.
    pub fn image_dims(&self) -> &[usize] {
        &self.support.shape()[1..]
    }

    /// Checks counts, label layout and support/query disjointness.
    pub fn validate(&self) -> Result<()> {
        let (n, k, m) = (self.n_way, self.k_shot, self.m_query);
        if self.support.rank() != 4 || self.query.rank() != 4 {
            return Err(shape_err!("episode images must be [B,C,H,W]"));
        }
        if self.support.shape()[0] != n * k || self.query.shape()[0] != n * m {
            return Err(shape_err!(
                "episode {n}-way {k}-shot {m}-query holds {} support and {} query images",
                self.support.shape()[0],
                self.query.shape()[0]
            ));
        }
        if self.support.shape()[1..] != self.query.shape()[1..] {
            return Err(shape_err!("support and query image dims differ"));
        }
        if self.support_labels != class_major_labels(n, k) || self.query_labels != class_major_labels(n, m) {
            return Err(Error::InvalidArgument("episode labels are not class-major 0..N".into()));
        }
        if self.class_ids.len() != n || self.support_ids.len() != n * k || self.query_ids.len() != n * m {
            return Err(Error::InvalidArgument("episode id lists do not match its counts".into()));
        }
        let support: HashSet<&str> = self.support_ids.iter().map(String::as_str).collect();
        if let Some(dup) = self.query_ids.iter().find(|q| support.contains(q.as_str())) {
            return Err(Error::InvalidArgument(format!("image `{dup}` is in both support and query")));
        }
        Ok(())
    }

    /// Support row `j` of class `c`.
    pub fn support_image(&self, c: usize, j: usize) -> Result<Tensor> {
        self.support.slice_outer(c * self.k_shot + j)
    }

    pub fn query_image(&self, c: usize, j: usize) -> Result<Tensor> {
        self.query.slice_outer(c * self.m_query + j)
    }
}

/// Samples `n` classes, then `k + m` distinct images of each.
pub fn sample_episode<R: Rng + ?Sized>(
    split: &DatasetSplit,
    n: usize,
    k: usize,
    m: usize,
    domain: DomainTag,
    rng: &mut R,
) -> Result<Episode> {
    if n == 0 || k == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("episode needs n, k, m ≥ 1, got {n}, {k}, {m}")));
    }
    if split.num_classes() < n {
        return Err(Error::InvalidArgument(format!(
            "split `{}` has {} classes, {n}-way episodes need {n}",
            split.name,
            split.num_classes()
        )));
    }
    let classes = sample(rng, split.num_classes(), n).into_vec();
    for &c in &classes {
        let class = &split.classes[c];
        if class.images.len() < k + m {
            return Err(Error::InsufficientImages {
                class: class.id.clone(),
                available: class.images.len(),
                required: k + m,
            });
        }
    }
    let mut support = Vec::with_capacity(n * k);
    let mut query = Vec::with_capacity(n * m);
    let mut support_ids = Vec::with_capacity(n * k);
    let mut query_ids = Vec::with_capacity(n * m);
    for &c in &classes {
        let class = &split.classes[c];
        let picks = sample(rng, class.images.len(), k + m).into_vec();
        for (j, &i) in picks.iter().enumerate() {
            let img = &class.images[i];
            let (images, ids) = if j < k {
                (&mut support, &mut support_ids)
            } else {
                (&mut query, &mut query_ids)
            };
            images.push((*img.load()?).clone());
            ids.push(img.id().to_string());
        }
    }
    let episode = Episode {
        n_way: n,
        k_shot: k,
        m_query: m,
        support: Tensor::stack(&support)?,
        support_labels: class_major_labels(n, k),
        query: Tensor::stack(&query)?,
        query_labels: class_major_labels(n, m),
        domain,
        class_ids: classes.iter().map(|&c| split.classes[c].id.clone()).collect(),
        support_ids,
        query_ids,
    };
    episode.validate()?;
    Ok(episode)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{ClassImages, ImageRef, SplitRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_split(classes: usize, per_class: usize) -> DatasetSplit {
        DatasetSplit {
            name: "toy".into(),
            role: SplitRole::SourceTrain,
            classes: (0..classes)
                .map(|c| ClassImages {
                    id: format!("c{c}"),
                    images: (0..per_class)
                        .map(|i| ImageRef::in_memory(format!("c{c}/{i}"), Tensor::full(&[3, 4, 4], (c * 100 + i) as f64)))
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn source_episode_counts() {
        let split = toy_split(8, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = sample_episode(&split, 5, 1, 16, DomainTag::Source, &mut rng).unwrap();
        assert_eq!(e.support.shape()[0], 5);
        assert_eq!(e.query.shape()[0], 80);
        e.validate().unwrap();
    }

    #[test]
    fn five_image_target_classes() {
        let split = toy_split(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_episode(&split, 5, 1, 4, DomainTag::Target, &mut rng).is_ok());
        match sample_episode(&split, 5, 1, 5, DomainTag::Target, &mut rng) {
            Err(Error::InsufficientImages { class, available: 5, required: 6 }) => assert!(class.starts_with('c')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let split = toy_split(10, 10);
        let a = sample_episode(&split, 5, 2, 3, DomainTag::Source, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_episode(&split, 5, 2, 3, DomainTag::Source, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn images_follow_their_labels() {
        let split = toy_split(7, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = sample_episode(&split, 4, 2, 3, DomainTag::Source, &mut rng).unwrap();
        for (row, &label) in e.query_labels.iter().enumerate() {
            let class: usize = e.class_ids[label][1..].parse().unwrap();
            let v = e.query.slice_outer(row).unwrap().data()[0] as usize;
            assert_eq!(v / 100, class);
        }
    }
}
