//! Evaluation over independently seeded tasks.
//!
//! Task `i` draws its episode and any classifier randomness from stream
//! `EvalTask(i)` of the master seed, so results do not depend on how tasks
//! are spread over threads.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_episode, DomainTag, Episode};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::{stream_rng, Stream, StreamRng};

/// Predicts one label per query of an episode.
pub trait EpisodeClassifier: Sync {
    fn classify(&self, episode: &Episode, rng: &mut StreamRng) -> Result<Vec<usize>>;
}

/// Always returns the true labels.
pub struct OracleClassifier;

impl EpisodeClassifier for OracleClassifier {
    fn classify(&self, episode: &Episode, _rng: &mut StreamRng) -> Result<Vec<usize>> {
        Ok(episode.query_labels.clone())
    }
}

/// Uniformly random labels.
pub struct RandomClassifier;

impl EpisodeClassifier for RandomClassifier {
    fn classify(&self, episode: &Episode, rng: &mut StreamRng) -> Result<Vec<usize>> {
        Ok((0..episode.query_labels.len())
            .map(|_| rng.random_range(0..episode.n_way))
            .collect())
    }
}

/// Argmax of a model's eval-mode query probabilities.
pub struct ModelClassifier<'a>(pub &'a ModelState);

impl EpisodeClassifier for ModelClassifier<'_> {
    fn classify(&self, episode: &Episode, _rng: &mut StreamRng) -> Result<Vec<usize>> {
        Ok(self.0.predict(episode)?.predictions())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub mean: f64,
    /// `1.96 · std / √n_tasks` over per-task accuracies.
    pub ci95: f64,
    pub accuracies: Vec<f64>,
}

impl EvalReport {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Result<Self> {
        let n = accuracies.len();
        if n == 0 {
            return Err(Error::InvalidArgument("evaluation over zero tasks".into()));
        }
        let mean = accuracies.iter().sum::<f64>() / n as f64;
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        Ok(EvalReport {
            n_tasks: n,
            mean,
            ci95: 1.96 * var.sqrt() / (n as f64).sqrt(),
            accuracies,
        })
    }
}

fn task_accuracy<C: EpisodeClassifier + ?Sized>(
    split: &DatasetSplit,
    classifier: &C,
    (n, k, m): (usize, usize, usize),
    seed: u64,
    task: usize,
) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::EvalTask(task as u64));
    let ep = sample_episode(split, n, k, m, DomainTag::Target, &mut rng)?;
    let preds = classifier.classify(&ep, &mut rng)?;
    if preds.len() != ep.query_labels.len() {
        return Err(Error::InvalidArgument(format!(
            "classifier returned {} labels for {} queries",
            preds.len(),
            ep.query_labels.len()
        )));
    }
    let hits = preds.iter().zip(&ep.query_labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Accuracy over `n_tasks` episodes of `split`, spread over `threads` workers.
pub fn evaluate_with<C: EpisodeClassifier + ?Sized>(
    split: &DatasetSplit,
    classifier: &C,
    episode: (usize, usize, usize),
    n_tasks: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    let threads = threads.clamp(1, n_tasks.max(1));
    let accuracies = if threads == 1 {
        (0..n_tasks)
            .map(|t| task_accuracy(split, classifier, episode, seed, t))
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut slots: Vec<Option<Result<f64>>> = (0..n_tasks).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunk = n_tasks.div_ceil(threads);
            for (w, part) in slots.chunks_mut(chunk).enumerate() {
                scope.spawn(move || {
                    for (j, slot) in part.iter_mut().enumerate() {
                        *slot = Some(task_accuracy(split, classifier, episode, seed, w * chunk + j));
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every task slot is filled"))
            .collect::<Result<Vec<_>>>()?
    };
    EvalReport::from_accuracies(accuracies)
}

/// Eval-mode model accuracy with queries capped by the split's class sizes.
pub fn evaluate(
    split: &DatasetSplit,
    model: &ModelState,
    n_way: usize,
    k_shot: usize,
    m_query: usize,
    n_tasks: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    let avail = split.min_images_per_class();
    if avail <= k_shot {
        return Err(Error::InvalidArgument(format!(
            "split `{}` has {avail} images in its smallest class, {k_shot}-shot tasks need more",
            split.name
        )));
    }
    let m = m_query.min(avail - k_shot);
    evaluate_with(split, &ModelClassifier(model), (n_way, k_shot, m), n_tasks, seed, threads)
}

pub const EVAL_CSV_HEADER: [&str; 4] = ["split", "n_tasks", "mean", "ci95"];

/// Writes one row per `(split name, report)`.
pub fn write_eval_csv(path: &Path, rows: &[(&str, &EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_CSV_HEADER)?;
    for (split, r) in rows {
        w.write_record([split.to_string(), r.n_tasks.to_string(), r.mean.to_string(), r.ci95.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::tests::toy_split;

    #[test]
    fn oracle_is_perfect() {
        let split = toy_split(10, 20);
        let r = evaluate_with(&split, &OracleClassifier, (5, 1, 15), 1000, 3, 1).unwrap();
        assert_eq!((r.mean, r.ci95), (1.0, 0.0));
    }

    #[test]
    fn random_guessing_near_one_fifth() {
        let split = toy_split(10, 20);
        let r = evaluate_with(&split, &RandomClassifier, (5, 1, 15), 1000, 4, 1).unwrap();
        assert!((0.18..=0.22).contains(&r.mean), "{}", r.mean);
    }

    #[test]
    fn threads_do_not_change_results() {
        let split = toy_split(10, 20);
        let a = evaluate_with(&split, &RandomClassifier, (5, 1, 15), 101, 5, 1).unwrap();
        let b = evaluate_with(&split, &RandomClassifier, (5, 1, 15), 101, 5, 1).unwrap();
        let c = evaluate_with(&split, &RandomClassifier, (5, 1, 15), 101, 5, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn ci_formula() {
        let r = EvalReport::from_accuracies(vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.mean, 0.5);
        assert!((r.ci95 - 1.96 * 0.5 / 2.0).abs() < 1e-15);
    }
}
