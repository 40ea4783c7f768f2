//! Data-efficiency sweep: train one model per training-set size and score
//! each on the same fixed test set.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::train::{train, TrainConfig};
use super::{EvalError, TrainError};
use crate::data::Dataset;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub train_size: usize,
    /// Overall configured-metric score on the test set.
    pub score: f64,
    pub accuracy: f64,
    pub token_f1: f64,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("sweep size {size} exceeds the {available} available training examples")]
    SizeTooLarge { size: usize, available: usize },
}

use thiserror::Error;

/// Seeded prefix sample of `size` examples. At full size the dataset is
/// returned untouched, so the full-size sweep row reproduces a direct
/// train-plus-evaluate run exactly.
pub fn subsample(data: &Dataset, size: usize, seed: u64) -> Dataset {
    if size >= data.len() {
        return data.clone();
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = stream(seed, &["subsample", &size.to_string()]);
    order.shuffle(&mut rng);
    order.truncate(size);
    let mut out = data.clone();
    out.examples = order.into_iter().map(|i| data.examples[i].clone()).collect();
    out
}

pub fn efficiency_sweep(
    train_set: &Dataset,
    dev_set: Option<&Dataset>,
    test_set: &Dataset,
    sizes: &[usize],
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<SweepRow>, SweepError> {
    for &size in sizes {
        if size > train_set.len() {
            return Err(SweepError::SizeTooLarge {
                size,
                available: train_set.len(),
            });
        }
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let subset = subsample(train_set, size, cfg.seed);
        let ckpt = train(&subset, dev_set, cfg)?;
        let report = evaluate(&ckpt, test_set, &Default::default(), workers)?;
        rows.push(SweepRow {
            train_size: size,
            score: report.metrics.overall.score,
            accuracy: report.metrics.overall.accuracy,
            token_f1: report.metrics.overall.token_f1,
        });
    }
    Ok(rows)
}
