//! Training loop: seeded validation split, Adam updates, early stopping
//! on the validation loss, run bookkeeping.

use crate::network::{
    objective_gradient, objective_value, Adam, NetworkError, NetworkSpec, ObjectiveSpec, WeightSet,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A new validation loss must beat the best by this much to reset
/// patience; float noise must not count as improvement.
const IMPROVEMENT_TOL: f64 = 1e-9;

/// Relative validation-loss improvement below which a run is declared
/// unsuccessful (the loss got stuck at its initial value).
const STUCK_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("patience ({patience}) must not exceed max_epochs ({max_epochs})")]
    PatienceExceedsMaxEpochs { patience: usize, max_epochs: usize },
    #[error("validation fraction {0} must lie in (0, 1)")]
    BadValidationFraction(f64),
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("split leaves an empty part (n = {n}, validation = {validation})")]
    DegenerateSplit { n: usize, validation: usize },
    #[error("non-finite {which} loss {value} at epoch {epoch}")]
    NumericAbort {
        which: &'static str,
        epoch: usize,
        value: f64,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Mix a stream index into a master seed (splitmix64 finalizer).
/// Shared by the training loop and the experiment harness so that run
/// seeds are documented and reproducible.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Mini-batch size; `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience > self.max_epochs || self.patience == 0 || self.max_epochs == 0 {
            return Err(TrainError::PatienceExceedsMaxEpochs {
                patience: self.patience,
                max_epochs: self.max_epochs,
            });
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::BadValidationFraction(self.validation_fraction));
        }
        Ok(())
    }
}

/// Class counts of one side of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train_inputs: Vec<Vec<f64>>,
    pub train_labels: Vec<u8>,
    pub validation_inputs: Vec<Vec<f64>>,
    pub validation_labels: Vec<u8>,
    pub train_counts: ClassCounts,
    pub validation_counts: ClassCounts,
}

/// Seeded, disjoint, exhaustive train/validation split.
///
/// Validation size rounds `n * fraction` to the nearest integer with a
/// minimum of 1. The split is stratified by class whenever both classes
/// have at least 2 members.
pub fn split_validation(
    inputs: &[Vec<f64>],
    labels: &[u8],
    fraction: f64,
    seed: u64,
) -> Result<Split, TrainError> {
    let n = inputs.len();
    if n < 2 {
        return Err(TrainError::TooFewSamples(n));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::BadValidationFraction(fraction));
    }
    let validation = ((n as f64 * fraction).round() as usize).max(1);
    if validation >= n {
        return Err(TrainError::DegenerateSplit { n, validation });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos_idx: Vec<usize> = (0..n).filter(|&i| labels[i] != 0).collect();
    let neg_idx: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();

    let mut val_idx: Vec<usize>;
    if pos_idx.len() >= 2 && neg_idx.len() >= 2 {
        // Apportion the validation quota proportionally by class; the
        // positive share is derived so the total is exact.
        let v_neg = ((validation as f64 * neg_idx.len() as f64 / n as f64).round() as usize)
            .clamp(
                validation.saturating_sub(pos_idx.len() - 1),
                (neg_idx.len() - 1).min(validation),
            );
        let v_pos = validation - v_neg;
        let mut pos = pos_idx.clone();
        let mut neg = neg_idx.clone();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        val_idx = neg[..v_neg].to_vec();
        val_idx.extend_from_slice(&pos[..v_pos]);
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        val_idx = all[..validation].to_vec();
    }
    let in_val: Vec<bool> = {
        let mut mask = vec![false; n];
        for &i in &val_idx {
            mask[i] = true;
        }
        mask
    };

    let mut split = Split {
        train_inputs: Vec::with_capacity(n - validation),
        train_labels: Vec::with_capacity(n - validation),
        validation_inputs: Vec::with_capacity(validation),
        validation_labels: Vec::with_capacity(validation),
        train_counts: ClassCounts {
            positives: 0,
            negatives: 0,
        },
        validation_counts: ClassCounts {
            positives: 0,
            negatives: 0,
        },
    };
    for i in 0..n {
        if in_val[i] {
            split.validation_inputs.push(inputs[i].clone());
            split.validation_labels.push(labels[i]);
            if labels[i] != 0 {
                split.validation_counts.positives += 1;
            } else {
                split.validation_counts.negatives += 1;
            }
        } else {
            split.train_inputs.push(inputs[i].clone());
            split.train_labels.push(labels[i]);
            if labels[i] != 0 {
                split.train_counts.positives += 1;
            } else {
                split.train_counts.negatives += 1;
            }
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// False when the validation loss never improved meaningfully over
    /// its initial value (the run got stuck).
    pub success: bool,
    /// Weights from the best-validation epoch.
    pub final_weights: WeightSet,
    pub loss_history: Vec<EpochRecord>,
    pub train_counts: ClassCounts,
    pub validation_counts: ClassCounts,
}

/// Train until `max_epochs` or until the validation loss has not
/// improved for `patience` consecutive epochs, returning the weights of
/// the best-validation epoch.
pub fn fit(
    spec: &NetworkSpec,
    config: &TrainConfig,
    objective: &ObjectiveSpec,
    inputs: &[Vec<f64>],
    labels: &[u8],
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let split = split_validation(
        inputs,
        labels,
        config.validation_fraction,
        derive_seed(config.seed, 0),
    )?;

    let mut weights = WeightSet::init(spec, derive_seed(config.seed, 1));
    let mut optimizer = Adam::new(config.learning_rate, weights.parameter_count());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_weights = weights.clone();
    let mut since_improvement = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        match config.batch_size {
            None => {
                let grad = objective_gradient(
                    spec,
                    &weights,
                    &split.train_inputs,
                    &split.train_labels,
                    objective,
                )?;
                optimizer.step(&mut weights, &grad);
            }
            Some(batch) => {
                let mut order: Vec<usize> = (0..split.train_inputs.len()).collect();
                order.shuffle(&mut shuffle_rng);
                for chunk in order.chunks(batch.max(1)) {
                    let xs: Vec<Vec<f64>> =
                        chunk.iter().map(|&i| split.train_inputs[i].clone()).collect();
                    let ys: Vec<u8> = chunk.iter().map(|&i| split.train_labels[i]).collect();
                    let grad = objective_gradient(spec, &weights, &xs, &ys, objective)?;
                    optimizer.step(&mut weights, &grad);
                }
            }
        }

        let train_loss = objective_value(
            spec,
            &weights,
            &split.train_inputs,
            &split.train_labels,
            objective,
        )?;
        let validation_loss = objective_value(
            spec,
            &weights,
            &split.validation_inputs,
            &split.validation_labels,
            objective,
        )?;
        if !train_loss.is_finite() {
            return Err(TrainError::NumericAbort {
                which: "training",
                epoch,
                value: train_loss,
            });
        }
        if !validation_loss.is_finite() {
            return Err(TrainError::NumericAbort {
                which: "validation",
                epoch,
                value: validation_loss,
            });
        }
        history.push(EpochRecord {
            train_loss,
            validation_loss,
        });

        if validation_loss < best_loss - IMPROVEMENT_TOL {
            best_loss = validation_loss;
            best_epoch = epoch;
            best_weights = weights.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience {
                break;
            }
        }
    }

    let first = history[0].validation_loss;
    let relative_improvement = (first - best_loss) / first.abs().max(f64::MIN_POSITIVE);
    let success = relative_improvement >= STUCK_TOL;

    Ok(TrainReport {
        epochs_run,
        best_epoch,
        best_validation_loss: best_loss,
        success,
        final_weights: best_weights,
        loss_history: history,
        train_counts: split.train_counts,
        validation_counts: split.validation_counts,
    })
}
