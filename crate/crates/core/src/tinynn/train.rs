use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_at, Masks, MlpModel, NesterovSgd};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.001,
            lr_gamma: 0.85,
            lr_step: 7,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step == 0 {
            return Err(Error::Config("epochs, batch_size and lr_step must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_gamma > 0.0) {
            return Err(Error::Config("lr and lr_gamma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1), weight_decay >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Snapshot with the best validation accuracy.
    pub model: MlpModel<T>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Fraction of rows whose arg-max column equals the label.
pub fn accuracy<T: Scalar>(probs: &Array2<T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == l
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Mini-batch training with seeded shuffling. After each epoch the model is
/// scored on the validation set and the best snapshot is kept (earliest on
/// ties). With an empty validation set, training accuracy is used instead.
pub fn train<T: Scalar>(
    mut model: MlpModel<T>,
    train_x: &Array2<T>,
    train_y: &[usize],
    val_x: &Array2<T>,
    val_y: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_x.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if train_x.nrows() != train_y.len() || val_x.nrows() != val_y.len() {
        return Err(Error::Shape("feature rows and labels differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = NesterovSgd::new(&mut model, config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let mut best: Option<(f64, usize, MlpModel<T>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(config.lr, config.lr_gamma, config.lr_step, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = train_x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = model.loss_and_grads(&xb, &yb, Masks::Random(&mut rng))?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut model, &grads, lr)?;
        }
        let val_accuracy = if val_y.is_empty() {
            accuracy(&model.predict(train_x)?, train_y)
        } else {
            accuracy(&model.predict(val_x)?, val_y)
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / train_x.nrows() as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
    }
    let (best_val_accuracy, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_accuracy,
        history,
    })
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io("<history>", e))?;
    Ok(())
}
