//! A minimal feed-forward network: linear, dropout, batch normalization,
//! ReLU and softmax layers trained with softmax cross-entropy and Nesterov
//! SGD.

mod checkpoint;
mod layers;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::{BatchNorm, Forward, Gradients, Layer, LayerCache, LayerGrad, Linear, Masks, MlpModel};
pub use optim::{lr_at, sgd_step, NesterovSgd};
pub use train::{accuracy, train, write_history_csv, EpochRecord, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

/// One layer of a network specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Linear { input: usize, output: usize },
    Dropout { p: f64 },
    BatchNorm { features: usize },
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
