//! Siamese training of channel weights and projections under a hinge loss.

mod gradient;
mod loss;
mod model;
mod train;

pub use gradient::ncc_gradient;
pub use loss::{loss_backward, loss_forward, Gradients};
pub use model::{HingeForm, Pair, PairBatch, Regime, SiameseModel};
pub use train::{k_fold, train, EpochStats, Freeze, TrainConfig, TrainReport, WeightInit};
