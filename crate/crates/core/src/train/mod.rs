//! Probability fusion, losses, the optimizer and the training loop.

pub mod adam;
mod fit;
pub mod fusion;
pub mod loss;

pub use adam::{Adam, AdamConfig, Gradients};
pub use fit::{fit, total_loss, total_loss_node, EpochRecord, FitReport, LossBreakdown, LossNodes, Regime, TrainConfig};
