//! Physics-informed bidirectional LSTM estimator.

pub mod activation;
mod infer;
mod loss;
mod network;
mod train;

pub use infer::{infer, infer_windows, InputScaling};
pub use loss::{physics_loss, physics_loss_grad, LossConfig, LossTerms, TAU_CLAMP};
pub use network::{
    backward_batch, forward_batch, lstm_forward, Architecture, CellLayout, ForwardCache, LstmWeights, ParamBlock,
    ParamLayout,
};
pub use train::{batch_loss_and_gradient, evaluate_loss, train, EpochLog, StopReason, TrainConfig, TrainOutcome};
