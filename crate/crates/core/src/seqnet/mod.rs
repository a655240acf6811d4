//! LSTM encoder-decoder driver model, written from scratch in `f64`.
//!
//! The encoder reads `n_h` normalized feature rows; its final state, after
//! dropout on `h`, seeds the decoder, which unrolls `n_p` steps feeding each
//! `(v, err)` prediction back through a linear bridge. Training is full
//! backpropagation through time with Adam.

mod cell;
mod gradcheck;
mod model;
mod predict;
mod train;

pub use cell::{lstm_cell_forward, Gate, HiddenState, LstmLayerWeights};
pub use model::{apply_dropout, DropoutMode, Linear, LstmEdConfig, LstmEdModel, TENSOR_NAMES};
pub use predict::{predict, LstmEdPredictor, CHECKPOINT_FORMAT};
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheck};
pub use train::{loss_gradient, train, train_model, window_loss, TrainConfig, TrainOutcome};
