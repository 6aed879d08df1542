//! From-scratch dense neural network: forward pass, exact backprop for the
//! composite objective (cross-entropy + representation L2 + proximal),
//! Adam/SGD optimizers, Kaiming init, and binary checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{evaluate, forward, loss_and_grad, LossTerms};
pub use optim::{adam_step, sgd_step, sgd_step_in_place, AdamState};
pub use params::{init_kaiming, mlp_spec, Activation, DenseLayer, LayerSpec, Minibatch, ModelParams};
pub use train::{train_local, OptimizerKind, TrainOptions, TrainStats};
