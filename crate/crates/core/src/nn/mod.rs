//! Layers with explicit forward and backward passes, plus the optimizer.
//!
//! Every backward pass *adds* into [`Param::grad`]; the training loop in
//! [`sgd`] owns the zero → accumulate → step cycle.

pub mod checkpoint;
pub mod conv;
pub mod gru;
pub mod head;
pub mod param;
pub mod sgd;

pub use checkpoint::Checkpoint;
pub use conv::{Activation, ConvLayer, PoolCache, PoolLayer};
pub use gru::{GruParams, GruSequenceCache, GruStepCache};
pub use head::{cross_entropy, OutputHead};
pub use param::{Param, Parameterized};
pub use sgd::{fit, sgd_step, EpochRecord, Objective, SampleOutcome, SgdConfig, Stage, TrainingLog};
