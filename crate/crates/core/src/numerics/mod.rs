//! Dense tensors, the gradient tape, parameters and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{dice_cost, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor2;
