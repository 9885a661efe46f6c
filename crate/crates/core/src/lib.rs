//! Twin-attention superpoint decoder for 3D instance segmentation, trained
//! and evaluated on synthetic point-cloud scenes.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, the precision training and gradient checks run in.

pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod inference;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod regularizer;
pub mod report;
pub mod scalar;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor2<f64>;
pub type Graph = numerics::Graph<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type Model = model::Model<f64>;
pub type Prepared = model::Prepared<f64>;
pub type Trainer = training::Trainer<f64>;
pub type BlockPrediction = decoder::BlockPrediction<f64>;
