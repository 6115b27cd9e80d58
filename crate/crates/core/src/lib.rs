//! Unsupervised anomaly detection on multiplex graphs with masked graph
//! autoencoders, augmented views and dual-view contrast.

pub mod checkpoint;
pub mod config;
pub mod detect;
pub mod error;
pub mod graph;
pub mod masking;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{AttributeMatrix, MultiplexGraph, NodeId, RelationalSubgraph};
pub use model::{Ablation, LossWeights, ModelConfig, ModelParams};
pub use training::{train, TrainConfig, TrainLog};
