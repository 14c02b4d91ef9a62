//! Desk-scale attention models: three architectures with named attention
//! parameter groups, a quadratic surrogate with engineered curvature,
//! synthetic data, SGD training, and checkpointing.

pub mod build;
pub mod checkpoint;
mod config;
mod data;
mod model;
mod train;

pub use build::{build_graph, param_specs, BuiltGraph, ParamSpec};
pub use config::{
    ModelConfig, ModelKind, QuadraticBlock, QuadraticCoupling, QuadraticSpec, MAX_PARAMS,
};
pub use data::{
    generate, load_jsonl, make_batch, save_jsonl, Batch, DataSpec, DataSplits, Dataset, Example,
    Split, FILLER_TOKENS,
};
pub use model::{GroupRegistry, Model, ParamEntry, ParamLayout};
pub use train::{train, EpochStats, OptimizerConfig, TrainingTrace};
