//! Regularized consensus PCA for multiblock data.
//!
//! Blocks of variables observed on the same individuals are summarized by a
//! superblock component and one component per block. Each block carries a
//! shrinkage metric between mode A (identity) and mode B (covariance), and an
//! exponent `m` controls how much the dominant blocks are favored.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod deflation;
pub mod error;
pub mod exec;
pub mod methods;
pub mod metrics;
pub mod solver;

pub use dataset::{
    build_blockset, load_block, load_block_file, load_blocks, Block, BlockSet, LoadOptions, Scaling,
};
pub use deflation::{deflate, extract, DeflationStrategy, MultiSolution};
pub use error::{Error, ErrorCategory, Result};
pub use exec::ExecPolicy;
pub use methods::{preset, verify_stationary, MethodPreset};
pub use metrics::{build_metric, Mode, ModeSelector, ShrinkageMetric};
pub use solver::{solve, Init, Solution, SolverConfig};
