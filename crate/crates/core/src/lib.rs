//! Spatially decomposed support vector machines.
//!
//! A dataset is split into Voronoi cells (centers found by farthest-first
//! traversal), and an offset-free hinge-loss SVM with a Gaussian kernel is
//! trained on every cell, with per-cell hyper-parameters chosen by k-fold
//! cross-validation. A test point is answered by the model of the cell it
//! falls into. The random-chunks baseline (random equal-size pieces whose
//! decision functions are averaged) is available for comparison, and the
//! [`toy`] module provides a synthetic distribution with known posterior for
//! measuring excess risk.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI uses.

pub mod data;
pub mod error;
pub mod kernel;
pub mod localsvm;
pub mod modelselect;
pub mod partition;
pub mod scalar;
pub mod seed;
pub mod solver;
pub mod toy;

pub use error::{Error, Result};
pub use kernel::{CounterSnapshot, Counters};
pub use scalar::Real;

pub type Dataset = data::Dataset<f64>;
pub type Sample = data::Sample<f64>;
pub type Partition = partition::Partition<f64>;
pub type KernelMatrix = kernel::KernelMatrix<f64>;
pub type PreKernelMatrix = kernel::PreKernelMatrix<f64>;
pub type HyperGrid = modelselect::HyperGrid<f64>;
pub type ValidationTable = modelselect::ValidationTable<f64>;
pub type CellDecisionFunction = solver::CellDecisionFunction<f64>;
pub type LocalModel = localsvm::LocalModel<f64>;
pub type TrainConfig = localsvm::TrainConfig<f64>;

pub type Dataset32 = data::Dataset<f32>;
pub type LocalModel32 = localsvm::LocalModel<f32>;

pub use data::Label;
