//! Margin-distribution training and generalization-bound measurement for
//! bias-free ReLU networks.
//!
//! The crate trains small fully connected classifiers, measures the margin
//! distribution and the data-dependent noise-sensitivity parameters of a
//! trained network, and evaluates several norm-based capacity terms side by
//! side with the margin-ratio capacity.

pub mod bounds;
pub mod checkpoint;
pub mod cushion;
pub mod data;
pub mod error;
pub mod linalg;
pub mod margin;
pub mod net;
pub mod perturb;
pub mod report;
pub mod train;

pub use data::Dataset;
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use net::Network;
