//! Semantic column type detection with a graph neural network stacked on a
//! single-column predictor.

pub mod error;
pub mod evaluation;
pub mod gnn;
pub mod graph;
pub mod numerics;
pub mod predictor;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
