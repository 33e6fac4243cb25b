pub mod annealing;
pub mod coloring;
pub mod diffcore;
pub mod error;
pub mod experiments;
pub mod gnn_model;
pub mod graph_core;
pub mod potts;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
