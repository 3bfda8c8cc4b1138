//! Learning open-system dynamics with a decoherence-free algebra as the
//! model hyperparameter.

pub mod algebra;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod generator;
pub mod likelihood;
pub mod linalg;
pub mod params;
pub mod physmodels;
pub mod report;
pub mod training;

pub use error::{Error, Result};
