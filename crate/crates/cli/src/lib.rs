//! Experiment front end for `dfalgebra`.

pub mod app;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod verify;
