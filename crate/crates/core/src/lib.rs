//! Boundary pressure and heat-flux optimal control of Boussinesq flow.

pub mod app;
pub mod config;
pub mod control_opt;
pub mod discretization;
pub mod error;
pub mod forward;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod sensitivity;

pub use error::{Error, Result};
