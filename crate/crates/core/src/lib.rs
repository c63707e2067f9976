pub mod cell_problems;
pub mod coefficients;
pub mod config;
pub mod convergence_lab;
pub mod correctors;
pub mod domain_ops;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod linear_map;
pub mod periodic_cell;
pub mod presets;

pub use error::{HomogError, Result};
