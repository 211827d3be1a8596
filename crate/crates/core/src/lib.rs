//! Multi-bubble solutions of the skew-symmetric Chern-Simons system on a flat torus.

pub mod bubble;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod green;
pub mod quadrature;
pub mod grid;
pub mod io;
pub mod krylov;
pub mod linops;
pub mod partition;
pub mod problem;
pub mod reduction;
pub mod solver;
pub mod special;
pub mod torus;

pub use error::{Error, Result};
