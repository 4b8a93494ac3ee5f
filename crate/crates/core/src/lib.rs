//! Spectral asymptotics of stiff two-phase transmission problems on disks.

pub mod asymptotics;
pub mod cli;
pub mod cusp;
pub mod eigensolver;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod verification;

pub use error::{Error, Result};
