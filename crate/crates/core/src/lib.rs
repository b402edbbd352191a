//! Numerical toolkit for twisted periodic Reeb orbits on energy hypersurfaces
//! with finite symmetry groups.

pub mod catalog;
pub mod cli;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod invariants;
pub mod loopflow;
pub mod orbit;

pub use error::{Error, Result};
