//! Exactness certificates and global solves for quadratically constrained
//! quadratic programs whose aggregate sparsity graph is a forest.

pub mod devtools;
pub mod error;
pub mod exactness;
pub mod format;
pub mod gtrs;
pub mod model;
pub mod sdp;
pub mod simtridiag;
pub mod sparsity;
pub mod symlin;

pub use error::{Error, Result};
pub use nalgebra;
