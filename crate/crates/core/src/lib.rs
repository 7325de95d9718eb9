//! Adaptive sparse Gaussian processes for streaming regression.

pub mod adaptive;
pub mod agp;
pub mod agp_vsi;
pub mod bound;
pub mod error;
pub mod fast_agp;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod stream;
pub mod vsgp;
pub mod window;
pub mod wvsgp;

pub use error::{Error, Result};
