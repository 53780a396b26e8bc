//! Distributed neural state-feedback controllers built from interconnected
//! recurrent equilibrium networks, with a network-level L2 gain certificate
//! that holds for every value of the trainable parameters.

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod network;
pub mod plant;
pub mod ren;
pub mod training;

pub use error::{Error, Result};
