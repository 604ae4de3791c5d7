//! Verification of ReLU networks through convex relaxations.
//!
//! The core types are generic over the scalar (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod attack;
pub mod bounds;
pub mod certify;
pub mod dataset;
pub mod error;
pub mod lp;
pub mod network;
pub mod oracle;
pub mod report;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = network::Network<f64>;
pub type AffineLayer = network::AffineLayer<f64>;
pub type InputRegion = network::InputRegion<f64>;
pub type Specification = network::Specification<f64>;
pub type LayerBounds = bounds::LayerBounds<f64>;
pub type LinearProgram = lp::LinearProgram<f64>;
pub type LpSolution = lp::LpSolution<f64>;
