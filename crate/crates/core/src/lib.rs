//! Numerical laboratory for the prescribed scalar curvature flow on
//! rotationally symmetric metrics of `[0, pi] x S^{n-1}`.

pub mod energy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod lab;
pub mod quadrature;
pub mod reduction;
pub mod spectral;

pub use error::{Error, Result};
