//! Polyconvex hyperelastic models for thin soft tissue, built from scalar neural ODEs.

pub mod convexity;
pub mod dataproto;
pub mod error;
pub mod kinematics;
pub mod material;
pub mod node;
pub mod optim;
pub mod oracles;
pub mod quadrature;
pub mod response;
pub mod tangent;
pub mod trainer;

pub use error::{Error, Result};
