//! Affine-invariant landmark shape comparison on the Grassmann manifold,
//! with analytic backpropagation through the SVD, an appearance comparison
//! branch, small verification networks and a cross-validation harness.

pub mod appearance;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grassmann;
pub mod kernels;
pub mod network;
pub mod pipeline;

pub use error::{Error, Result};
pub use grassmann::{Aisc, GeodesicInfo, GrassmannDecomposition, LandmarkShape, ShapeCompareFeature};
pub use kernels::{Matrix, ThinSvd};
