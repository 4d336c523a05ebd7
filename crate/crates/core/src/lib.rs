//! Retractions onto hyperbolic convex hulls, barrier functions and discrete
//! harmonic maps between hyperbolic spaces.

pub mod error;
pub mod fit;
pub mod barrier;
pub mod boundary;
pub mod geometry;
pub mod hull;
pub mod index;
pub mod kernel;
pub mod mesh;
pub mod mollify;
pub mod pipeline;
pub mod quad;
pub mod report;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{GeodesicLine, IdealPoint, Isometry, SpaceConfig, SpacePoint, TangentVector};
pub use rng::RandomStream;
