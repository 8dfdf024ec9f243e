//! Optimal-transport barycenters, skeleton heatmaps, synchronized geometric
//! deformations and the two landmark regularizers built from them, plus a
//! synthetic sandbox that exercises the regularizers by direct optimization
//! of landmark coordinates.

pub mod barycenter;
pub mod cli;
pub mod deform;
pub mod error;
pub mod geometry;
pub mod heatmap;
pub mod io;
pub mod landmarks;
pub mod raster;
pub mod regularizers;
pub mod sandbox;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{AffineMap, Mat2, Vec2};
pub use landmarks::LandmarkSet;
pub use raster::{Heatmap, Image};
