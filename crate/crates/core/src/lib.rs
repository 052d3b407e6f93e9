//! Incremental sparse volumetric reconstruction.

pub mod baseline;
pub mod bench;
pub mod camera;
pub mod cli;
pub mod error;
pub mod featvol;
pub mod meshing;
pub mod metrics;
pub mod nnops;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod voxgrid;

pub use error::{Error, Result};
