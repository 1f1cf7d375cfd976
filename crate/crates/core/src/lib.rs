//! Camouflaged object segmentation guided by attribute contributions and
//! fixation prediction.

pub mod afe;
pub mod attribute;
pub mod backbone;
pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod dataset;
mod error;
pub mod eval;
pub mod fixation;
pub mod infer;
pub mod mask;
pub mod model;
pub mod nn;
pub mod objective;
pub mod raster;
pub mod report;
pub mod taxonomy;
pub mod text;
pub mod train;

pub use error::{Error, Result};
