//! Curation of localized change question-answer datasets from co-registered
//! before/after image pairs and their semantic masks.
//!
//! The pipeline runs connected-component region extraction over mask
//! differences, optional appearance filtering, encoder-based semantic
//! screening and a retrieval-conditioned Best-of-N judge, then emits one
//! question-answer record per validated change. The [`calibrate`] module holds
//! the threshold-calibration and simulation tools; [`review`] hosts the human
//! annotation service.

pub mod calibrate;
pub mod config;
pub mod embedding;
pub mod error;
pub mod gallery;
pub mod judge;
pub mod patch;
pub mod pipeline;
pub mod qa;
pub mod raster;
pub mod regions;
pub mod review;

pub use error::{Error, Result};
