//! Bearing degradation indicators built from the information a PCA model
//! discards.
//!
//! The pipeline turns raw vibration records into six time-domain features per
//! record, projects them on principal components, and measures what the
//! trailing (discarded) components add to the Hotelling T² of each
//! observation. Averaging that discarded T² over the whole history gives the
//! scalar SDHT² indicator; averaging it over the segments of a bottom-up
//! segmentation of the history gives the vector VSDHT² indicator and its
//! normalized form NVSDHT².

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod features;
pub mod hotelling;
pub mod indicators;
pub mod pipeline;
pub mod projection;
pub mod segmentation;
pub mod series;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
