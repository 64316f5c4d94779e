//! Human-in-the-loop active learning for document layout segmentation.
//!
//! Two structurally different pixel classifiers are trained on synthetic
//! pages; novel pages on which they disagree are sent for labelling and the
//! main classifier is updated with the labelled pages plus fresh synthetic
//! pages in the novel style.

pub mod agents;
pub mod annotation;
pub mod collab;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod rle;
pub mod rng;
pub mod synth;
pub mod update;

pub use error::{Error, Result};
