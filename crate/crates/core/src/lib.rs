//! SwapMix: measure and reduce a VQA model's reliance on visual context.

pub mod augment;
pub mod context;
pub mod domain;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod ingestion;
pub mod metrics;
pub mod models;
pub mod perturb;
pub mod pipeline;
pub mod seed;
pub mod swapplan;
pub mod synth;

pub use error::{Error, Result};
