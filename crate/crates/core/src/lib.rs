//! Core library for real-vs-fake image forensics: embedding, a small
//! explainable detector, per-dimension attention relevance, contribution
//! scores and corpus-level pattern analytics.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod artifact;
pub mod contribution;
pub mod dataset;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod relevance;
pub mod resample;
pub mod synthetic;

pub use error::{Error, Result};
