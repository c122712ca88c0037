//! Analytics for lecture-comprehension tests: item calibration, at-risk
//! classification, factor regression, attendance encodings and cohort reports.

pub mod classifier;
pub mod encoding;
pub mod error;
pub mod ingest;
pub mod irt;
pub mod model;
pub mod regression;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
