//! Validity-set instrumental variables.
//!
//! Screens the value pairs of a multivalued instrument through testable
//! implications of IV validity, estimates the set of valid pairs, and builds
//! pairwise treatment-effect estimates, covariances and Wald tests on it.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod falsify_km;
pub mod falsify_kms;
pub mod infer;
pub mod simulate;
pub mod unordered_id;
pub mod validity_set;

pub use error::{Result, VsivError};
