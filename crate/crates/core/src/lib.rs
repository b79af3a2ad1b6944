//! Zero-photon correlation statistics of pseudothermal light.
//!
//! Closed-form joint photon statistics of two partially correlated thermal
//! modes, a speckle-field simulator with single-photon detection, histogram
//! estimators of `g2_mn`, and ghost imaging from reference/bucket
//! coincidences.

pub mod analytic;
pub mod detect;
pub mod error;
pub mod estimator;
pub mod fieldgen;
pub mod fit;
pub mod formats;
pub mod hbt;
pub mod imaging;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
