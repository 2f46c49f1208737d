//! Encoding-model comparison engine for intracranial recordings.
//!
//! Layerwise model features are (optionally) sparse-random-projected, fit to
//! binned neural responses with contiguous k-fold ridge regression, bootstrapped
//! over event structures for confidence intervals, and compared per electrode
//! with a time-bin bootstrap and Benjamini-Hochberg correction. The resulting
//! verdicts feed a battery of multimodality tests across two dataset alignments.
//!
//! The numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the pipeline's working precision.

pub mod analysis;
pub mod atlas;
pub mod bootstrap;
pub mod comparison;
pub mod config;
pub mod encoder;
pub mod error;
pub mod event_model;
pub mod feature_store;
pub mod io;
pub mod linalg;
pub mod multimodality;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

/// Working precision of the pipeline.
pub type Scalar = f64;
pub type Features = feature_store::FeatureMatrix<Scalar>;
pub type Responses = event_model::ResponseTensor<Scalar>;
pub type Scores = encoder::ScoreTensor<Scalar>;
pub type Signal = event_model::RawSignal<Scalar>;
