//! On-disk formats: binary containers, CSV tables and feature manifests.

pub mod binary;
pub mod manifest;
pub mod tables;

pub use binary::{
    read_features, read_intervals, read_responses, read_scores, write_features, write_intervals, write_responses,
    write_scores,
};
pub use manifest::{feature_file_name, FeatureManifest, ManifestEntry};
