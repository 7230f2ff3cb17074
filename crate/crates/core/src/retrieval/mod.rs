//! Sketch-based component retrieval: line-art views, Gabor local features, a k-means
//! visual vocabulary and a tf-idf inverted index.

mod codebook;
mod features;
mod index;
mod lineart;
mod sketch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codebook::{build_codebook, quantize, Codebook, DescriptorHistogram, Word};
pub use features::{extract_features, GaborBank, LocalFeature, FEATURE_DIM};
pub use index::{build_index, view_cameras, ComponentEntry, IndexComponent, Posting, RetrievalIndex, ScoredComponent};
pub use lineart::{render_line_art, LineArtSettings};
pub use sketch::SketchImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("no features to train a codebook on")]
    NoFeatures,
    #[error("catalog has no indexable component")]
    CatalogEmpty,
    #[error("sketch yields no features")]
    EmptyQuery,
    #[error("index data is not in the expected format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Sketch(#[from] crate::segmentation::SegmentationError),
}

impl RetrievalError {
    pub fn code(&self) -> &'static str {
        match self {
            RetrievalError::NoFeatures => "NoFeatures",
            RetrievalError::CatalogEmpty => "CatalogEmpty",
            RetrievalError::EmptyQuery => "EmptyQuery",
            RetrievalError::UnsupportedFormat(_) => "UnsupportedFormat",
            RetrievalError::Sketch(e) => e.code(),
        }
    }
}

/// Every tunable of descriptor extraction, vocabulary training and the view rig. Persisted
/// with the index so queries use the same settings as indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    /// Side of the square canonical image every sketch and view is resampled to.
    pub canonical_size: u32,
    /// Empty border kept around the ink after canonical resampling, in pixels.
    pub canonical_margin: u32,
    /// Gabor wavelength as a fraction of the image diagonal.
    pub wavelength_ratio: f64,
    /// Spatial standard deviation of the Gabor envelope, in wavelengths.
    pub envelope_ratio: f64,
    /// Side of the pooling window as a fraction of the image diagonal.
    pub window_ratio: f64,
    pub samples: usize,
    pub codebook_k: usize,
    /// Upper bound on features used to train the vocabulary.
    pub training_cap: usize,
    pub views_per_component: usize,
    /// Views spread evenly over [-yaw_span, yaw_span] degrees.
    pub yaw_span_deg: f64,
    pub elevation_deg: f64,
    pub distance_factor: f64,
    pub view_size: u32,
    /// Depth discontinuity threshold relative to the bounding radius.
    pub depth_threshold_ratio: f64,
    pub normal_threshold_deg: f64,
    pub seed: u64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            canonical_size: 256,
            canonical_margin: 8,
            wavelength_ratio: 0.1,
            envelope_ratio: 0.5,
            window_ratio: 0.25,
            samples: 500,
            codebook_k: 256,
            training_cap: 20_000,
            views_per_component: 5,
            yaw_span_deg: 30.0,
            elevation_deg: 10.0,
            distance_factor: 2.5,
            view_size: 256,
            depth_threshold_ratio: 0.02,
            normal_threshold_deg: 30.0,
            seed: 0,
        }
    }
}
