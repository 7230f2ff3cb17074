use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::GlbError;
use crate::catalog::CatalogError;
use crate::geometry::GeometryError;
use crate::replacement::ReplacementError;
use crate::retrieval::RetrievalError;
use crate::segmentation::SegmentationError;

/// Non-fatal condition reported next to a successful result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

impl Warning {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Glb(#[from] GlbError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Replacement(#[from] ReplacementError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Glb(e) => e.code(),
            Error::Geometry(e) => e.code(),
            Error::Segmentation(e) => e.code(),
            Error::Retrieval(e) => e.code(),
            Error::Replacement(e) => e.code(),
            Error::Catalog(e) => e.code(),
            Error::Io(_) => "IoFailure",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
