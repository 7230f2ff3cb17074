//! 2D component masks, mask providers, and masked depth to world-space points.

mod foreground;
mod provider;

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use thiserror::Error;

use crate::error::Warning;

pub use foreground::{extract_foreground, percentile, DepthBand};
pub use provider::{request_masks, MaskProviderConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("mask provider failed: {0}")]
    ProviderFailure(String),
    #[error("no masked pixel carries depth")]
    NoDepthInMask,
    #[error("mask is {mask:?} but depth buffer is {depth:?}")]
    DimensionMismatch { mask: (u32, u32), depth: (u32, u32) },
}

impl SegmentationError {
    pub fn code(&self) -> &'static str {
        match self {
            SegmentationError::UndecodableImage(_) => "UndecodableImage",
            SegmentationError::ProviderFailure(_) => "ProviderFailure",
            SegmentationError::NoDepthInMask => "NoDepthInMask",
            SegmentationError::DimensionMismatch { .. } => "DimensionMismatch",
        }
    }
}

/// Grayscale values above this are foreground (masks) or ink (sketches).
pub const MASK_THRESHOLD: u8 = 127;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMask {
    pub width: u32,
    pub height: u32,
    /// Row-major, `true` = foreground.
    pub bits: Vec<bool>,
    pub label: String,
    pub prompt: String,
}

impl ComponentMask {
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[(v * self.width + u) as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn pixels(&self) -> Vec<(u32, u32)> {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i as u32 % w, i as u32 / w))
            .collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        bits_to_png(self.width, self.height, &self.bits)
    }

    pub fn save_png(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_png())
    }
}

/// Decodes any raster the `image` crate reads and thresholds its luma channel.
pub fn decode_binary_raster(bytes: &[u8]) -> Result<(u32, u32, Vec<bool>), SegmentationError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| SegmentationError::UndecodableImage(e.to_string()))?
        .into_luma8();
    let bits = img.pixels().map(|p| p.0[0] > MASK_THRESHOLD).collect();
    Ok((img.width(), img.height(), bits))
}

/// 8-bit grayscale PNG, 255 for set bits.
pub fn bits_to_png(width: u32, height: u32, bits: &[bool]) -> Vec<u8> {
    let img = GrayImage::from_fn(width, height, |x, y| {
        Luma([if bits[(y * width + x) as usize] { 255 } else { 0 }])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("encoding an in-memory png cannot fail");
    out.into_inner()
}

/// Pixel is foreground iff its value exceeds 127. An empty mask comes with a
/// `NoForeground` warning.
pub fn load_mask(
    bytes: &[u8],
    label: &str,
    prompt: &str,
) -> Result<(ComponentMask, Vec<Warning>), SegmentationError> {
    let (width, height, bits) = decode_binary_raster(bytes)?;
    let mask = ComponentMask {
        width,
        height,
        bits,
        label: label.into(),
        prompt: prompt.into(),
    };
    let mut warnings = Vec::new();
    if mask.count() == 0 {
        warnings.push(Warning::new("NoForeground", format!("mask `{label}` has no foreground pixel")));
    }
    Ok((mask, warnings))
}
