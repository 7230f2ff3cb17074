use nalgebra::Point3;

use super::{Camera, DepthBuffer, SENTINEL};

/// World-space points, optionally tagged with the pixel each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub source_pixels: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            source_pixels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts pixels with depth to world space; background pixels are skipped.
///
/// Panics if a pixel lies outside the buffer.
pub fn back_project(depth: &DepthBuffer, pixels: &[(u32, u32)], camera: &Camera) -> PointCloud {
    let mut points = Vec::with_capacity(pixels.len());
    let mut source = Vec::with_capacity(pixels.len());
    for &(u, v) in pixels {
        assert!(u < depth.width && v < depth.height, "pixel ({u}, {v}) out of bounds");
        let z = depth.get(u, v);
        if z == SENTINEL {
            continue;
        }
        let p_cam = camera.unproject_pixel(u, v, z as f64);
        points.push(camera.to_world(&p_cam));
        source.push((u, v));
    }
    PointCloud {
        points,
        source_pixels: Some(source),
    }
}
