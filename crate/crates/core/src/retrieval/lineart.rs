use nalgebra::Vector3;

use super::SketchImage;
use crate::geometry::{render_buffers, Camera, GeometryError, NO_FACE};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineArtSettings {
    /// Depth range over a pixel and its 4-neighbors above which the pixel is a stroke.
    pub depth_threshold: f64,
    /// Angle between camera-facing normals of adjacent pixels above which both are strokes.
    pub normal_threshold_deg: f64,
}

/// Silhouette, occlusion and crease strokes from the depth and face-id buffers. A pixel whose
/// neighborhood mixes background and surface counts as an infinite depth range. An empty
/// mesh draws nothing.
pub fn render_line_art(
    mesh: &TriangleMesh,
    camera: &Camera,
    settings: &LineArtSettings,
) -> Result<SketchImage, GeometryError> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut out = SketchImage::blank(w, h);
    if mesh.is_empty() {
        return Ok(out);
    }
    let buffers = render_buffers(mesh, camera)?;
    let eye = camera.center();
    let normals: Vec<Vector3<f64>> = (0..mesh.triangle_count())
        .map(|t| {
            let n = mesh.face_normal(t);
            let p = mesh.triangle(t)[0];
            if n.dot(&(eye - p)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    let cos_limit = settings.normal_threshold_deg.to_radians().cos();
    let depth = &buffers.depth.values;
    let faces = &buffers.face_ids;
    let idx = |u: u32, v: u32| (v * w + u) as usize;

    for v in 0..h {
        for u in 0..w {
            let i = idx(u, v);
            let mut lo = depth[i];
            let mut hi = depth[i];
            let mut crease = false;
            let neighbors = [
                (u > 0).then(|| idx(u - 1, v)),
                (u + 1 < w).then(|| idx(u + 1, v)),
                (v > 0).then(|| idx(u, v - 1)),
                (v + 1 < h).then(|| idx(u, v + 1)),
            ];
            for j in neighbors.into_iter().flatten() {
                lo = lo.min(depth[j]);
                hi = hi.max(depth[j]);
                let (a, b) = (faces[i], faces[j]);
                if a != NO_FACE && b != NO_FACE && a != b {
                    let c = normals[a as usize].dot(&normals[b as usize]);
                    crease |= c < cos_limit;
                }
            }
            let range = if lo.is_finite() && hi.is_infinite() {
                f64::INFINITY
            } else if hi.is_finite() {
                (hi - lo) as f64
            } else {
                0.0
            };
            if crease || range > settings.depth_threshold {
                out.set(u, v, true);
            }
        }
    }
    Ok(out)
}
