use serde::{Deserialize, Serialize};

use super::{ComponentMask, SegmentationError};
use crate::geometry::{back_project, Camera, DepthBuffer, PointCloud, SENTINEL};

/// Percentile band of masked depths that survives filtering, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBand {
    pub lo: f64,
    pub hi: f64,
}

impl DepthBand {
    pub const UNFILTERED: DepthBand = DepthBand { lo: 0.0, hi: 100.0 };
}

impl Default for DepthBand {
    fn default() -> Self {
        Self { lo: 2.0, hi: 98.0 }
    }
}

/// Linear interpolation between closest ranks; `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let p = p.clamp(0.0, 100.0);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
    }
}

/// Back-projects masked pixels whose depth lies inside the percentile band of all masked
/// depths.
pub fn extract_foreground(
    mask: &ComponentMask,
    depth: &DepthBuffer,
    camera: &Camera,
    band: DepthBand,
) -> Result<PointCloud, SegmentationError> {
    if (mask.width, mask.height) != (depth.width, depth.height) {
        return Err(SegmentationError::DimensionMismatch {
            mask: (mask.width, mask.height),
            depth: (depth.width, depth.height),
        });
    }
    let with_depth: Vec<((u32, u32), f64)> = mask
        .pixels()
        .into_iter()
        .filter_map(|(u, v)| {
            let z = depth.get(u, v);
            (z != SENTINEL).then_some(((u, v), z as f64))
        })
        .collect();
    if with_depth.is_empty() {
        return Err(SegmentationError::NoDepthInMask);
    }
    let mut sorted: Vec<f64> = with_depth.iter().map(|(_, z)| *z).collect();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, band.lo), percentile(&sorted, band.hi));
    let kept: Vec<(u32, u32)> = with_depth
        .into_iter()
        .filter(|(_, z)| *z >= lo && *z <= hi)
        .map(|(px, _)| px)
        .collect();
    Ok(back_project(depth, &kept, camera))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::render_depth;
    use crate::mesh::TriangleMesh;
    use nalgebra::{Matrix3, Point3, Vector3};

    fn camera() -> Camera {
        Camera {
            fx: 60.0,
            fy: 60.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn quad(z: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(-1.0, -1.0, z),
                Point3::new(1.0, -1.0, z),
                Point3::new(1.0, 1.0, z),
                Point3::new(-1.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    fn full_mask() -> ComponentMask {
        ComponentMask {
            width: 64,
            height: 64,
            bits: vec![true; 64 * 64],
            label: "window".into(),
            prompt: "window".into(),
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 10.0) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn covered_quad_keeps_every_depth_pixel() {
        let depth = render_depth(&quad(4.0), &camera()).unwrap();
        let expected = depth.covered_pixels().count();
        let cloud = extract_foreground(&full_mask(), &depth, &camera(), DepthBand::default()).unwrap();
        // Constant depth: the band collapses to one value that every pixel carries.
        assert_eq!(cloud.len(), expected);
        // 2 m wide quad at 4 m with fx = 60 spans 30 pixels.
        assert_eq!(expected, 30 * 30);
    }

    #[test]
    fn background_only_mask_has_no_depth() {
        let depth = DepthBuffer::empty(64, 64);
        let err = extract_foreground(&full_mask(), &depth, &camera(), DepthBand::default()).unwrap_err();
        assert_eq!(err, SegmentationError::NoDepthInMask);
    }

    #[test]
    fn unfiltered_band_equals_back_projection() {
        let mut depth = render_depth(&quad(4.0), &camera()).unwrap();
        for (i, z) in depth.values.iter_mut().enumerate() {
            if z.is_finite() {
                *z += (i % 17) as f32 * 0.01;
            }
        }
        let mask = full_mask();
        let cloud = extract_foreground(&mask, &depth, &camera(), DepthBand::UNFILTERED).unwrap();
        assert_eq!(cloud, back_project(&depth, &mask.pixels(), &camera()));
    }

    #[test]
    fn far_outliers_beyond_the_band_are_dropped() {
        // 1000 pixels with depths spread over [4, 5), then 1.5% of them pushed to 40 m.
        let mut depth = DepthBuffer::empty(64, 64);
        let mut bits = vec![false; 64 * 64];
        let mut outliers = Vec::new();
        for k in 0..1000usize {
            let idx = 500 + k;
            bits[idx] = true;
            depth.values[idx] = 4.0 + (k * 7919 % 1000) as f32 / 1000.0;
            if k % 67 == 0 {
                depth.values[idx] = 40.0 + k as f32 * 1e-3;
                outliers.push(((idx % 64) as u32, (idx / 64) as u32));
            }
        }
        assert_eq!(outliers.len(), 15);
        let mask = ComponentMask { bits, ..full_mask() };
        let cloud = extract_foreground(&mask, &depth, &camera(), DepthBand::default()).unwrap();
        let kept = cloud.source_pixels.unwrap();
        for o in &outliers {
            assert!(!kept.contains(o));
        }
        assert!(cloud.points.iter().all(|p| p.z < 5.0));
    }

    #[test]
    fn dimension_mismatch() {
        let depth = DepthBuffer::empty(32, 64);
        assert!(matches!(
            extract_foreground(&full_mask(), &depth, &camera(), DepthBand::default()),
            Err(SegmentationError::DimensionMismatch { .. })
        ));
    }
}
