//! PCA oriented bounding boxes.
//!
//! Axes come from the eigenvectors of the point covariance. To make the output
//! deterministic:
//!
//! * eigenvalues within `1e-9 * max_eigenvalue` of each other are treated as equal and the
//!   ambiguous subspace is aligned with world axes (all three equal gives the identity);
//! * axes are ordered by half-extent, largest first;
//! * each axis is flipped so its largest-magnitude world component is positive, and the
//!   third axis is then replaced by `axis0 x axis1` so the frame is right-handed.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud};

const EIGEN_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ObbJson", into = "ObbJson")]
pub struct OrientedBoundingBox {
    pub center: Point3<f64>,
    /// Columns are the unit axes.
    pub axes: Matrix3<f64>,
    /// Half side lengths along each axis, non-increasing.
    pub half_extents: Vector3<f64>,
}

/// Wire form: `axes` lists axis 0, 1, 2 as consecutive xyz triples.
#[derive(Serialize, Deserialize)]
struct ObbJson {
    center: [f64; 3],
    axes: [f64; 9],
    half_extents: [f64; 3],
}

impl From<OrientedBoundingBox> for ObbJson {
    fn from(o: OrientedBoundingBox) -> Self {
        let mut axes = [0.0; 9];
        axes.copy_from_slice(o.axes.as_slice());
        ObbJson {
            center: o.center.coords.into(),
            axes,
            half_extents: o.half_extents.into(),
        }
    }
}

impl From<ObbJson> for OrientedBoundingBox {
    fn from(j: ObbJson) -> Self {
        OrientedBoundingBox {
            center: Point3::from(j.center),
            axes: Matrix3::from_column_slice(&j.axes),
            half_extents: Vector3::from(j.half_extents),
        }
    }
}

impl OrientedBoundingBox {
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.axes.column(i).into_owned()
    }

    /// Coordinates of `p` in the box frame.
    pub fn local(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - self.center)
    }

    /// True when `|(p - c) . axis_i| <= h_i` for all axes.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let l = self.local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i])
    }

    /// Scales every half-extent by `1 + ratio`, with extents raised to at least `floor`.
    pub fn inflated(&self, ratio: f64, floor: f64) -> Self {
        Self {
            half_extents: self.half_extents.map(|h| (h * (1.0 + ratio)).max(floor)),
            ..*self
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.product()
    }

    /// Right-handed with orthonormal axes and sorted non-negative extents.
    pub fn is_well_formed(&self, tolerance: f64) -> bool {
        let ortho = (self.axes.transpose() * self.axes - Matrix3::identity()).abs().max();
        let h = self.half_extents;
        ortho <= tolerance
            && (self.axes.determinant() - 1.0).abs() <= tolerance
            && h[0] >= h[1]
            && h[1] >= h[2]
            && h[2] >= 0.0
    }
}

pub fn fit_obb(cloud: &PointCloud) -> Result<OrientedBoundingBox, GeometryError> {
    fit_obb_points(&cloud.points)
}

pub fn fit_obb_points(points: &[Point3<f64>]) -> Result<OrientedBoundingBox, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eigen_axes = principal_axes(&cov);

    // First pass: extents along the eigen axes decide the ordering.
    let ranges = projection_ranges(points, &mean, &eigen_axes);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ha, hb) = (ranges[a].1 - ranges[a].0, ranges[b].1 - ranges[b].0);
        hb.partial_cmp(&ha).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut axes = Matrix3::from_columns(&order.map(|i| eigen_axes.column(i).into_owned()));
    for i in 0..2 {
        let fixed = sign_fixed(axes.column(i).into_owned());
        axes.set_column(i, &fixed);
    }
    let third = axes.column(0).cross(&axes.column(1)).normalize();
    axes.set_column(2, &third);

    let ranges = projection_ranges(points, &mean, &axes);
    let mut center = Point3::from(mean);
    let mut half_extents = Vector3::zeros();
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        center += axes.column(i) * (0.5 * (lo + hi));
        half_extents[i] = 0.5 * (hi - lo);
    }
    Ok(OrientedBoundingBox {
        center,
        axes,
        half_extents,
    })
}

fn projection_ranges(points: &[Point3<f64>], mean: &Vector3<f64>, axes: &Matrix3<f64>) -> [(f64, f64); 3] {
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    let at = axes.transpose();
    for p in points {
        let l = at * (p.coords - mean);
        for i in 0..3 {
            ranges[i].0 = ranges[i].0.min(l[i]);
            ranges[i].1 = ranges[i].1.max(l[i]);
        }
    }
    ranges
}

/// Flips `v` so its largest-magnitude component (first on ties) is positive.
fn sign_fixed(v: Vector3<f64>) -> Vector3<f64> {
    let mut best = 0;
    for i in 1..3 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        -v
    } else {
        v
    }
}

/// Unit vector of the world axis whose projection onto the plane orthogonal to `normal`
/// is longest, projected and normalized.
fn world_aligned_in_plane(normal: &Vector3<f64>) -> Vector3<f64> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for i in 0..3 {
        let e = Vector3::ith(i, 1.0);
        let proj = e - normal * normal.dot(&e);
        let len = proj.norm();
        if best.is_none_or(|(l, _)| len > l) {
            best = Some((len, proj / len));
        }
    }
    best.expect("three candidates").1
}

/// Eigenvector columns sorted by eigenvalue, descending, with ties resolved against the
/// world axes.
fn principal_axes(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let l = idx.map(|i| eig.eigenvalues[i]);
    let v = idx.map(|i| eig.eigenvectors.column(i).normalize());
    let tol = EIGEN_TIE_TOLERANCE * l[0].abs();
    let tie01 = l[0] - l[1] <= tol;
    let tie12 = l[1] - l[2] <= tol;

    if !(l[0] > 0.0) || (tie01 && tie12) {
        return Matrix3::identity();
    }
    if tie01 {
        let a0 = world_aligned_in_plane(&v[2]);
        let a1 = v[2].cross(&a0);
        return Matrix3::from_columns(&[a0, a1, v[2]]);
    }
    if tie12 {
        let a1 = world_aligned_in_plane(&v[0]);
        let a2 = v[0].cross(&a1);
        return Matrix3::from_columns(&[v[0], a1, a2]);
    }
    Matrix3::from_columns(&v)
}

/// The eight corners. Corner `i` takes `+h_k` along axis `k` when bit `k` of `i` is set and
/// `-h_k` otherwise, so corner 0 is `(-,-,-)` and corner 7 is `(+,+,+)`.
pub fn obb_vertices(obb: &OrientedBoundingBox) -> [Point3<f64>; 8] {
    std::array::from_fn(|i| {
        let mut p = obb.center;
        for k in 0..3 {
            let sign = if (i >> k) & 1 == 1 { 1.0 } else { -1.0 };
            p += obb.axes.column(k) * (sign * obb.half_extents[k]);
        }
        p
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn cube_corners() -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        pts
    }

    #[test]
    fn unit_cube_corners() {
        let obb = fit_obb_points(&cube_corners()).unwrap();
        assert!((obb.center - Point3::new(0.5, 0.5, 0.5)).norm() < 1e-12);
        assert!((obb.half_extents - Vector3::repeat(0.5)).norm() < 1e-12);
        // Signed permutation of identity.
        for c in 0..3 {
            let col = obb.axes.column(c);
            let ones = col.iter().filter(|v| (v.abs() - 1.0).abs() < 1e-12).count();
            assert_eq!(ones, 1);
        }
        assert!(obb.is_well_formed(1e-9));
    }

    #[test]
    fn planar_rectangle_has_zero_third_extent() {
        let pts: Vec<_> = (0..5)
            .flat_map(|i| (0..3).map(move |j| Point3::new(i as f64 * 0.5, j as f64 * 0.2, 2.0)))
            .collect();
        let obb = fit_obb_points(&pts).unwrap();
        assert!(obb.half_extents[2].abs() < 1e-12);
        assert!((obb.half_extents[0] - 1.0).abs() < 1e-12);
        assert!((obb.half_extents[1] - 0.2).abs() < 1e-12);
        assert!(obb.is_well_formed(1e-9));
    }

    #[test]
    fn single_point() {
        let obb = fit_obb_points(&[Point3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(obb.center, Point3::new(1.0, 2.0, 3.0));
        assert_eq!(obb.half_extents, Vector3::zeros());
        assert_eq!(obb.axes, Matrix3::identity());
    }

    #[test]
    fn empty_cloud_errors() {
        assert!(matches!(fit_obb_points(&[]), Err(GeometryError::EmptyCloud)));
    }

    #[test]
    fn rotated_box_axes_follow_rotation() {
        let q = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let mut pts = Vec::new();
        for &x in &[-2.0, 2.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-0.25, 0.25] {
                    pts.push(Point3::from(q * Vector3::new(x, y, z)));
                }
            }
        }
        let obb = fit_obb_points(&pts).unwrap();
        assert!((obb.half_extents - Vector3::new(2.0, 1.0, 0.25)).norm() < 1e-9);
        for i in 0..3 {
            let expected = q * Vector3::ith(i, 1.0);
            assert!(obb.axis(i).dot(&expected).abs() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn vertices_of_axis_aligned_box() {
        let obb = OrientedBoundingBox {
            center: Point3::origin(),
            axes: Matrix3::identity(),
            half_extents: Vector3::repeat(0.5),
        };
        let v = obb_vertices(&obb);
        assert_eq!(v[0], Point3::new(-0.5, -0.5, -0.5));
        assert_eq!(v[1], Point3::new(0.5, -0.5, -0.5));
        assert_eq!(v[7], Point3::new(0.5, 0.5, 0.5));
        let zero = OrientedBoundingBox {
            half_extents: Vector3::zeros(),
            ..obb
        };
        assert!(obb_vertices(&zero).iter().all(|p| *p == Point3::origin()));
    }

    #[test]
    fn json_has_nine_axis_floats() {
        let obb = fit_obb_points(&cube_corners()).unwrap();
        let v = serde_json::to_value(obb).unwrap();
        assert_eq!(v["axes"].as_array().unwrap().len(), 9);
        let back: OrientedBoundingBox = serde_json::from_value(v).unwrap();
        assert_eq!(back, obb);
    }
}
