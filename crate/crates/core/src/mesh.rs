//! Indexed triangle geometry and its validation.

use nalgebra::{Matrix3, Matrix4, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Material slot assigned to triangles that came from a primitive without a material.
pub const NO_MATERIAL: u32 = u32::MAX;

const NORMAL_LENGTH_TOLERANCE: f64 = 1e-4;

/// Indexed triangle mesh in meters, right-handed, Y up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Point3<f64>>,
    pub indices: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub uvs: Option<Vec<Vector2<f64>>>,
    /// Per-triangle material slot; `NO_MATERIAL` when a triangle has none.
    pub material_slots: Option<Vec<u32>>,
}

/// Axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    /// Euclidean distance from `p` to the box, zero inside.
    pub fn distance_to(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = p[i];
            let excess = if v < self.min[i] {
                self.min[i] - v
            } else if v > self.max[i] {
                v - self.max[i]
            } else {
                0.0
            };
            d2 += excess * excess;
        }
        d2.sqrt()
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bounds = Aabb { min: first, max: first };
        for p in iter {
            bounds.min = bounds.min.inf(p);
            bounds.max = bounds.max.sup(p);
        }
        Some(bounds)
    }
}

impl TriangleMesh {
    pub fn new(positions: Vec<Point3<f64>>, indices: Vec<[u32; 3]>) -> Self {
        Self {
            positions,
            indices,
            ..Self::default()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn triangle(&self, id: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.indices[id];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    pub fn triangle_area(&self, id: usize) -> f64 {
        let [a, b, c] = self.triangle(id);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.indices.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unit face normal, or zero for degenerate triangles.
    pub fn face_normal(&self, id: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(id);
        (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_else(Vector3::zeros)
    }

    /// Bounds of the referenced vertices only.
    pub fn aabb(&self) -> Option<Aabb> {
        if self.indices.is_empty() {
            return Aabb::from_points(self.positions.iter());
        }
        let mut used = vec![false; self.positions.len()];
        for tri in &self.indices {
            for &v in tri {
                if let Some(slot) = used.get_mut(v as usize) {
                    *slot = true;
                }
            }
        }
        Aabb::from_points(
            self.positions
                .iter()
                .zip(&used)
                .filter(|(_, &u)| u)
                .map(|(p, _)| p),
        )
    }

    /// Smallest sphere center/radius pair around the AABB (center of box, half diagonal).
    pub fn bounding_sphere(&self) -> Option<(Point3<f64>, f64)> {
        let bounds = self.aabb()?;
        Some((bounds.center(), 0.5 * bounds.extent().norm()))
    }

    /// Applies an affine transform in place. Normals go through the cofactor matrix, which
    /// equals the inverse transpose up to a positive factor and stays usable when the
    /// transform flattens an axis; they are renormalized afterwards.
    pub fn transform(&mut self, m: &Matrix4<f64>) {
        for p in &mut self.positions {
            *p = m.transform_point(p);
        }
        if let Some(normals) = &mut self.normals {
            let linear = m.fixed_view::<3, 3>(0, 0).into_owned();
            let mut cofactor = Matrix3::from_columns(&[
                linear.column(1).cross(&linear.column(2)),
                linear.column(2).cross(&linear.column(0)),
                linear.column(0).cross(&linear.column(1)),
            ]);
            if linear.determinant() < 0.0 {
                cofactor = -cofactor;
            }
            for n in normals.iter_mut() {
                let t = cofactor * *n;
                *n = t
                    .try_normalize(1e-300)
                    .or_else(|| (linear * *n).try_normalize(1e-300))
                    .unwrap_or(*n);
            }
        }
    }

    /// Appends `other`, offsetting its indices. Optional attributes survive only when both
    /// sides carry them (or `self` is empty).
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.positions.len() as u32;
        let self_empty = self.positions.is_empty() && self.indices.is_empty();
        let self_tris = self.indices.len();

        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if self_empty => Some(b.clone()),
            _ => None,
        };
        self.uvs = match (self.uvs.take(), &other.uvs) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if self_empty => Some(b.clone()),
            _ => None,
        };
        self.material_slots = match (self.material_slots.take(), &other.material_slots) {
            (None, None) => None,
            (a, b) => {
                let mut slots = a.unwrap_or_else(|| vec![NO_MATERIAL; self_tris]);
                match b {
                    Some(b) => slots.extend_from_slice(b),
                    None => slots.extend(std::iter::repeat_n(NO_MATERIAL, other.indices.len())),
                }
                Some(slots)
            }
        };

        self.positions.extend_from_slice(&other.positions);
        self.indices
            .extend(other.indices.iter().map(|t| t.map(|v| v + base)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IssueCode {
    IndexOutOfRange,
    NonFiniteCoordinate,
    NonUnitNormal,
    AttributeLengthMismatch,
    DegenerateTriangle,
    UnreferencedVertex,
}

/// Where an issue sits in the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Location {
    Mesh,
    Vertex(usize),
    Triangle(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<(IssueCode, Location)>,
    pub warnings: Vec<(IssueCode, Location)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Enumerates every invariant violation. Errors and warnings are sorted by (code, location).
///
/// Degenerate triangles and unreferenced vertices are warnings; they do not break any
/// invariant of [`TriangleMesh`].
pub fn validate_mesh(mesh: &TriangleMesh) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = mesh.positions.len();

    for (i, p) in mesh.positions.iter().enumerate() {
        if !p.coords.iter().all(|c| c.is_finite()) {
            report
                .errors
                .push((IssueCode::NonFiniteCoordinate, Location::Vertex(i)));
        }
    }

    let mut referenced = vec![false; n];
    for (t, tri) in mesh.indices.iter().enumerate() {
        let mut in_range = true;
        for &v in tri {
            match referenced.get_mut(v as usize) {
                Some(r) => *r = true,
                None => in_range = false,
            }
        }
        if !in_range {
            report
                .errors
                .push((IssueCode::IndexOutOfRange, Location::Triangle(t)));
        } else if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            report
                .warnings
                .push((IssueCode::DegenerateTriangle, Location::Triangle(t)));
        }
    }

    if let Some(normals) = &mesh.normals {
        if normals.len() != n {
            report
                .errors
                .push((IssueCode::AttributeLengthMismatch, Location::Mesh));
        }
        for (i, nrm) in normals.iter().enumerate() {
            if !nrm.iter().all(|c| c.is_finite()) {
                report
                    .errors
                    .push((IssueCode::NonFiniteCoordinate, Location::Vertex(i)));
            } else if (nrm.norm() - 1.0).abs() > NORMAL_LENGTH_TOLERANCE {
                report
                    .errors
                    .push((IssueCode::NonUnitNormal, Location::Vertex(i)));
            }
        }
    }
    if let Some(uvs) = &mesh.uvs {
        if uvs.len() != n {
            report
                .errors
                .push((IssueCode::AttributeLengthMismatch, Location::Mesh));
        }
        for (i, uv) in uvs.iter().enumerate() {
            if !uv.iter().all(|c| c.is_finite()) {
                report
                    .errors
                    .push((IssueCode::NonFiniteCoordinate, Location::Vertex(i)));
            }
        }
    }
    if let Some(slots) = &mesh.material_slots {
        if slots.len() != mesh.indices.len() {
            report
                .errors
                .push((IssueCode::AttributeLengthMismatch, Location::Mesh));
        }
    }

    if !mesh.indices.is_empty() {
        for (i, r) in referenced.iter().enumerate() {
            if !r {
                report
                    .warnings
                    .push((IssueCode::UnreferencedVertex, Location::Vertex(i)));
            }
        }
    }

    report.errors.sort();
    report.errors.dedup();
    report.warnings.sort();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn valid_triangle_has_empty_report() {
        let report = validate_mesh(&unit_triangle());
        assert!(report.errors.is_empty());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn out_of_range_index() {
        let mut mesh = unit_triangle();
        mesh.indices[0] = [0, 1, 99];
        let report = validate_mesh(&mesh);
        assert_eq!(
            report.errors,
            vec![(IssueCode::IndexOutOfRange, Location::Triangle(0))]
        );
    }

    #[test]
    fn nan_position() {
        let mut mesh = unit_triangle();
        mesh.positions[1].y = f64::NAN;
        let report = validate_mesh(&mesh);
        assert_eq!(
            report.errors,
            vec![(IssueCode::NonFiniteCoordinate, Location::Vertex(1))]
        );
    }

    #[test]
    fn normals_must_be_unit() {
        let mut mesh = unit_triangle();
        mesh.normals = Some(vec![
            Vector3::z(),
            Vector3::z() * 1.00005,
            Vector3::z() * 1.1,
        ]);
        let report = validate_mesh(&mesh);
        assert_eq!(
            report.errors,
            vec![(IssueCode::NonUnitNormal, Location::Vertex(2))]
        );
    }

    #[test]
    fn report_ordering_is_by_code_then_location() {
        let mut mesh = unit_triangle();
        mesh.positions.push(Point3::new(f64::INFINITY, 0.0, 0.0));
        mesh.positions[0].x = f64::NAN;
        mesh.indices.push([0, 7, 1]);
        let report = validate_mesh(&mesh);
        assert_eq!(
            report.errors,
            vec![
                (IssueCode::IndexOutOfRange, Location::Triangle(1)),
                (IssueCode::NonFiniteCoordinate, Location::Vertex(0)),
                (IssueCode::NonFiniteCoordinate, Location::Vertex(3)),
            ]
        );
        assert_eq!(
            report.warnings,
            vec![(IssueCode::UnreferencedVertex, Location::Vertex(3))]
        );
    }

    #[test]
    fn append_offsets_indices_and_merges_slots() {
        let mut a = unit_triangle();
        let mut b = unit_triangle();
        b.material_slots = Some(vec![4]);
        a.append(&b);
        assert_eq!(a.indices, vec![[0, 1, 2], [3, 4, 5]]);
        assert_eq!(a.material_slots, Some(vec![NO_MATERIAL, 4]));
        assert!((a.surface_area() - 1.0).abs() < 1e-12);
    }
}
