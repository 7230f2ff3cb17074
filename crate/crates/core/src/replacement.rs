//! Face removal in a localized region and splicing of an aligned component.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{compute_alignment, AffinePlacement, GeometryError, OrientedBoundingBox, ScalingMode};
use crate::mesh::{TriangleMesh, NO_MATERIAL};

pub const DEFAULT_INFLATION: f64 = 0.05;
/// Half-extents never shrink below this during selection, so flat boxes still select
/// faces lying in their plane.
pub const INFLATION_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplacementError {
    #[error("plan does not match the mesh: {0}")]
    StalePlan(String),
    #[error("component cannot be aligned: {0}")]
    DegenerateComponent(GeometryError),
}

impl ReplacementError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplacementError::StalePlan(_) => "StalePlanError",
            ReplacementError::DegenerateComponent(_) => "DegenerateComponent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    pub target_obb: OrientedBoundingBox,
    /// Ascending triangle ids.
    pub faces_to_remove: Vec<u32>,
    pub component_id: u32,
    pub placement: AffinePlacement,
    pub inflation: f64,
    /// Hash of the mesh the plan was made for; checked on apply when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_fingerprint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub removed_face_count: usize,
    pub added_face_count: usize,
    /// Edges of removed faces that now border exactly one remaining original triangle.
    pub open_boundary_edge_count: usize,
    /// Largest distance from a hole-boundary vertex to the inserted component's AABB.
    pub bounding_gap: f64,
}

/// SHA-256 over vertex coordinate bits and triangle indices.
pub fn mesh_fingerprint(mesh: &TriangleMesh) -> String {
    let mut h = Sha256::new();
    h.update((mesh.positions.len() as u64).to_le_bytes());
    for p in &mesh.positions {
        for c in p.coords.iter() {
            h.update(c.to_bits().to_le_bytes());
        }
    }
    h.update((mesh.indices.len() as u64).to_le_bytes());
    for t in &mesh.indices {
        for v in t {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// First material slot above every slot used by `mesh`.
pub fn fresh_slot_base(mesh: &TriangleMesh) -> u32 {
    mesh.material_slots
        .iter()
        .flatten()
        .filter(|&&s| s != NO_MATERIAL)
        .max()
        .map_or(0, |m| m + 1)
}

/// Triangles whose three vertices all lie in `obb` with half-extents scaled by
/// `1 + inflation` (at least [`INFLATION_FLOOR`]).
pub fn select_faces_in_region(mesh: &TriangleMesh, obb: &OrientedBoundingBox, inflation: f64) -> Vec<u32> {
    let region = obb.inflated(inflation, INFLATION_FLOOR);
    let inside: Vec<bool> = mesh.positions.iter().map(|p| region.contains(p)).collect();
    mesh.indices
        .iter()
        .enumerate()
        .filter(|(_, t)| t.iter().all(|&v| inside[v as usize]))
        .map(|(i, _)| i as u32)
        .collect()
}

/// Selects the region's faces and maps `component_obb` (the canonical component's box)
/// onto `target`.
pub fn plan_replacement(
    mesh: &TriangleMesh,
    target: &OrientedBoundingBox,
    component_id: u32,
    component_obb: &OrientedBoundingBox,
    mode: ScalingMode,
    inflation: f64,
) -> Result<ReplacementPlan, ReplacementError> {
    let placement =
        compute_alignment(component_obb, target, mode).map_err(ReplacementError::DegenerateComponent)?;
    Ok(ReplacementPlan {
        target_obb: *target,
        faces_to_remove: select_faces_in_region(mesh, target, inflation),
        component_id,
        placement,
        inflation,
        mesh_fingerprint: Some(mesh_fingerprint(mesh)),
    })
}

/// Removes the plan's faces, drops vertices no remaining face uses, and appends the
/// canonical `component` transformed by the plan's placement. Component material slots
/// move to a fresh range above every slot in `mesh`.
pub fn apply_replacement(
    mesh: &TriangleMesh,
    plan: &ReplacementPlan,
    component: &TriangleMesh,
) -> Result<(TriangleMesh, FusionReport), ReplacementError> {
    let n_tris = mesh.triangle_count();
    if let Some(&bad) = plan.faces_to_remove.iter().find(|&&f| f as usize >= n_tris) {
        return Err(ReplacementError::StalePlan(format!(
            "face {bad} does not exist in a mesh of {n_tris} triangles"
        )));
    }
    if let Some(fp) = &plan.mesh_fingerprint {
        if *fp != mesh_fingerprint(mesh) {
            return Err(ReplacementError::StalePlan("mesh changed since planning".into()));
        }
    }
    let mut removed = vec![false; n_tris];
    for &f in &plan.faces_to_remove {
        removed[f as usize] = true;
    }
    let removed_count = removed.iter().filter(|r| **r).count();

    // Hole boundary: edges of removed faces with exactly one remaining incident face.
    let key = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
    let mut remaining_uses: HashMap<(u32, u32), u32> = HashMap::new();
    let mut hole_edges: Vec<(u32, u32)> = Vec::new();
    for (t, tri) in mesh.indices.iter().enumerate() {
        for e in 0..3 {
            let k = key(tri[e], tri[(e + 1) % 3]);
            if removed[t] {
                hole_edges.push(k);
            } else {
                *remaining_uses.entry(k).or_default() += 1;
            }
        }
    }
    hole_edges.sort_unstable();
    hole_edges.dedup();
    let open: Vec<(u32, u32)> = hole_edges
        .into_iter()
        .filter(|k| remaining_uses.get(k) == Some(&1))
        .collect();

    // Keep surviving triangles and the vertices they use, both in their original order.
    let mut used = vec![false; mesh.vertex_count()];
    for (t, tri) in mesh.indices.iter().enumerate() {
        if !removed[t] {
            for &v in tri {
                used[v as usize] = true;
            }
        }
    }
    let order: Vec<usize> = (0..mesh.vertex_count()).filter(|&i| used[i]).collect();
    let mut remap = vec![u32::MAX; mesh.vertex_count()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new as u32;
    }
    let mut out = TriangleMesh::default();
    let mut kept_slots = Vec::new();
    let mut kept_tris = Vec::with_capacity(n_tris - removed_count);
    for (t, tri) in mesh.indices.iter().enumerate() {
        if removed[t] {
            continue;
        }
        kept_tris.push(tri.map(|v| remap[v as usize]));
        if let Some(s) = &mesh.material_slots {
            kept_slots.push(s[t]);
        }
    }
    out.positions = order.iter().map(|&i| mesh.positions[i]).collect();
    out.indices = kept_tris;
    out.normals = mesh.normals.as_ref().map(|n| order.iter().map(|&i| n[i]).collect());
    out.uvs = mesh.uvs.as_ref().map(|u| order.iter().map(|&i| u[i]).collect());
    out.material_slots = mesh.material_slots.as_ref().map(|_| kept_slots);

    let slot_base = fresh_slot_base(mesh);
    let mut placed = component.clone();
    placed.transform(&plan.placement.to_matrix());
    if let Some(slots) = &mut placed.material_slots {
        for s in slots.iter_mut().filter(|s| **s != NO_MATERIAL) {
            *s += slot_base;
        }
    }
    let bounds = placed.aabb();
    let bounding_gap = match bounds {
        Some(b) => open
            .iter()
            .flat_map(|&(a, c)| [a, c])
            .map(|v| b.distance_to(&mesh.positions[v as usize]))
            .fold(0.0, f64::max),
        None => 0.0,
    };
    out.append(&placed);

    Ok((
        out,
        FusionReport {
            removed_face_count: removed_count,
            added_face_count: component.triangle_count(),
            open_boundary_edge_count: open.len(),
            bounding_gap,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{box_mesh, fixture_house, HouseParams};
    use crate::geometry::fit_obb_points;
    use crate::mesh::validate_mesh;
    use nalgebra::{Matrix3, Point3, Vector3};

    fn window_obb(x: [f64; 2], y: [f64; 2], z: f64) -> OrientedBoundingBox {
        let corners = [
            Point3::new(x[0], y[0], z),
            Point3::new(x[1], y[0], z),
            Point3::new(x[1], y[1], z),
            Point3::new(x[0], y[1], z),
        ];
        fit_obb_points(&corners).unwrap()
    }

    #[test]
    fn whole_and_disjoint_boxes() {
        let b = box_mesh(Point3::origin(), Vector3::new(1.0, 1.0, 1.0));
        let all = OrientedBoundingBox {
            center: Point3::origin(),
            axes: Matrix3::identity(),
            half_extents: Vector3::new(2.0, 2.0, 2.0),
        };
        assert_eq!(select_faces_in_region(&b, &all, 0.0), (0..12).collect::<Vec<_>>());
        let far = OrientedBoundingBox {
            center: Point3::new(10.0, 0.0, 0.0),
            ..all
        };
        assert!(select_faces_in_region(&b, &far, 0.05).is_empty());
    }

    #[test]
    fn house_window_region_selects_exactly_its_quad() {
        let house = fixture_house(&HouseParams::default());
        for o in &house.openings {
            let obb = window_obb(o.x, o.y, house.front_z);
            assert_eq!(select_faces_in_region(&house.mesh, &obb, DEFAULT_INFLATION), o.faces);
        }
    }

    #[test]
    fn splice_into_house_window() {
        let house = fixture_house(&HouseParams::default());
        let o = &house.openings[0];
        let target = window_obb(o.x, o.y, house.front_z);
        let component = box_mesh(Point3::origin(), Vector3::new(0.5, 0.8, 0.05));
        let comp_obb = fit_obb_points(&component.positions).unwrap();
        let plan =
            plan_replacement(&house.mesh, &target, 7, &comp_obb, ScalingMode::PerAxis, DEFAULT_INFLATION).unwrap();
        assert_eq!(plan.faces_to_remove, o.faces);
        let (out, report) = apply_replacement(&house.mesh, &plan, &component).unwrap();
        assert_eq!(
            out.triangle_count(),
            house.mesh.triangle_count() - report.removed_face_count + component.triangle_count()
        );
        assert_eq!(report.removed_face_count, 2);
        assert_eq!(report.open_boundary_edge_count, 4);
        assert!(report.bounding_gap < 1e-9);
        assert!(validate_mesh(&out).is_valid());

        let inserted = &out.positions[out.vertex_count() - component.vertex_count()..];
        let refit = fit_obb_points(inserted).unwrap();
        assert!((refit.center - target.center).norm() < 1e-6);
        assert!((refit.half_extents - target.half_extents).norm() < 1e-6);
    }

    #[test]
    fn empty_selection_is_pure_insertion() {
        let b = box_mesh(Point3::origin(), Vector3::new(1.0, 1.0, 1.0));
        let c = box_mesh(Point3::origin(), Vector3::new(0.3, 0.2, 0.1));
        let target = OrientedBoundingBox {
            center: Point3::new(5.0, 0.0, 0.0),
            axes: Matrix3::identity(),
            half_extents: Vector3::new(0.3, 0.2, 0.1),
        };
        let obb = fit_obb_points(&c.positions).unwrap();
        let plan = plan_replacement(&b, &target, 0, &obb, ScalingMode::Uniform, 0.05).unwrap();
        let (out, report) = apply_replacement(&b, &plan, &c).unwrap();
        assert_eq!(report.removed_face_count, 0);
        assert_eq!(report.open_boundary_edge_count, 0);
        assert_eq!(out.triangle_count(), 24);
        assert_eq!(&out.positions[..8], &b.positions[..]);
    }

    #[test]
    fn stale_plans_are_rejected() {
        let b = box_mesh(Point3::origin(), Vector3::new(1.0, 1.0, 1.0));
        let obb = fit_obb_points(&b.positions).unwrap();
        let mut plan = plan_replacement(&b, &obb, 0, &obb, ScalingMode::PerAxis, 0.05).unwrap();
        let mut moved = b.clone();
        moved.positions[0].x += 1e-9;
        assert_eq!(apply_replacement(&moved, &plan, &b).unwrap_err().code(), "StalePlanError");
        plan.mesh_fingerprint = None;
        plan.faces_to_remove.push(40);
        assert!(matches!(
            apply_replacement(&b, &plan, &b),
            Err(ReplacementError::StalePlan(_))
        ));
    }

    #[test]
    fn component_slots_move_to_fresh_range() {
        let mut base = box_mesh(Point3::origin(), Vector3::new(1.0, 1.0, 1.0));
        base.material_slots = Some(vec![2; 12]);
        let mut c = box_mesh(Point3::origin(), Vector3::new(0.3, 0.2, 0.1));
        c.material_slots = Some((0..12).map(|i| if i < 6 { 0 } else { NO_MATERIAL }).collect());
        let target = OrientedBoundingBox {
            center: Point3::new(5.0, 0.0, 0.0),
            axes: Matrix3::identity(),
            half_extents: Vector3::new(0.3, 0.2, 0.1),
        };
        let obb = fit_obb_points(&c.positions).unwrap();
        let plan = plan_replacement(&base, &target, 0, &obb, ScalingMode::PerAxis, 0.05).unwrap();
        let (out, _) = apply_replacement(&base, &plan, &c).unwrap();
        let slots = out.material_slots.unwrap();
        assert_eq!(&slots[12..18], &[3; 6]);
        assert_eq!(slots[20], NO_MATERIAL);
    }
}
