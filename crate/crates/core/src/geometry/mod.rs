//! Camera model, depth rasterization, back-projection, OBB fitting and box alignment.

mod align;
mod backproject;
mod camera;
mod obb;
mod raster;

use thiserror::Error;

pub use align::{compute_alignment, AffinePlacement, ScalingMode};
pub use backproject::{back_project, PointCloud};
pub use camera::Camera;
pub use obb::{fit_obb, fit_obb_points, obb_vertices, OrientedBoundingBox};
pub use raster::{
    front_camera, orbit_camera, render_buffers, render_depth, render_turntable, turntable_yaws,
    DepthBuffer, RasterBuffers, ViewSettings, NEAR_PLANE, NO_FACE, SENTINEL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("source extent {axis} is zero but the matched target extent is not")]
    DegenerateSource { axis: usize },
}

impl GeometryError {
    pub fn code(&self) -> &'static str {
        match self {
            GeometryError::DegenerateCamera(_) => "DegenerateCamera",
            GeometryError::EmptyMesh => "EmptyMesh",
            GeometryError::EmptyCloud => "EmptyCloud",
            GeometryError::DegenerateSource { .. } => "DegenerateSource",
        }
    }
}
