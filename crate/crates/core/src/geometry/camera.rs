use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Pinhole camera. `x_cam = rotation * x_world + translation`; the camera looks along its
/// +Z axis, image origin is top-left with x right and y down. Pixel `(u, v)` covers the
/// continuous square `[u, u+1) x [v, v+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Wire form: rotation is 9 floats row-major.
#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl TryFrom<CameraJson> for Camera {
    type Error = String;

    fn try_from(j: CameraJson) -> Result<Self, String> {
        let cam = Camera {
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            width: j.width,
            height: j.height,
            rotation: Matrix3::from_row_slice(&j.rotation),
            translation: Vector3::from(j.translation),
        };
        cam.validate().map_err(|e| e.to_string())?;
        Ok(cam)
    }
}

impl Camera {
    /// Camera at `eye` looking at `target`, with world +Y as the up hint. `fy = fx`.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        width: u32,
        height: u32,
        focal: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let mut up_hint = Vector3::y();
        if forward.cross(&up_hint).norm() < 1e-9 {
            up_hint = Vector3::z();
        }
        let right = forward.cross(&up_hint).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation: -(rotation * eye.coords),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(ortho <= ORTHONORMAL_TOLERANCE) || !((det - 1.0).abs() <= ORTHONORMAL_TOLERANCE) {
            return Err(GeometryError::DegenerateCamera(format!(
                "rotation not orthonormal (max deviation {ortho:e}, det {det})"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::DegenerateCamera("non-positive focal length".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::DegenerateCamera("empty image".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeometryError::DegenerateCamera("principal point outside image".into()));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::DegenerateCamera("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// World direction of the optical axis.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p_cam - self.translation))
    }

    /// Continuous image coordinates and camera depth of a world point; `None` behind the
    /// camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        (c.z > 0.0).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// Camera-space point at depth `z` through the center of pixel `(u, v)`.
    pub fn unproject_pixel(&self, u: u32, v: u32, z: f64) -> Vector3<f64> {
        Vector3::new(
            z * (u as f64 + 0.5 - self.cx) / self.fx,
            z * (v as f64 + 0.5 - self.cy) / self.fy,
            z,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
