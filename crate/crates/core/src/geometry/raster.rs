//! Software depth rasterizer.
//!
//! Depth is metric camera-space Z sampled at pixel centers. Both triangle faces are
//! drawn, coverage follows the top-left rule, and triangles are clipped against a near
//! plane in camera space.

use std::io::{Read, Write};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Camera, GeometryError};
use crate::mesh::TriangleMesh;

/// Clip plane distance in camera space (meters).
pub const NEAR_PLANE: f64 = 1e-4;
/// Background marker in depth buffers.
pub const SENTINEL: f32 = f32::INFINITY;
/// Face-id marker for background pixels.
pub const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    pub width: u32,
    pub height: u32,
    /// Row-major, `SENTINEL` where nothing was drawn.
    pub values: Vec<f32>,
}

impl DepthBuffer {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![SENTINEL; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn is_background(&self, u: u32, v: u32) -> bool {
        self.get(u, v) == SENTINEL
    }

    pub fn covered_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != SENTINEL)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    /// Grayscale visualization: near surfaces bright, background black.
    pub fn to_grayscale(&self) -> Vec<u8> {
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &d in self.values.iter().filter(|d| **d != SENTINEL) {
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let span = (hi - lo).max(1e-6);
        self.values
            .iter()
            .map(|&d| {
                if d == SENTINEL {
                    0
                } else {
                    (255.0 - 200.0 * (d - lo) / span).round() as u8
                }
            })
            .collect()
    }

    /// Binary export: `u32` LE header length, JSON header, then row-major f32 LE values.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&DepthHeader {
            width: self.width,
            height: self.height,
            dtype: "f32le".into(),
            sentinel_bits: format!("0x{:08x}", SENTINEL.to_bits()),
        })
        .expect("header serializes");
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_owned());
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > 1 << 16 {
            return Err(bad("depth header too large"));
        }
        let mut header = vec![0u8; len];
        input.read_exact(&mut header)?;
        let header: DepthHeader =
            serde_json::from_slice(&header).map_err(|e| bad(&e.to_string()))?;
        if header.dtype != "f32le" {
            return Err(bad("unsupported depth dtype"));
        }
        let count = header.width as usize * header.height as usize;
        let mut raw = Vec::new();
        input.take(count as u64 * 4).read_to_end(&mut raw)?;
        if raw.len() != count * 4 {
            return Err(bad("truncated depth values"));
        }
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            width: header.width,
            height: header.height,
            values,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DepthHeader {
    width: u32,
    height: u32,
    dtype: String,
    sentinel_bits: String,
}

/// Depth plus the id of the nearest triangle per pixel.
#[derive(Debug, Clone)]
pub struct RasterBuffers {
    pub depth: DepthBuffer,
    pub face_ids: Vec<u32>,
}

impl RasterBuffers {
    #[inline]
    pub fn face(&self, u: u32, v: u32) -> u32 {
        self.face_ids[v as usize * self.depth.width as usize + u as usize]
    }
}

pub fn render_depth(mesh: &TriangleMesh, camera: &Camera) -> Result<DepthBuffer, GeometryError> {
    render_buffers(mesh, camera).map(|b| b.depth)
}

/// Rasterizes depth and face ids. On equal depth the lower triangle id wins.
pub fn render_buffers(mesh: &TriangleMesh, camera: &Camera) -> Result<RasterBuffers, GeometryError> {
    camera.validate()?;
    let mut depth = vec![f64::INFINITY; camera.pixel_count()];
    let mut face_ids = vec![NO_FACE; camera.pixel_count()];
    let cam_space: Vec<Vector3<f64>> = mesh.positions.iter().map(|p| camera.to_camera(p)).collect();

    for (id, tri) in mesh.indices.iter().enumerate() {
        let verts = tri.map(|i| cam_space[i as usize]);
        for clipped in clip_near(&verts) {
            draw_triangle(camera, &clipped, id as u32, &mut depth, &mut face_ids);
        }
    }

    Ok(RasterBuffers {
        depth: DepthBuffer {
            width: camera.width,
            height: camera.height,
            values: depth
                .into_iter()
                .map(|d| if d.is_finite() { d as f32 } else { SENTINEL })
                .collect(),
        },
        face_ids,
    })
}

/// Clips a camera-space triangle to `z >= NEAR_PLANE`, returning 0..=2 triangles.
fn clip_near(tri: &[Vector3<f64>; 3]) -> Vec<[Vector3<f64>; 3]> {
    let inside = tri.map(|v| v.z >= NEAR_PLANE);
    match inside.iter().filter(|&&i| i).count() {
        3 => return vec![*tri],
        0 => return Vec::new(),
        _ => {}
    }
    let mut poly: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        if inside[i] {
            poly.push(a);
        }
        if inside[i] != inside[(i + 1) % 3] {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            poly.push(p);
        }
    }
    (1..poly.len() - 1)
        .map(|i| [poly[0], poly[i], poly[i + 1]])
        .collect()
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn draw_triangle(
    camera: &Camera,
    tri: &[Vector3<f64>; 3],
    id: u32,
    depth: &mut [f64],
    face_ids: &mut [u32],
) {
    let project = |v: &Vector3<f64>| {
        (
            camera.fx * v.x / v.z + camera.cx,
            camera.fy * v.y / v.z + camera.cy,
        )
    };
    let mut s = tri.map(|v| project(&v));
    let mut inv_z = tri.map(|v| 1.0 / v.z);
    let mut area = edge(s[0], s[1], s[2]);
    if !area.is_finite() || area == 0.0 {
        return;
    }
    if area < 0.0 {
        s.swap(1, 2);
        inv_z.swap(1, 2);
        area = -area;
    }

    let (w, h) = (camera.width as i64, camera.height as i64);
    let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    // Pixel u is sampled at u + 0.5.
    let u0 = ((min_x - 0.5).ceil() as i64).max(0);
    let u1 = ((max_x - 0.5).floor() as i64).min(w - 1);
    let v0 = ((min_y - 0.5).ceil() as i64).max(0);
    let v1 = ((max_y - 0.5).floor() as i64).min(h - 1);
    if u0 > u1 || v0 > v1 {
        return;
    }

    // Top-left rule for the positive-area orientation in y-down screen space.
    let top_left = |a: (f64, f64), b: (f64, f64)| {
        let dy = b.1 - a.1;
        let dx = b.0 - a.0;
        dy < 0.0 || (dy == 0.0 && dx > 0.0)
    };
    let edges = [(1usize, 2usize), (2, 0), (0, 1)];
    let biases = edges.map(|(a, b)| top_left(s[a], s[b]));

    for v in v0..=v1 {
        let py = v as f64 + 0.5;
        for u in u0..=u1 {
            let p = (u as f64 + 0.5, py);
            let mut bary = [0.0; 3];
            let mut covered = true;
            for (k, &(a, b)) in edges.iter().enumerate() {
                let e = edge(s[a], s[b], p);
                if e < 0.0 || (e == 0.0 && !biases[k]) {
                    covered = false;
                    break;
                }
                bary[k] = e / area;
            }
            if !covered {
                continue;
            }
            let iz = bary[0] * inv_z[0] + bary[1] * inv_z[1] + bary[2] * inv_z[2];
            if iz <= 0.0 {
                continue;
            }
            let z = 1.0 / iz;
            let idx = (v * w + u) as usize;
            if z < depth[idx] {
                depth[idx] = z;
                face_ids[idx] = id;
            }
        }
    }
}

/// Output resolution and framing for orbit cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSettings {
    pub width: u32,
    pub height: u32,
    /// Fraction of the half image (smaller side) that the bounding sphere's silhouette spans.
    pub fill: f64,
}

impl Default for ViewSettings {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            fill: 0.9,
        }
    }
}

/// Camera on a sphere around `center`: yaw 0 sits on +Z looking toward -Z, positive yaw
/// rotates toward +X, positive elevation raises the camera toward +Y.
pub fn orbit_camera(
    center: Point3<f64>,
    radius: f64,
    yaw_deg: f64,
    elevation_deg: f64,
    distance_factor: f64,
    settings: &ViewSettings,
) -> Camera {
    let (yaw, elev) = (yaw_deg.to_radians(), elevation_deg.to_radians());
    let radius = if radius > 0.0 { radius } else { 1.0 };
    let distance = distance_factor * radius;
    let dir = Vector3::new(yaw.sin() * elev.cos(), elev.sin(), yaw.cos() * elev.cos());
    let eye = center + dir * distance;
    let half_angle = if distance_factor > 1.0 {
        (1.0 / distance_factor).asin()
    } else {
        std::f64::consts::FRAC_PI_4
    };
    let half = settings.width.min(settings.height) as f64 / 2.0;
    let focal = settings.fill * half / half_angle.tan();
    Camera::look_at(eye, center, settings.width, settings.height, focal)
}

/// Evenly spaced yaw ring around the mesh's bounding sphere.
pub fn render_turntable(
    mesh: &TriangleMesh,
    n_views: usize,
    elevation_deg: f64,
    distance_factor: f64,
    settings: &ViewSettings,
) -> Result<Vec<(Camera, DepthBuffer)>, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let (center, radius) = mesh.bounding_sphere().ok_or(GeometryError::EmptyMesh)?;
    turntable_yaws(n_views)
        .into_iter()
        .map(|yaw| {
            let cam = orbit_camera(center, radius, yaw, elevation_deg, distance_factor, settings);
            render_depth(mesh, &cam).map(|d| (cam, d))
        })
        .collect()
}

pub fn turntable_yaws(n_views: usize) -> Vec<f64> {
    (0..n_views)
        .map(|k| 360.0 * k as f64 / n_views as f64)
        .collect()
}

/// Front elevation camera: looks along world -Z at the AABB center from 2.5 bounding radii.
pub fn front_camera(mesh: &TriangleMesh, settings: &ViewSettings) -> Result<Camera, GeometryError> {
    let (center, radius) = mesh.bounding_sphere().ok_or(GeometryError::EmptyMesh)?;
    Ok(orbit_camera(center, radius, 0.0, 0.0, 2.5, settings))
}
