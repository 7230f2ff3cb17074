//! Procedural fixtures: parameterized window/door components and a small house whose
//! opening faces are known by construction.
//!
//! These stand in for a curated component catalog and for generated building meshes in
//! tests, benches, and the `fixtures` CLI subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asset::mesh_to_glb;
use crate::geometry::{front_camera, render_buffers, Camera, ViewSettings, NO_FACE};
use crate::mesh::TriangleMesh;
use crate::segmentation::ComponentMask;

/// Axis-aligned box with 8 shared vertices and 12 outward-wound triangles.
pub fn box_mesh(center: Point3<f64>, half: Vector3<f64>) -> TriangleMesh {
    let mut positions = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |bit: usize| if (i >> bit) & 1 == 1 { 1.0 } else { -1.0 };
        positions.push(center + Vector3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z));
    }
    // Vertex i has x from bit 0, y from bit 1, z from bit 2.
    let indices = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
    ];
    TriangleMesh::new(positions, indices)
}

fn box_between(min: Point3<f64>, max: Point3<f64>) -> TriangleMesh {
    box_mesh(nalgebra::center(&min, &max), (max - min) / 2.0)
}

/// Flat rectangle in a constant-z plane, two triangles.
fn quad_xy(x0: f64, x1: f64, y0: f64, y1: f64, z: f64) -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Point3::new(x0, y0, z),
            Point3::new(x1, y0, z),
            Point3::new(x1, y1, z),
            Point3::new(x0, y1, z),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Window,
    Door,
}

impl ComponentKind {
    pub fn category(self) -> &'static str {
        match self {
            ComponentKind::Window => "window",
            ComponentKind::Door => "door",
        }
    }
}

/// Shape parameters of a procedural component. Lengths in meters; the component faces +Z
/// with its back at z = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub kind: ComponentKind,
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    pub frame: f64,
    /// Pane columns (windows) or panel columns (doors).
    pub panes_x: u32,
    /// Pane rows (windows) or panel rows (doors).
    pub panes_y: u32,
    /// Semicircular head on windows; glazed upper band on doors.
    pub arch: bool,
}

impl ComponentParams {
    pub fn build(&self) -> TriangleMesh {
        match self.kind {
            ComponentKind::Window => build_window(self),
            ComponentKind::Door => build_door(self),
        }
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags = vec![
            format!("panes:{}x{}", self.panes_x, self.panes_y),
            format!("size:{:.2}x{:.2}", self.width, self.height),
        ];
        if self.arch {
            tags.push(match self.kind {
                ComponentKind::Window => "arched".into(),
                ComponentKind::Door => "glazed".into(),
            });
        }
        tags
    }
}

const ARCH_SEGMENTS: usize = 12;

fn build_window(p: &ComponentParams) -> TriangleMesh {
    let (w, h, d, f) = (p.width, p.height, p.depth, p.frame);
    let mut mesh = TriangleMesh::default();
    let bar = |x0: f64, x1: f64, y0: f64, y1: f64| {
        box_between(Point3::new(x0, y0, 0.0), Point3::new(x1, y1, d))
    };
    let glass_z = 0.3 * d;
    let mullion = 0.5 * f;
    let rect_top = if p.arch { h - w / 2.0 } else { h };

    // Outer frame.
    mesh.append(&bar(0.0, w, 0.0, f));
    mesh.append(&bar(0.0, f, f, rect_top));
    mesh.append(&bar(w - f, w, f, rect_top));
    if p.arch {
        mesh.append(&bar(f, w - f, rect_top - mullion, rect_top));
        let (cx, r_out) = (w / 2.0, w / 2.0);
        let r_in = r_out - f;
        let mut ring = TriangleMesh::default();
        let mut fan = TriangleMesh::default();
        for s in 0..ARCH_SEGMENTS {
            let a0 = std::f64::consts::PI * s as f64 / ARCH_SEGMENTS as f64;
            let a1 = std::f64::consts::PI * (s + 1) as f64 / ARCH_SEGMENTS as f64;
            let pt = |r: f64, a: f64, z: f64| Point3::new(cx + r * a.cos(), rect_top + r * a.sin(), z);
            // Frame segment as a closed prism between the two radii.
            let corners = [pt(r_in, a0, 0.0), pt(r_out, a0, 0.0), pt(r_out, a1, 0.0), pt(r_in, a1, 0.0)];
            let base = ring.positions.len() as u32;
            for c in corners {
                ring.positions.push(c);
            }
            for c in corners {
                ring.positions.push(Point3::new(c.x, c.y, d));
            }
            let q = |a: u32, b: u32, c: u32, e: u32| [[base + a, base + b, base + c], [base + a, base + c, base + e]];
            for tris in [q(0, 3, 2, 1), q(4, 5, 6, 7), q(0, 1, 5, 4), q(1, 2, 6, 5), q(2, 3, 7, 6), q(3, 0, 4, 7)] {
                ring.indices.extend(tris);
            }
            // Glass fan.
            let fb = fan.positions.len() as u32;
            fan.positions.push(Point3::new(cx, rect_top, glass_z));
            fan.positions.push(pt(r_in, a0, glass_z));
            fan.positions.push(pt(r_in, a1, glass_z));
            fan.indices.push([fb, fb + 1, fb + 2]);
        }
        mesh.append(&ring);
        mesh.append(&fan);
    } else {
        mesh.append(&bar(0.0, w, h - f, h));
    }

    // Mullions and transoms inside the rectangular opening.
    let (ix0, ix1, iy0, iy1) = (f, w - f, f, if p.arch { rect_top - mullion } else { h - f });
    for i in 1..p.panes_x {
        let x = ix0 + (ix1 - ix0) * i as f64 / p.panes_x as f64;
        mesh.append(&box_between(
            Point3::new(x - mullion / 2.0, iy0, 0.1 * d),
            Point3::new(x + mullion / 2.0, iy1, 0.9 * d),
        ));
    }
    for j in 1..p.panes_y {
        let y = iy0 + (iy1 - iy0) * j as f64 / p.panes_y as f64;
        mesh.append(&box_between(
            Point3::new(ix0, y - mullion / 2.0, 0.1 * d),
            Point3::new(ix1, y + mullion / 2.0, 0.9 * d),
        ));
    }
    mesh.append(&quad_xy(ix0, ix1, iy0, iy1, glass_z));
    mesh
}

fn build_door(p: &ComponentParams) -> TriangleMesh {
    let (w, h, d, f) = (p.width, p.height, p.depth, p.frame);
    let mut mesh = TriangleMesh::default();
    let bar = |x0: f64, x1: f64, y0: f64, y1: f64, z0: f64, z1: f64| {
        box_between(Point3::new(x0, y0, z0), Point3::new(x1, y1, z1))
    };
    // Jambs and head.
    mesh.append(&bar(0.0, f, 0.0, h, 0.0, d));
    mesh.append(&bar(w - f, w, 0.0, h, 0.0, d));
    mesh.append(&bar(f, w - f, h - f, h, 0.0, d));
    // Leaf.
    let leaf_z = 0.5 * d;
    let (lx0, lx1, ly0, ly1) = (f, w - f, 0.0, h - f);
    mesh.append(&bar(lx0, lx1, ly0, ly1, 0.1 * d, leaf_z));

    let panel_top = if p.arch {
        let band = ly1 - 0.25 * (ly1 - ly0);
        mesh.append(&bar(lx0 + f, lx1 - f, band + f / 2.0, ly1 - f, 0.1 * d, leaf_z + 0.2 * d));
        mesh.append(&quad_xy(lx0 + 1.5 * f, lx1 - 1.5 * f, band + 1.5 * f, ly1 - 1.5 * f, leaf_z + 0.25 * d));
        band
    } else {
        ly1
    };

    // Raised panels.
    let margin = 1.5 * f;
    let (px0, px1, py0, py1) = (lx0 + margin, lx1 - margin, ly0 + margin, panel_top - margin);
    let cell_w = (px1 - px0) / p.panes_x as f64;
    let cell_h = (py1 - py0) / p.panes_y as f64;
    for i in 0..p.panes_x {
        for j in 0..p.panes_y {
            let x0 = px0 + cell_w * i as f64 + f / 2.0;
            let y0 = py0 + cell_h * j as f64 + f / 2.0;
            mesh.append(&bar(x0, x0 + cell_w - f, y0, y0 + cell_h - f, leaf_z, leaf_z + 0.3 * d));
        }
    }
    // Handle.
    let hx = lx1 - 2.0 * f;
    mesh.append(&bar(hx - 0.02, hx + 0.02, 0.95, 1.1, leaf_z, leaf_z + 0.6 * d));
    mesh
}

/// One entry of the synthetic component suite.
#[derive(Debug, Clone)]
pub struct SuiteComponent {
    pub name: String,
    pub params: ComponentParams,
    pub mesh: TriangleMesh,
}

/// `count` components with pairwise distinct shape parameters, windows first by
/// interleaving. Deterministic in `seed`.
pub fn synthetic_suite(count: usize, seed: u64) -> Vec<SuiteComponent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<(ComponentKind, u32, u32, bool, usize)> = Vec::new();
    for aspect in 0..3 {
        for px in 1..=3 {
            for py in 1..=3 {
                for arch in [false, true] {
                    combos.push((ComponentKind::Window, px, py, arch, aspect));
                }
            }
        }
        for px in 1..=2 {
            for py in 1..=4 {
                for glazed in [false, true] {
                    combos.push((ComponentKind::Door, px, py, glazed, aspect));
                }
            }
        }
    }
    combos.shuffle(&mut rng);

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (kind, px, py, arch, aspect) = combos[i % combos.len()];
        // Repeated combos (count beyond the grid) differ by proportions.
        let round = (i / combos.len()) as f64;
        let jitter: f64 = rng.random_range(-0.05..0.05);
        let params = match kind {
            ComponentKind::Window => {
                let width = [0.7, 1.1, 1.6][aspect] * (1.0 + 0.13 * round) + jitter;
                let height = [1.5, 1.2, 0.9][aspect] * (1.0 + 0.07 * round) + jitter;
                ComponentParams {
                    kind,
                    width,
                    height: if arch { height + width / 2.0 } else { height },
                    depth: rng.random_range(0.08..0.14),
                    frame: rng.random_range(0.05..0.08),
                    panes_x: px,
                    panes_y: py,
                    arch,
                }
            }
            ComponentKind::Door => ComponentParams {
                kind,
                width: [0.8, 0.95, 1.2][aspect] * (1.0 + 0.11 * round) + jitter,
                height: 2.1 + 0.1 * aspect as f64 + 0.05 * round + jitter,
                depth: rng.random_range(0.1..0.16),
                frame: rng.random_range(0.05..0.08),
                panes_x: px,
                panes_y: py,
                arch,
            },
        };
        let name = format!("{}_{:03}", kind.category(), i);
        let mesh = params.build();
        out.push(SuiteComponent { name, params, mesh });
    }
    out
}

/// Sidecar entry describing a catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// Writes `<name>.glb` per component plus `metadata.json` (relative path → category/tags).
pub fn write_suite(dir: &Path, suite: &[SuiteComponent]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut sidecar = BTreeMap::new();
    for c in suite {
        let file = format!("{}.glb", c.name);
        let bytes = mesh_to_glb(&c.mesh).map_err(|e| io::Error::other(e.to_string()))?;
        fs::write(dir.join(&file), bytes)?;
        sidecar.insert(
            file,
            SidecarEntry {
                category: c.params.kind.category().into(),
                tags: c.params.tags(),
            },
        );
    }
    fs::write(
        dir.join("metadata.json"),
        serde_json::to_vec_pretty(&sidecar).map_err(io::Error::other)?,
    )
}

/// Rectangular opening in the house's front wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub label: String,
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Triangle ids of the opening's infill in the house mesh.
    pub faces: Vec<u32>,
}

impl Opening {
    pub fn width(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn height(&self) -> f64 {
        self.y[1] - self.y[0]
    }
}

#[derive(Debug, Clone)]
pub struct FixtureHouse {
    pub mesh: TriangleMesh,
    pub openings: Vec<Opening>,
    /// Plane of the front wall.
    pub front_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseParams {
    pub width: f64,
    pub depth: f64,
    pub wall_height: f64,
    pub ridge_height: f64,
    /// Horizontal shift of all openings, to make distinct variants.
    pub shift: f64,
}

impl Default for HouseParams {
    fn default() -> Self {
        Self {
            width: 10.0,
            depth: 8.0,
            wall_height: 6.0,
            ridge_height: 8.0,
            shift: 0.0,
        }
    }
}

/// A gable-roofed box house. The front wall (z = depth/2) is a conforming grid whose cells
/// include two windows and a door, each a single quad (two triangles) sharing its corners
/// with the surrounding wall cells.
pub fn fixture_house(params: &HouseParams) -> FixtureHouse {
    let hw = params.width / 2.0;
    let hd = params.depth / 2.0;
    let s = params.shift;
    let openings_spec = [
        ("window", [-3.5 + s, -2.3 + s], [2.5, 4.0]),
        ("window", [2.0 + s, 3.4 + s], [2.5, 4.0]),
        ("door", [-0.5 + s, 0.5 + s], [0.0, 2.2]),
    ];
    let mut xs = vec![-hw, hw];
    let mut ys = vec![0.0, params.wall_height];
    for (_, x, y) in &openings_spec {
        xs.extend_from_slice(x);
        ys.extend_from_slice(y);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();

    let mut mesh = TriangleMesh::default();
    let cols = xs.len();
    for &y in &ys {
        for &x in &xs {
            mesh.positions.push(Point3::new(x, y, hd));
        }
    }
    let vid = |i: usize, j: usize| (j * cols + i) as u32;
    let mut openings: Vec<Opening> = openings_spec
        .iter()
        .map(|(label, x, y)| Opening {
            label: (*label).into(),
            x: *x,
            y: *y,
            faces: Vec::new(),
        })
        .collect();
    for j in 0..ys.len() - 1 {
        for i in 0..cols - 1 {
            let first = mesh.indices.len() as u32;
            // Counter-clockwise seen from +Z.
            mesh.indices.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
            mesh.indices.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            let (cx, cy) = ((xs[i] + xs[i + 1]) / 2.0, (ys[j] + ys[j + 1]) / 2.0);
            for o in &mut openings {
                if cx > o.x[0] && cx < o.x[1] && cy > o.y[0] && cy < o.y[1] {
                    o.faces.extend([first, first + 1]);
                }
            }
        }
    }

    // Back and side walls, gables and roof.
    let wh = params.wall_height;
    let rh = params.ridge_height;
    let mut shell = TriangleMesh::default();
    let mut quad = |a: Point3<f64>, b: Point3<f64>, c: Point3<f64>, d: Point3<f64>| {
        let base = shell.positions.len() as u32;
        shell.positions.extend([a, b, c, d]);
        shell.indices.push([base, base + 1, base + 2]);
        shell.indices.push([base, base + 2, base + 3]);
    };
    let p = Point3::new;
    quad(p(hw, 0.0, -hd), p(-hw, 0.0, -hd), p(-hw, wh, -hd), p(hw, wh, -hd));
    quad(p(-hw, 0.0, -hd), p(-hw, 0.0, hd), p(-hw, wh, hd), p(-hw, wh, -hd));
    quad(p(hw, 0.0, hd), p(hw, 0.0, -hd), p(hw, wh, -hd), p(hw, wh, hd));
    quad(p(-hw, wh, hd), p(hw, wh, hd), p(hw, rh, 0.0), p(-hw, rh, 0.0));
    quad(p(hw, wh, -hd), p(-hw, wh, -hd), p(-hw, rh, 0.0), p(hw, rh, 0.0));
    let base = shell.positions.len() as u32;
    shell.positions.extend([
        p(-hw, wh, -hd),
        p(-hw, wh, hd),
        p(-hw, rh, 0.0),
        p(hw, wh, hd),
        p(hw, wh, -hd),
        p(hw, rh, 0.0),
    ]);
    shell.indices.push([base, base + 1, base + 2]);
    shell.indices.push([base + 3, base + 4, base + 5]);
    mesh.append(&shell);

    FixtureHouse {
        mesh,
        openings,
        front_z: hd,
    }
}

/// Pixels where one of `faces` is the nearest surface.
pub fn face_mask(
    mesh: &TriangleMesh,
    camera: &Camera,
    faces: &[u32],
    label: &str,
) -> Result<ComponentMask, crate::geometry::GeometryError> {
    let buffers = render_buffers(mesh, camera)?;
    let bits = buffers
        .face_ids
        .iter()
        .map(|&f| f != NO_FACE && faces.contains(&f))
        .collect();
    Ok(ComponentMask {
        width: camera.width,
        height: camera.height,
        bits,
        label: label.into(),
        prompt: label.into(),
    })
}

/// Writes the house GLB, the front camera JSON, one mask PNG per opening and a
/// `masks.json` file map (prompt → list of mask files) into `dir`.
pub fn write_house_fixture(
    dir: &Path,
    house: &FixtureHouse,
    settings: &ViewSettings,
) -> io::Result<Camera> {
    fs::create_dir_all(dir)?;
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&masks_dir)?;
    fs::write(
        dir.join("house.glb"),
        mesh_to_glb(&house.mesh).map_err(|e| io::Error::other(e.to_string()))?,
    )?;
    let camera = front_camera(&house.mesh, settings).map_err(|e| io::Error::other(e.to_string()))?;
    fs::write(
        dir.join("camera.json"),
        serde_json::to_vec_pretty(&camera).map_err(io::Error::other)?,
    )?;
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    for o in &house.openings {
        let mask = face_mask(&house.mesh, &camera, &o.faces, &o.label)
            .map_err(|e| io::Error::other(e.to_string()))?;
        let n = counters.entry(o.label.clone()).or_default();
        let file = format!("{}_{}.png", o.label, n);
        *n += 1;
        mask.save_png(&masks_dir.join(&file))?;
        map.entry(o.label.clone()).or_default().push(file);
    }
    fs::write(
        masks_dir.join("masks.json"),
        serde_json::to_vec_pretty(&map).map_err(io::Error::other)?,
    )?;
    fs::write(
        dir.join("openings.json"),
        serde_json::to_vec_pretty(&house.openings).map_err(io::Error::other)?,
    )?;
    Ok(camera)
}

/// Writes a `count`-component suite into `dir`, then ingests and indexes it.
pub fn build_suite_catalog(
    dir: &Path,
    count: usize,
    seed: u64,
    params: &crate::retrieval::RetrievalParams,
) -> Result<crate::catalog::Catalog, crate::error::Error> {
    use crate::catalog::{ingest_directory, Catalog, CategoryRule};
    write_suite(dir, &synthetic_suite(count, seed))?;
    let manifest = ingest_directory(dir, &CategoryRule::for_directory(dir)?)?;
    Ok(Catalog::build(manifest, params)?.0)
}

/// Random stroke dropout: clears each ink pixel with probability `ratio`.
pub fn drop_strokes(bits: &mut [bool], ratio: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in bits.iter_mut().filter(|b| **b) {
        if rng.random::<f64>() < ratio {
            *b = false;
        }
    }
}
