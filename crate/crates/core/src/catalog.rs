//! Component catalog: directory ingest with canonicalization, categories from a sidecar,
//! and a single-file archive holding the manifest and the retrieval index.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::{load_glb_mesh, GlbError};
use crate::error::Warning;
use crate::fixtures::SidecarEntry;
use crate::geometry::{fit_obb_points, AffinePlacement, OrientedBoundingBox, ScalingMode};
use crate::mesh::TriangleMesh;
use crate::retrieval::{build_index, ComponentEntry, RetrievalError, RetrievalIndex, RetrievalParams};

const MAGIC: &[u8; 7] = b"CMPCAT1";
pub const CATALOG_VERSION: u32 = 1;
pub const SIDECAR_FILE: &str = "metadata.json";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read directory {0}")]
    DirectoryUnreadable(String),
    #[error("io failure: {0}")]
    Io(String),
    #[error("not a catalog archive: {0}")]
    UnsupportedFormat(String),
    #[error("catalog archive version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("component {0} is not in the catalog")]
    NotFound(u32),
    #[error(transparent)]
    Glb(#[from] GlbError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::DirectoryUnreadable(_) => "DirectoryUnreadable",
            CatalogError::Io(_) => "IoFailure",
            CatalogError::UnsupportedFormat(_) => "UnsupportedFormat",
            CatalogError::UnsupportedVersion(_) => "UnsupportedVersion",
            CatalogError::NotFound(_) => "NotFound",
            CatalogError::Glb(e) => e.code(),
            CatalogError::Retrieval(e) => e.code(),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CatalogError {
    CatalogError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: u32,
    pub name: String,
    pub category: String,
    /// Relative to the manifest's `source_root`, `/`-separated.
    pub file_path: String,
    /// Box of the canonical component: centered at the origin, axes a signed permutation of
    /// the world axes.
    pub canonical_obb: OrientedBoundingBox,
    /// File coordinates to canonical coordinates.
    pub canonical_transform: AffinePlacement,
    pub tags: Vec<String>,
    /// View ids of this component in the retrieval index.
    pub view_descriptors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestError {
    pub path: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogManifest {
    pub records: Vec<ComponentRecord>,
    pub source_root: String,
    pub version: u32,
    pub ingest_errors: Vec<IngestError>,
}

impl CatalogManifest {
    pub fn record(&self, id: u32) -> Option<&ComponentRecord> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn path_of(&self, record: &ComponentRecord) -> PathBuf {
        Path::new(&self.source_root).join(&record.file_path)
    }

    /// Reads the record's GLB and moves it into its canonical frame.
    pub fn load_component(&self, id: u32) -> Result<TriangleMesh, CatalogError> {
        let record = self.record(id).ok_or(CatalogError::NotFound(id))?;
        let path = self.path_of(record);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let mut mesh = load_glb_mesh(&bytes)?;
        mesh.transform(&record.canonical_transform.to_matrix());
        Ok(mesh)
    }
}

/// Maps a file to its category and tags: the sidecar entry when present, else the first
/// matching filename prefix, else `default_category`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRule {
    pub sidecar: BTreeMap<String, SidecarEntry>,
    pub prefixes: Vec<(String, String)>,
    pub default_category: String,
}

impl Default for CategoryRule {
    fn default() -> Self {
        Self {
            sidecar: BTreeMap::new(),
            prefixes: vec![
                ("window".into(), "window".into()),
                ("door".into(), "door".into()),
            ],
            default_category: "uncategorized".into(),
        }
    }
}

impl CategoryRule {
    /// Default prefixes plus `<dir>/metadata.json` if it exists.
    pub fn for_directory(dir: &Path) -> Result<Self, CatalogError> {
        let mut rule = Self::default();
        let sidecar = dir.join(SIDECAR_FILE);
        if sidecar.exists() {
            let bytes = fs::read(&sidecar).map_err(|e| io_err(&sidecar, e))?;
            rule.sidecar = serde_json::from_slice(&bytes)
                .map_err(|e| CatalogError::Io(format!("{}: {e}", sidecar.display())))?;
        }
        Ok(rule)
    }

    pub fn classify(&self, relative_path: &str) -> (String, Vec<String>) {
        if let Some(entry) = self.sidecar.get(relative_path) {
            return (entry.category.clone(), entry.tags.clone());
        }
        let file = relative_path.rsplit('/').next().unwrap_or(relative_path).to_lowercase();
        for (prefix, category) in &self.prefixes {
            if file.starts_with(prefix.as_str()) {
                return (category.clone(), Vec::new());
            }
        }
        (self.default_category.clone(), Vec::new())
    }
}

/// Rotation (a proper signed permutation of its OBB axes) and recentering that puts the
/// component at the origin while staying as close as possible to its file orientation.
pub fn canonicalize(mesh: &TriangleMesh) -> Option<(TriangleMesh, AffinePlacement, OrientedBoundingBox)> {
    let obb = fit_obb_points(&mesh.positions).ok()?;
    let a = obb.axes;
    let mut best: Option<(f64, Matrix3<f64>)> = None;
    for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        for signs in 0..8u32 {
            let mut p = Matrix3::zeros();
            for (i, &row) in perm.iter().enumerate() {
                p[(row, i)] = if (signs >> i) & 1 == 1 { -1.0 } else { 1.0 };
            }
            if p.determinant() < 0.0 {
                continue;
            }
            let score = (p * a.transpose()).trace();
            if best.is_none_or(|(s, _)| score > s + 1e-12) {
                best = Some((score, p));
            }
        }
    }
    let p = best?.1;
    let q = p * a.transpose();
    let placement = AffinePlacement {
        linear: q,
        translation: -(q * obb.center.coords),
        scaling_mode: ScalingMode::Uniform,
    };
    let mut canonical = mesh.clone();
    canonical.transform(&placement.to_matrix());
    let canonical_obb = OrientedBoundingBox {
        center: Point3::origin(),
        axes: p,
        half_extents: obb.half_extents,
    };
    Some((canonical, placement, canonical_obb))
}

fn collect_glb(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_glb(root, &path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("glb"))
        {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let parts: Vec<String> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

/// Parses, flattens and canonicalizes every `.glb` under `dir`. Ids follow lexicographic
/// relative-path order over the files that ingest cleanly; failures land in
/// `ingest_errors`.
pub fn ingest_directory(dir: &Path, rule: &CategoryRule) -> Result<CatalogManifest, CatalogError> {
    let root = fs::canonicalize(dir).map_err(|_| CatalogError::DirectoryUnreadable(dir.display().to_string()))?;
    let mut files = Vec::new();
    collect_glb(&root, &root, &mut files)
        .map_err(|_| CatalogError::DirectoryUnreadable(dir.display().to_string()))?;
    files.sort();

    type Ingested = Result<(AffinePlacement, OrientedBoundingBox), String>;
    let results: Vec<Ingested> = files
        .par_iter()
        .map(|rel| {
            let bytes = fs::read(root.join(rel)).map_err(|_| "IoFailure".to_owned())?;
            let mesh = load_glb_mesh(&bytes).map_err(|e| e.code().to_owned())?;
            if mesh.is_empty() {
                return Err("EmptyMesh".into());
            }
            let (_, placement, obb) = canonicalize(&mesh).ok_or_else(|| "EmptyMesh".to_owned())?;
            Ok((placement, obb))
        })
        .collect();

    let mut records = Vec::new();
    let mut ingest_errors = Vec::new();
    for (rel, res) in files.iter().zip(results) {
        match res {
            Ok((placement, obb)) => {
                let (category, tags) = rule.classify(rel);
                let name = rel
                    .rsplit('/')
                    .next()
                    .unwrap_or(rel)
                    .trim_end_matches(".glb")
                    .trim_end_matches(".GLB")
                    .to_owned();
                records.push(ComponentRecord {
                    id: records.len() as u32,
                    name,
                    category,
                    file_path: rel.clone(),
                    canonical_obb: obb,
                    canonical_transform: placement,
                    tags,
                    view_descriptors: Vec::new(),
                });
            }
            Err(code) => ingest_errors.push(IngestError {
                path: rel.clone(),
                code,
            }),
        }
    }
    Ok(CatalogManifest {
        records,
        source_root: root.to_string_lossy().into_owned(),
        version: CATALOG_VERSION,
        ingest_errors,
    })
}

/// Manifest plus retrieval index.
#[derive(Debug)]
pub struct Catalog {
    pub manifest: CatalogManifest,
    pub index: RetrievalIndex,
}

impl Catalog {
    /// Indexes every record's canonical mesh and fills in its view ids. Records whose file
    /// can no longer be read are skipped with a warning.
    pub fn build(mut manifest: CatalogManifest, params: &RetrievalParams) -> Result<(Self, Vec<Warning>), CatalogError> {
        let loaded: Vec<Result<TriangleMesh, CatalogError>> = manifest
            .records
            .par_iter()
            .map(|r| manifest.load_component(r.id))
            .collect();
        let mut warnings = Vec::new();
        let mut entries = Vec::new();
        for (record, mesh) in manifest.records.iter().zip(&loaded) {
            match mesh {
                Ok(mesh) => entries.push(ComponentEntry {
                    id: record.id,
                    name: &record.name,
                    category: &record.category,
                    mesh,
                }),
                Err(e) => warnings.push(Warning::new(e.code(), format!("{}: {e}", record.file_path))),
            }
        }
        let (index, index_warnings) = build_index(&entries, params)?;
        warnings.extend(index_warnings);
        for record in &mut manifest.records {
            record.view_descriptors = index
                .component(record.id)
                .map(|c| (0..c.view_count).collect())
                .unwrap_or_default();
        }
        Ok((Self { manifest, index }, warnings))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let index = self.index.to_bytes();
        let mut out = Vec::with_capacity(manifest.len() + index.len() + 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CATALOG_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        out
    }

    /// Parses an archive; each record whose GLB is missing yields a `DanglingReference`
    /// warning.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Vec<Warning>), CatalogError> {
        let bad = |m: &str| CatalogError::UnsupportedFormat(m.to_owned());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("missing CMPCAT1 magic"));
        }
        let mut pos = MAGIC.len();
        let version = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        pos += 4;
        if version != CATALOG_VERSION {
            return Err(CatalogError::UnsupportedVersion(version));
        }
        let mut section = |what: &str| -> Result<&[u8], CatalogError> {
            let len_bytes = bytes.get(pos..pos + 8).ok_or_else(|| bad(what))?;
            let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 8;
            let body = bytes.get(pos..pos.saturating_add(len)).ok_or_else(|| bad(what))?;
            pos += len;
            Ok(body)
        };
        let manifest_bytes = section("truncated manifest")?;
        let index_bytes = section("truncated index")?;
        let manifest: CatalogManifest =
            serde_json::from_slice(manifest_bytes).map_err(|e| bad(&format!("manifest: {e}")))?;
        let index = RetrievalIndex::from_bytes(index_bytes)?;
        let warnings = manifest
            .records
            .iter()
            .filter(|r| !manifest.path_of(r).exists())
            .map(|r| {
                Warning::new(
                    "DanglingReference",
                    format!("component {} refers to missing {}", r.id, r.file_path),
                )
            })
            .collect();
        Ok((Self { manifest, index }, warnings))
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<Warning>), CatalogError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Full side lengths of `obb` along the world axes; exact for canonical boxes.
pub fn world_extents(obb: &OrientedBoundingBox) -> Vector3<f64> {
    (obb.axes.abs() * obb.half_extents).map(|x| x * 2.0)
}
