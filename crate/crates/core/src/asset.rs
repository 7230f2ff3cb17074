//! Binary glTF 2.0 (GLB) container reader/writer and the in-memory scene model.
//!
//! Only the geometry subset the engine needs is interpreted: triangle primitives with
//! float32 `POSITION`/`NORMAL`/`TEXCOORD_0` and u8/u16/u32 indices. Materials, textures,
//! images and samplers are carried through verbatim so exported models stay viewable.

use std::collections::{BTreeMap, HashMap};

use base64::Engine;
use nalgebra::{Matrix4, Point3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::mesh::{TriangleMesh, NO_MATERIAL};

pub const GLB_MAGIC: u32 = 0x4654_6C67;
const GLB_VERSION: u32 = 2;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;

const COMPONENT_U8: u64 = 5121;
const COMPONENT_U16: u64 = 5123;
const COMPONENT_U32: u64 = 5125;
const COMPONENT_F32: u64 = 5126;

const TARGET_ARRAY_BUFFER: u32 = 34962;
const TARGET_ELEMENT_ARRAY_BUFFER: u32 = 34963;

/// Top-level keys preserved untouched across a read/write cycle.
const OPAQUE_KEYS: &[&str] = &[
    "materials",
    "textures",
    "images",
    "samplers",
    "extensionsUsed",
    "extensions",
    "extras",
];

const UNSUPPORTED_EXTENSIONS: &[&str] = &[
    "KHR_draco_mesh_compression",
    "EXT_meshopt_compression",
    "KHR_meshopt_compression",
    "KHR_mesh_quantization",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GlbError {
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("serialization overflow: {0}")]
    SerializationOverflow(String),
}

impl GlbError {
    pub fn code(&self) -> &'static str {
        match self {
            GlbError::MalformedContainer(_) => "MalformedContainer",
            GlbError::UnsupportedFeature(_) => "UnsupportedFeature",
            GlbError::SerializationOverflow(_) => "SerializationOverflow",
        }
    }
}

fn malformed(msg: impl Into<String>) -> GlbError {
    GlbError::MalformedContainer(msg.into())
}

fn unsupported(msg: impl Into<String>) -> GlbError {
    GlbError::UnsupportedFeature(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedMesh {
    pub name: String,
    pub mesh: TriangleMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneNode {
    pub name: Option<String>,
    pub transform: Matrix4<f64>,
    pub mesh: Option<usize>,
    pub children: Vec<usize>,
}

impl SceneNode {
    pub fn with_mesh(mesh: usize) -> Self {
        Self {
            name: None,
            transform: Matrix4::identity(),
            mesh: Some(mesh),
            children: Vec::new(),
        }
    }
}

/// Non-geometry content preserved opaquely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpaqueData {
    /// Top-level JSON members such as `materials` and `textures`.
    pub json: BTreeMap<String, Value>,
    /// Embedded binary payloads keyed by id (`image/<n>` for buffer-view images).
    pub blobs: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneAsset {
    pub meshes: Vec<NamedMesh>,
    pub nodes: Vec<SceneNode>,
    pub roots: Vec<usize>,
    pub opaque: OpaqueData,
}

impl SceneAsset {
    /// A scene holding one mesh under one identity root node.
    pub fn from_mesh(name: impl Into<String>, mesh: TriangleMesh) -> Self {
        Self {
            meshes: vec![NamedMesh {
                name: name.into(),
                mesh,
            }],
            nodes: vec![SceneNode::with_mesh(0)],
            roots: vec![0],
            opaque: OpaqueData::default(),
        }
    }

    /// Checks node/mesh references and that the node graph is a forest.
    pub fn check_structure(&self) -> Result<(), GlbError> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(m) = node.mesh {
                if m >= self.meshes.len() {
                    return Err(malformed(format!("node {i} references missing mesh {m}")));
                }
            }
            if let Some(&c) = node.children.iter().find(|&&c| c >= self.nodes.len()) {
                return Err(malformed(format!("node {i} references missing child {c}")));
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = Vec::new();
        for &r in &self.roots {
            if r >= self.nodes.len() {
                return Err(malformed(format!("root {r} out of range")));
            }
            stack.push(r);
        }
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                return Err(malformed(format!("node {n} reachable twice (cycle or shared child)")));
            }
            stack.extend(self.nodes[n].children.iter().copied());
        }
        Ok(())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses a GLB container.
pub fn parse_glb(bytes: &[u8]) -> Result<SceneAsset, GlbError> {
    if bytes.len() < 12 {
        return Err(malformed(format!(
            "header needs 12 bytes, got {}",
            bytes.len()
        )));
    }
    if read_u32(bytes, 0) != GLB_MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = read_u32(bytes, 4);
    if version != GLB_VERSION {
        return Err(malformed(format!("container version {version}")));
    }
    let declared = read_u32(bytes, 8) as usize;
    if declared != bytes.len() {
        return Err(malformed(format!(
            "declared length {declared} but {} bytes present",
            bytes.len()
        )));
    }

    let mut offset = 12;
    let mut json_chunk: Option<&[u8]> = None;
    let mut bin_chunk: Option<&[u8]> = None;
    let mut first = true;
    while offset < bytes.len() {
        if bytes.len() - offset < 8 {
            return Err(malformed("truncated chunk header"));
        }
        let len = read_u32(bytes, offset) as usize;
        let kind = read_u32(bytes, offset + 4);
        let start = offset + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed("chunk exceeds container"))?;
        let data = &bytes[start..end];
        match kind {
            CHUNK_JSON if first => json_chunk = Some(data),
            CHUNK_JSON => return Err(malformed("duplicate JSON chunk")),
            _ if first => return Err(malformed("first chunk must be JSON")),
            CHUNK_BIN if bin_chunk.is_none() => bin_chunk = Some(data),
            CHUNK_BIN => return Err(malformed("duplicate BIN chunk")),
            _ => {}
        }
        first = false;
        offset = end;
    }
    let json_bytes = json_chunk.ok_or_else(|| malformed("missing JSON chunk"))?;
    let doc: Value = serde_json::from_slice(json_bytes)
        .map_err(|e| malformed(format!("JSON chunk: {e}")))?;
    let doc = doc
        .as_object()
        .ok_or_else(|| malformed("JSON root is not an object"))?;
    Document::new(doc, bin_chunk)?.into_scene()
}

struct Document<'a> {
    root: &'a Map<String, Value>,
    buffers: Vec<std::borrow::Cow<'a, [u8]>>,
}

struct AccessorView<'a> {
    data: &'a [u8],
    count: usize,
    stride: usize,
    component_type: u64,
    components: usize,
}

fn array<'a>(root: &'a Map<String, Value>, key: &str) -> Result<&'a [Value], GlbError> {
    match root.get(key) {
        None => Ok(&[]),
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(malformed(format!("`{key}` is not an array"))),
    }
}

fn get_index(v: &Value, key: &str) -> Result<Option<usize>, GlbError> {
    match v.get(key) {
        None => Ok(None),
        Some(x) => x
            .as_u64()
            .and_then(|u| usize::try_from(u).ok())
            .map(Some)
            .ok_or_else(|| malformed(format!("`{key}` is not an index"))),
    }
}

fn require_index(v: &Value, key: &str) -> Result<usize, GlbError> {
    get_index(v, key)?.ok_or_else(|| malformed(format!("missing `{key}`")))
}

fn get_floats<const N: usize>(v: &Value, key: &str) -> Result<Option<[f64; N]>, GlbError> {
    let Some(x) = v.get(key) else { return Ok(None) };
    let items = x
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| malformed(format!("`{key}` must hold {N} numbers")))?;
    let mut out = [0.0; N];
    for (o, item) in out.iter_mut().zip(items) {
        *o = item
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| malformed(format!("`{key}` holds a non-number")))?;
    }
    Ok(Some(out))
}

impl<'a> Document<'a> {
    fn new(root: &'a Map<String, Value>, bin: Option<&'a [u8]>) -> Result<Self, GlbError> {
        for key in ["extensionsRequired", "extensionsUsed"] {
            for ext in array(root, key)? {
                if let Some(name) = ext.as_str() {
                    if UNSUPPORTED_EXTENSIONS.contains(&name) {
                        return Err(unsupported(format!("extension {name}")));
                    }
                }
            }
        }
        let mut buffers = Vec::new();
        for (i, buffer) in array(root, "buffers")?.iter().enumerate() {
            let len = require_index(buffer, "byteLength")?;
            let data: std::borrow::Cow<'a, [u8]> = match buffer.get("uri").and_then(Value::as_str) {
                None => {
                    let bin = bin.ok_or_else(|| malformed(format!("buffer {i} needs BIN chunk")))?;
                    if i != 0 {
                        return Err(malformed(format!("buffer {i} has no uri")));
                    }
                    if len > bin.len() {
                        return Err(malformed("buffer larger than BIN chunk"));
                    }
                    std::borrow::Cow::Borrowed(&bin[..len])
                }
                Some(uri) if uri.starts_with("data:") => {
                    let payload = uri
                        .split_once(";base64,")
                        .map(|(_, p)| p)
                        .ok_or_else(|| unsupported("non-base64 data uri"))?;
                    if payload.len() / 4 * 3 > len + 3 {
                        return Err(malformed("data uri longer than byteLength"));
                    }
                    let decoded = base64::engine::general_purpose::STANDARD
                        .decode(payload)
                        .map_err(|e| malformed(format!("data uri: {e}")))?;
                    if decoded.len() < len {
                        return Err(malformed("data uri shorter than byteLength"));
                    }
                    let mut decoded = decoded;
                    decoded.truncate(len);
                    std::borrow::Cow::Owned(decoded)
                }
                Some(uri) => return Err(unsupported(format!("external buffer uri {uri}"))),
            };
            buffers.push(data);
        }
        Ok(Self { root, buffers })
    }

    fn buffer_view(&self, index: usize) -> Result<(&[u8], Option<usize>), GlbError> {
        let view = array(self.root, "bufferViews")?
            .get(index)
            .ok_or_else(|| malformed(format!("bufferView {index} missing")))?;
        let buffer = require_index(view, "buffer")?;
        let offset = get_index(view, "byteOffset")?.unwrap_or(0);
        let len = require_index(view, "byteLength")?;
        let stride = get_index(view, "byteStride")?;
        let data = self
            .buffers
            .get(buffer)
            .ok_or_else(|| malformed(format!("buffer {buffer} missing")))?;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| malformed(format!("bufferView {index} exceeds buffer")))?;
        Ok((&data[offset..end], stride))
    }

    fn accessor(&self, index: usize) -> Result<AccessorView<'_>, GlbError> {
        let acc = array(self.root, "accessors")?
            .get(index)
            .ok_or_else(|| malformed(format!("accessor {index} missing")))?;
        if acc.get("sparse").is_some() {
            return Err(unsupported("sparse accessor"));
        }
        let view = get_index(acc, "bufferView")?
            .ok_or_else(|| unsupported("accessor without bufferView"))?;
        let component_type = acc
            .get("componentType")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("accessor componentType"))?;
        let count = require_index(acc, "count")?;
        let offset = get_index(acc, "byteOffset")?.unwrap_or(0);
        let components = match acc.get("type").and_then(Value::as_str) {
            Some("SCALAR") => 1,
            Some("VEC2") => 2,
            Some("VEC3") => 3,
            Some("VEC4") => 4,
            Some(other) => return Err(unsupported(format!("accessor type {other}"))),
            None => return Err(malformed("accessor type")),
        };
        let component_size = match component_type {
            COMPONENT_U8 | 5120 => 1,
            COMPONENT_U16 | 5122 => 2,
            COMPONENT_U32 | COMPONENT_F32 => 4,
            other => return Err(malformed(format!("componentType {other}"))),
        };
        let element = component_size * components;
        let (data, stride) = self.buffer_view(view)?;
        let stride = stride.unwrap_or(element);
        if stride < element {
            return Err(malformed("byteStride smaller than element"));
        }
        let needed = if count == 0 {
            0
        } else {
            (count - 1)
                .checked_mul(stride)
                .and_then(|s| s.checked_add(element))
                .and_then(|s| s.checked_add(offset))
                .ok_or_else(|| malformed("accessor size overflow"))?
        };
        if needed > data.len() {
            return Err(malformed(format!("accessor {index} exceeds its bufferView")));
        }
        let data = data.get(offset.min(data.len())..).unwrap_or(&[]);
        Ok(AccessorView {
            data,
            count,
            stride,
            component_type,
            components,
        })
    }

    fn read_floats<const N: usize>(&self, index: usize) -> Result<Vec<[f32; N]>, GlbError> {
        let acc = self.accessor(index)?;
        if acc.component_type != COMPONENT_F32 {
            return Err(unsupported(format!(
                "non-float vertex attribute (componentType {})",
                acc.component_type
            )));
        }
        if acc.components != N {
            return Err(malformed(format!("expected {N}-component accessor")));
        }
        let mut out = Vec::with_capacity(acc.count);
        for i in 0..acc.count {
            let base = i * acc.stride;
            let mut item = [0f32; N];
            for (c, v) in item.iter_mut().enumerate() {
                let at = base + 4 * c;
                *v = f32::from_le_bytes(acc.data[at..at + 4].try_into().expect("4 bytes"));
            }
            out.push(item);
        }
        Ok(out)
    }

    fn read_indices(&self, index: usize) -> Result<Vec<u32>, GlbError> {
        let acc = self.accessor(index)?;
        if acc.components != 1 {
            return Err(malformed("index accessor must be SCALAR"));
        }
        let mut out = Vec::with_capacity(acc.count);
        for i in 0..acc.count {
            let at = i * acc.stride;
            let v = match acc.component_type {
                COMPONENT_U8 => acc.data[at] as u32,
                COMPONENT_U16 => u16::from_le_bytes([acc.data[at], acc.data[at + 1]]) as u32,
                COMPONENT_U32 => read_u32(acc.data, at),
                other => return Err(malformed(format!("index componentType {other}"))),
            };
            out.push(v);
        }
        Ok(out)
    }

    fn read_mesh(&self, mesh: &Value, index: usize) -> Result<NamedMesh, GlbError> {
        let name = mesh
            .get("name")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("mesh_{index}"));
        let primitives = mesh
            .get("primitives")
            .map(|p| p.as_array().ok_or_else(|| malformed("primitives")))
            .transpose()?
            .map(Vec::as_slice)
            .unwrap_or(&[]);

        let mut out = TriangleMesh::default();
        let mut normals: Vec<nalgebra::Vector3<f64>> = Vec::new();
        let mut uvs: Vec<Vector2<f64>> = Vec::new();
        let mut all_normals = true;
        let mut all_uvs = true;
        let mut any_material = false;
        let mut slots = Vec::new();
        // Primitives sharing attribute accessors share vertices.
        let mut vertex_bases: HashMap<(usize, Option<usize>, Option<usize>), (u32, usize)> =
            HashMap::new();

        for prim in primitives {
            if prim
                .get("extensions")
                .and_then(Value::as_object)
                .is_some_and(|e| UNSUPPORTED_EXTENSIONS.iter().any(|k| e.contains_key(*k)))
            {
                return Err(unsupported("compressed primitive"));
            }
            let mode = prim.get("mode").map(|m| m.as_u64()).unwrap_or(Some(4));
            if mode != Some(4) {
                return Err(unsupported(format!("primitive mode {mode:?}")));
            }
            if prim.get("targets").is_some() {
                return Err(unsupported("morph targets"));
            }
            let attrs = prim
                .get("attributes")
                .ok_or_else(|| malformed("primitive without attributes"))?;
            let pos_acc = require_index(attrs, "POSITION")?;
            let nrm_acc = get_index(attrs, "NORMAL")?;
            let uv_acc = get_index(attrs, "TEXCOORD_0")?;
            let key = (pos_acc, nrm_acc, uv_acc);

            let (base, vcount) = match vertex_bases.get(&key) {
                Some(&b) => b,
                None => {
                    let positions = self.read_floats::<3>(pos_acc)?;
                    let base = u32::try_from(out.positions.len())
                        .map_err(|_| malformed("too many vertices"))?;
                    let vcount = positions.len();
                    out.positions.extend(
                        positions
                            .iter()
                            .map(|p| Point3::new(p[0] as f64, p[1] as f64, p[2] as f64)),
                    );
                    match nrm_acc {
                        Some(a) => {
                            let n = self.read_floats::<3>(a)?;
                            if n.len() != vcount {
                                return Err(malformed("NORMAL count differs from POSITION"));
                            }
                            normals.extend(
                                n.iter()
                                    .map(|v| Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)),
                            );
                        }
                        None => all_normals = false,
                    }
                    match uv_acc {
                        Some(a) => {
                            let t = self.read_floats::<2>(a)?;
                            if t.len() != vcount {
                                return Err(malformed("TEXCOORD_0 count differs from POSITION"));
                            }
                            uvs.extend(t.iter().map(|v| Vector2::new(v[0] as f64, v[1] as f64)));
                        }
                        None => all_uvs = false,
                    }
                    vertex_bases.insert(key, (base, vcount));
                    (base, vcount)
                }
            };

            let local: Vec<u32> = match get_index(prim, "indices")? {
                Some(a) => self.read_indices(a)?,
                None => (0..vcount as u32).collect(),
            };
            if local.len() % 3 != 0 {
                return Err(malformed("index count not a multiple of 3"));
            }
            if let Some(bad) = local.iter().find(|&&i| i as usize >= vcount) {
                return Err(malformed(format!("index {bad} out of range for {vcount} vertices")));
            }
            let material = get_index(prim, "material")?;
            any_material |= material.is_some();
            let slot = material.map(|m| m as u32).unwrap_or(NO_MATERIAL);
            for tri in local.chunks_exact(3) {
                out.indices.push([tri[0] + base, tri[1] + base, tri[2] + base]);
                slots.push(slot);
            }
        }

        if all_normals && !out.positions.is_empty() {
            out.normals = Some(normals);
        }
        if all_uvs && !out.positions.is_empty() {
            out.uvs = Some(uvs);
        }
        if any_material {
            out.material_slots = Some(slots);
        }
        Ok(NamedMesh { name, mesh: out })
    }

    fn read_node(&self, node: &Value) -> Result<SceneNode, GlbError> {
        let transform = if let Some(m) = get_floats::<16>(node, "matrix")? {
            Matrix4::from_column_slice(&m)
        } else {
            let t = get_floats::<3>(node, "translation")?.unwrap_or([0.0; 3]);
            let r = get_floats::<4>(node, "rotation")?.unwrap_or([0.0, 0.0, 0.0, 1.0]);
            let s = get_floats::<3>(node, "scale")?.unwrap_or([1.0; 3]);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(r[3], r[0], r[1], r[2]));
            Matrix4::new_translation(&Vector3::from(t))
                * q.to_homogeneous()
                * Matrix4::new_nonuniform_scaling(&Vector3::from(s))
        };
        let children = match node.get("children") {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|c| {
                    c.as_u64()
                        .map(|u| u as usize)
                        .ok_or_else(|| malformed("child index"))
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(malformed("children")),
        };
        if node.get("skin").is_some() {
            log::warn!("node skin ignored");
        }
        Ok(SceneNode {
            name: node.get("name").and_then(Value::as_str).map(str::to_owned),
            transform,
            mesh: get_index(node, "mesh")?,
            children,
        })
    }

    fn into_scene(self) -> Result<SceneAsset, GlbError> {
        let meshes = array(self.root, "meshes")?
            .iter()
            .enumerate()
            .map(|(i, m)| self.read_mesh(m, i))
            .collect::<Result<Vec<_>, _>>()?;
        let nodes = array(self.root, "nodes")?
            .iter()
            .map(|n| self.read_node(n))
            .collect::<Result<Vec<_>, _>>()?;

        let scenes = array(self.root, "scenes")?;
        let roots = if scenes.is_empty() {
            let mut is_child = vec![false; nodes.len()];
            for n in &nodes {
                for &c in &n.children {
                    if let Some(flag) = is_child.get_mut(c) {
                        *flag = true;
                    }
                }
            }
            (0..nodes.len()).filter(|&i| !is_child[i]).collect()
        } else {
            let active = match self.root.get("scene") {
                None => 0,
                Some(v) => v
                    .as_u64()
                    .map(|u| u as usize)
                    .ok_or_else(|| malformed("`scene` is not an index"))?,
            };
            let scene = scenes
                .get(active)
                .ok_or_else(|| malformed(format!("scene {active} missing")))?;
            match scene.get("nodes") {
                None => Vec::new(),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|c| {
                        c.as_u64()
                            .map(|u| u as usize)
                            .ok_or_else(|| malformed("scene node index"))
                    })
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(malformed("scene nodes")),
            }
        };

        let mut opaque = OpaqueData::default();
        for key in OPAQUE_KEYS {
            if let Some(v) = self.root.get(*key) {
                opaque.json.insert((*key).to_owned(), v.clone());
            }
        }
        if let Some(Value::Array(images)) = opaque.json.get_mut("images") {
            for (i, image) in images.iter_mut().enumerate() {
                if let Some(view) = get_index(image, "bufferView")? {
                    let (data, _) = self.buffer_view(view)?;
                    opaque.blobs.insert(format!("image/{i}"), data.to_vec());
                    if let Some(obj) = image.as_object_mut() {
                        obj.remove("bufferView");
                    }
                }
            }
        }
        for key in ["animations", "skins", "cameras"] {
            if self.root.contains_key(key) {
                log::warn!("dropping unsupported `{key}`");
            }
        }

        let scene = SceneAsset {
            meshes,
            nodes,
            roots,
            opaque,
        };
        scene.check_structure()?;
        Ok(scene)
    }
}

#[derive(Default)]
struct BinWriter {
    bin: Vec<u8>,
    views: Vec<Value>,
    accessors: Vec<Value>,
}

impl BinWriter {
    fn push_view(&mut self, bytes: &[u8], target: Option<u32>) -> usize {
        while self.bin.len() % 4 != 0 {
            self.bin.push(0);
        }
        let mut view = json!({
            "buffer": 0,
            "byteOffset": self.bin.len(),
            "byteLength": bytes.len(),
        });
        if let Some(t) = target {
            view["target"] = json!(t);
        }
        self.bin.extend_from_slice(bytes);
        self.views.push(view);
        self.views.len() - 1
    }

    fn push_accessor(&mut self, accessor: Value) -> usize {
        self.accessors.push(accessor);
        self.accessors.len() - 1
    }

    fn floats<const N: usize>(&mut self, items: impl Iterator<Item = [f32; N]>, with_bounds: bool) -> usize {
        let mut bytes = Vec::new();
        let mut min = [f32::INFINITY; N];
        let mut max = [f32::NEG_INFINITY; N];
        let mut count = 0usize;
        for item in items {
            for (c, v) in item.iter().enumerate() {
                bytes.extend_from_slice(&v.to_le_bytes());
                min[c] = min[c].min(*v);
                max[c] = max[c].max(*v);
            }
            count += 1;
        }
        let view = self.push_view(&bytes, Some(TARGET_ARRAY_BUFFER));
        let mut acc = json!({
            "bufferView": view,
            "componentType": COMPONENT_F32,
            "count": count,
            "type": if N == 2 { "VEC2" } else { "VEC3" },
        });
        if with_bounds && count > 0 {
            acc["min"] = json!(min.iter().map(|&v| v as f64).collect::<Vec<_>>());
            acc["max"] = json!(max.iter().map(|&v| v as f64).collect::<Vec<_>>());
        }
        self.push_accessor(acc)
    }

    fn indices(&mut self, tris: &[[u32; 3]], vertex_count: usize) -> usize {
        let wide = vertex_count > u16::MAX as usize;
        let mut bytes = Vec::with_capacity(tris.len() * 3 * if wide { 4 } else { 2 });
        for tri in tris {
            for &i in tri {
                if wide {
                    bytes.extend_from_slice(&i.to_le_bytes());
                } else {
                    bytes.extend_from_slice(&(i as u16).to_le_bytes());
                }
            }
        }
        let view = self.push_view(&bytes, Some(TARGET_ELEMENT_ARRAY_BUFFER));
        self.push_accessor(json!({
            "bufferView": view,
            "componentType": if wide { COMPONENT_U32 } else { COMPONENT_U16 },
            "count": tris.len() * 3,
            "type": "SCALAR",
        }))
    }
}

fn mesh_json(w: &mut BinWriter, named: &NamedMesh) -> Value {
    let mesh = &named.mesh;
    let mut attributes = Map::new();
    if !mesh.positions.is_empty() {
        let pos = w.floats(
            mesh.positions
                .iter()
                .map(|p| [p.x as f32, p.y as f32, p.z as f32]),
            true,
        );
        attributes.insert("POSITION".into(), json!(pos));
        if let Some(normals) = &mesh.normals {
            let acc = w.floats(normals.iter().map(|n| [n.x as f32, n.y as f32, n.z as f32]), false);
            attributes.insert("NORMAL".into(), json!(acc));
        }
        if let Some(uvs) = &mesh.uvs {
            let acc = w.floats(uvs.iter().map(|t| [t.x as f32, t.y as f32]), false);
            attributes.insert("TEXCOORD_0".into(), json!(acc));
        }
    }

    // One primitive per contiguous run of equal material slot, all sharing the vertex
    // accessors.
    let mut primitives = Vec::new();
    let mut start = 0;
    while start < mesh.indices.len() {
        let slot = mesh
            .material_slots
            .as_ref()
            .map(|s| s[start])
            .unwrap_or(NO_MATERIAL);
        let mut end = start + 1;
        while end < mesh.indices.len()
            && mesh
                .material_slots
                .as_ref()
                .map(|s| s[end])
                .unwrap_or(NO_MATERIAL)
                == slot
        {
            end += 1;
        }
        let idx = w.indices(&mesh.indices[start..end], mesh.positions.len());
        let mut prim = json!({
            "attributes": Value::Object(attributes.clone()),
            "indices": idx,
            "mode": 4,
        });
        if slot != NO_MATERIAL {
            prim["material"] = json!(slot);
        }
        primitives.push(prim);
        start = end;
    }
    json!({ "name": named.name, "primitives": primitives })
}

fn is_identity(m: &Matrix4<f64>) -> bool {
    *m == Matrix4::identity()
}

/// Serializes a scene into a GLB container.
pub fn write_glb(scene: &SceneAsset) -> Result<Vec<u8>, GlbError> {
    let mut w = BinWriter::default();

    let meshes: Vec<Value> = scene.meshes.iter().map(|m| mesh_json(&mut w, m)).collect();
    let nodes: Vec<Value> = scene
        .nodes
        .iter()
        .map(|n| {
            let mut v = Map::new();
            if let Some(name) = &n.name {
                v.insert("name".into(), json!(name));
            }
            if !is_identity(&n.transform) {
                v.insert("matrix".into(), json!(n.transform.as_slice()));
            }
            if let Some(m) = n.mesh {
                v.insert("mesh".into(), json!(m));
            }
            if !n.children.is_empty() {
                v.insert("children".into(), json!(n.children));
            }
            Value::Object(v)
        })
        .collect();

    let mut root = Map::new();
    root.insert(
        "asset".into(),
        json!({ "version": "2.0", "generator": concat!("casement ", env!("CARGO_PKG_VERSION")) }),
    );
    for (key, value) in &scene.opaque.json {
        root.insert(key.clone(), value.clone());
    }
    if let Some(Value::Array(images)) = root.get_mut("images") {
        for (i, image) in images.iter_mut().enumerate() {
            if let Some(blob) = scene.opaque.blobs.get(&format!("image/{i}")) {
                let view = w.push_view(blob, None);
                image["bufferView"] = json!(view);
            }
        }
    }
    root.insert("scene".into(), json!(0));
    root.insert("scenes".into(), json!([{ "nodes": scene.roots }]));
    if !nodes.is_empty() {
        root.insert("nodes".into(), Value::Array(nodes));
    }
    if !meshes.is_empty() {
        root.insert("meshes".into(), Value::Array(meshes));
    }
    if !w.accessors.is_empty() {
        root.insert("accessors".into(), Value::Array(std::mem::take(&mut w.accessors)));
    }
    if !w.views.is_empty() {
        root.insert("bufferViews".into(), Value::Array(std::mem::take(&mut w.views)));
        root.insert("buffers".into(), json!([{ "byteLength": w.bin.len() }]));
    }

    let mut json_bytes =
        serde_json::to_vec(&Value::Object(root)).expect("serializing a JSON value");
    while json_bytes.len() % 4 != 0 {
        json_bytes.push(b' ');
    }
    let mut bin = w.bin;
    while bin.len() % 4 != 0 {
        bin.push(0);
    }

    let has_bin = !bin.is_empty();
    let total = 12u64
        + 8
        + json_bytes.len() as u64
        + if has_bin { 8 + bin.len() as u64 } else { 0 };
    let total = u32::try_from(total)
        .map_err(|_| GlbError::SerializationOverflow(format!("container of {total} bytes")))?;

    let mut out = Vec::with_capacity(total as usize);
    out.extend_from_slice(&GLB_MAGIC.to_le_bytes());
    out.extend_from_slice(&GLB_VERSION.to_le_bytes());
    out.extend_from_slice(&total.to_le_bytes());
    out.extend_from_slice(&(json_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_JSON.to_le_bytes());
    out.extend_from_slice(&json_bytes);
    if has_bin {
        out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
        out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
        out.extend_from_slice(&bin);
    }
    Ok(out)
}

/// Bakes every node transform into one mesh. Meshes instanced by several nodes are
/// duplicated. A scene without nodes contributes each mesh once, untransformed.
pub fn flatten_scene(scene: &SceneAsset) -> TriangleMesh {
    let mut out = TriangleMesh::default();
    if scene.nodes.is_empty() {
        for m in &scene.meshes {
            out.append(&m.mesh);
        }
        return out;
    }
    let mut stack: Vec<(usize, Matrix4<f64>)> = scene
        .roots
        .iter()
        .rev()
        .map(|&r| (r, Matrix4::identity()))
        .collect();
    let mut visited = vec![false; scene.nodes.len()];
    while let Some((index, parent)) = stack.pop() {
        let Some(node) = scene.nodes.get(index) else { continue };
        if std::mem::replace(&mut visited[index], true) {
            continue;
        }
        let world = parent * node.transform;
        if let Some(mesh) = node.mesh.and_then(|m| scene.meshes.get(m)) {
            let mut copy = mesh.mesh.clone();
            copy.transform(&world);
            out.append(&copy);
        }
        for &child in node.children.iter().rev() {
            stack.push((child, world));
        }
    }
    out
}

/// Reads and flattens a GLB file in one go.
pub fn load_glb_mesh(bytes: &[u8]) -> Result<TriangleMesh, GlbError> {
    parse_glb(bytes).map(|s| flatten_scene(&s))
}

/// Wraps one mesh into a single-node scene and writes it.
pub fn mesh_to_glb(mesh: &TriangleMesh) -> Result<Vec<u8>, GlbError> {
    write_glb(&SceneAsset::from_mesh("mesh", mesh.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
    }

    /// Hand-assembled single-triangle GLB: positions f32, u16 indices, no normals.
    fn hand_written_triangle_glb() -> Vec<u8> {
        let mut bin = Vec::new();
        for v in [0f32, 0., 0., 1., 0., 0., 0., 1., 0.] {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        for i in [0u16, 1, 2] {
            bin.extend_from_slice(&i.to_le_bytes());
        }
        bin.extend_from_slice(&[0, 0]);
        let json = br#"{"asset":{"version":"2.0"},"scene":0,"scenes":[{"nodes":[0]}],"nodes":[{"mesh":0}],"meshes":[{"primitives":[{"attributes":{"POSITION":0},"indices":1}]}],"accessors":[{"bufferView":0,"componentType":5126,"count":3,"type":"VEC3","min":[0,0,0],"max":[1,1,0]},{"bufferView":1,"componentType":5123,"count":3,"type":"SCALAR"}],"bufferViews":[{"buffer":0,"byteOffset":0,"byteLength":36},{"buffer":0,"byteOffset":36,"byteLength":6}],"buffers":[{"byteLength":44}]}"#;
        let mut json = json.to_vec();
        while json.len() % 4 != 0 {
            json.push(b' ');
        }
        let total = 12 + 8 + json.len() + 8 + bin.len();
        let mut out = Vec::new();
        out.extend_from_slice(&GLB_MAGIC.to_le_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(total as u32).to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&CHUNK_JSON.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
        out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
        out.extend_from_slice(&bin);
        out
    }

    #[test]
    fn parses_minimal_triangle() {
        let scene = parse_glb(&hand_written_triangle_glb()).unwrap();
        assert_eq!(scene.meshes.len(), 1);
        assert_eq!(scene.meshes[0].mesh.positions.len(), 3);
        assert_eq!(scene.meshes[0].mesh.indices, vec![[0, 1, 2]]);
        assert_eq!(scene.meshes[0].mesh.normals, None);
    }

    #[test]
    fn zero_meshes_is_not_an_error() {
        let bytes = write_glb(&SceneAsset::default()).unwrap();
        let scene = parse_glb(&bytes).unwrap();
        assert!(scene.meshes.is_empty());
        assert!(flatten_scene(&scene).is_empty());
    }

    #[test]
    fn short_input_is_malformed() {
        let err = parse_glb(&[0u8; 8]).unwrap_err();
        assert_eq!(err.code(), "MalformedContainer");
    }

    #[test]
    fn truncation_and_bad_magic_are_malformed() {
        let bytes = hand_written_triangle_glb();
        assert!(matches!(
            parse_glb(&bytes[..bytes.len() - 4]),
            Err(GlbError::MalformedContainer(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'x';
        assert!(matches!(parse_glb(&bad), Err(GlbError::MalformedContainer(_))));
    }

    #[test]
    fn draco_extension_is_reported() {
        let mut scene = SceneAsset::from_mesh("m", triangle());
        scene
            .opaque
            .json
            .insert("extensionsUsed".into(), json!(["KHR_draco_mesh_compression"]));
        let bytes = write_glb(&scene).unwrap();
        assert_eq!(parse_glb(&bytes).unwrap_err().code(), "UnsupportedFeature");
    }

    #[test]
    fn round_trip_preserves_attributes_and_blobs() {
        let mut mesh = triangle();
        mesh.normals = Some(vec![Vector3::z(); 3]);
        mesh.uvs = Some(vec![Vector2::new(0.25, 0.5); 3]);
        mesh.positions.push(Point3::new(0.125, 0.25, 0.375));
        mesh.indices.push([1, 3, 2]);
        mesh.normals.as_mut().unwrap().push(Vector3::y());
        mesh.uvs.as_mut().unwrap().push(Vector2::new(1.0, 1.0));
        mesh.material_slots = Some(vec![0, NO_MATERIAL]);
        let mut scene = SceneAsset::from_mesh("panel", mesh);
        scene
            .opaque
            .json
            .insert("materials".into(), json!([{ "name": "glass" }]));
        scene
            .opaque
            .json
            .insert("images".into(), json!([{ "mimeType": "image/png" }]));
        scene.opaque.blobs.insert("image/0".into(), vec![1, 2, 3, 4, 5]);

        let once = parse_glb(&write_glb(&scene).unwrap()).unwrap();
        let twice = parse_glb(&write_glb(&once).unwrap()).unwrap();
        assert_eq!(once.meshes[0].mesh, scene.meshes[0].mesh);
        assert_eq!(twice, once);
        assert_eq!(once.opaque.blobs["image/0"], vec![1, 2, 3, 4, 5]);
        assert_eq!(once.opaque.json["materials"], json!([{ "name": "glass" }]));
    }

    #[test]
    fn two_meshes_listed_in_structure_chunk() {
        let mut scene = SceneAsset::from_mesh("a", triangle());
        scene.meshes.push(NamedMesh {
            name: "b".into(),
            mesh: triangle(),
        });
        scene.nodes.push(SceneNode::with_mesh(1));
        scene.roots.push(1);
        let bytes = write_glb(&scene).unwrap();
        let json_len = read_u32(&bytes, 12) as usize;
        let doc: Value = serde_json::from_slice(&bytes[20..20 + json_len]).unwrap();
        assert_eq!(doc["meshes"].as_array().unwrap().len(), 2);
        assert_eq!(read_u32(&bytes, 8) as usize, bytes.len());
        assert_eq!(bytes.len() % 4, 0);
    }

    #[test]
    fn flatten_applies_translation() {
        let mut scene = SceneAsset::from_mesh("t", triangle());
        scene.nodes[0].transform = Matrix4::new_translation(&Vector3::new(1.0, 0.0, 0.0));
        let flat = flatten_scene(&scene);
        for (a, b) in flat.positions.iter().zip(&triangle().positions) {
            assert_eq!(a.x, b.x + 1.0);
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn flatten_composes_nested_transforms() {
        // parent: translate (0,1,0); child: scale 2. world = T * S.
        let mut scene = SceneAsset::from_mesh("t", triangle());
        scene.nodes[0].transform = Matrix4::new_scaling(2.0);
        scene.nodes.push(SceneNode {
            name: Some("parent".into()),
            transform: Matrix4::new_translation(&Vector3::new(0.0, 1.0, 0.0)),
            mesh: None,
            children: vec![0],
        });
        scene.roots = vec![1];
        let flat = flatten_scene(&scene);
        // Hand-multiplied: [[2,0,0,0],[0,2,0,1],[0,0,2,0],[0,0,0,1]].
        let expected = [[0.0, 1.0, 0.0], [2.0, 1.0, 0.0], [0.0, 3.0, 0.0]];
        for (p, e) in flat.positions.iter().zip(expected) {
            assert_eq!([p.x, p.y, p.z], e);
        }
    }

    #[test]
    fn instanced_mesh_is_duplicated() {
        let mut scene = SceneAsset::from_mesh("t", triangle());
        scene.nodes.push(SceneNode::with_mesh(0));
        scene.roots.push(1);
        assert_eq!(flatten_scene(&scene).triangle_count(), 2);
    }

    #[test]
    fn cyclic_nodes_are_rejected() {
        let mut scene = SceneAsset::from_mesh("t", triangle());
        scene.nodes[0].children = vec![0];
        let bytes = write_glb(&scene).unwrap();
        assert!(matches!(parse_glb(&bytes), Err(GlbError::MalformedContainer(_))));
    }
}
