//! The component-replacement loop shared by the CLI and the service: render, segment,
//! localize, retrieve, plan, splice, export.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::asset::{flatten_scene, parse_glb, write_glb, OpaqueData, SceneAsset};
use crate::catalog::Catalog;
use crate::error::{Error, Warning};
use crate::geometry::{
    fit_obb, front_camera, render_depth, Camera, DepthBuffer, OrientedBoundingBox, ScalingMode, ViewSettings,
};
use crate::mesh::TriangleMesh;
use crate::replacement::{apply_replacement, fresh_slot_base, plan_replacement, FusionReport, ReplacementPlan};
use crate::retrieval::{ScoredComponent, SketchImage};
use crate::segmentation::{
    bits_to_png, extract_foreground, request_masks, ComponentMask, DepthBand, MaskProviderConfig,
};

/// A mask turned into a world-space box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedComponent {
    pub label: String,
    pub obb: OrientedBoundingBox,
    pub point_count: usize,
}

/// The building being edited together with the non-geometry content of its source file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Building {
    pub mesh: TriangleMesh,
    pub opaque: OpaqueData,
}

impl Building {
    /// Parses and flattens a GLB; materials and other opaque members are kept.
    pub fn from_glb(bytes: &[u8]) -> Result<Self, Error> {
        let scene = parse_glb(bytes)?;
        Ok(Self {
            mesh: flatten_scene(&scene),
            opaque: scene.opaque,
        })
    }

    pub fn to_glb(&self) -> Result<Vec<u8>, Error> {
        let mut scene = SceneAsset::from_mesh("building", self.mesh.clone());
        scene.opaque = self.opaque.clone();
        Ok(write_glb(&scene)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub vertex_count: usize,
    pub face_count: usize,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
}

pub fn summarize(mesh: &TriangleMesh) -> ModelSummary {
    let (min, max) = mesh
        .aabb()
        .map(|b| (b.min.coords.into(), b.max.coords.into()))
        .unwrap_or(([0.0; 3], [0.0; 3]));
    ModelSummary {
        vertex_count: mesh.vertex_count(),
        face_count: mesh.triangle_count(),
        aabb_min: min,
        aabb_max: max,
    }
}

/// Grayscale depth view used as the segmentation input.
pub fn view_png(depth: &DepthBuffer) -> Vec<u8> {
    let gray = depth.to_grayscale();
    let mut out = std::io::Cursor::new(Vec::new());
    image::GrayImage::from_raw(depth.width, depth.height, gray)
        .expect("buffer matches dimensions")
        .write_to(&mut out, image::ImageFormat::Png)
        .expect("encoding an in-memory png cannot fail");
    out.into_inner()
}

/// Foreground extraction and OBB fitting per mask. Masks that fail (no depth, wrong size)
/// become warnings.
pub fn localize(
    masks: &[ComponentMask],
    depth: &DepthBuffer,
    camera: &Camera,
    band: DepthBand,
) -> (Vec<LocalizedComponent>, Vec<Warning>) {
    let mut found = Vec::new();
    let mut warnings = Vec::new();
    for (i, mask) in masks.iter().enumerate() {
        let result = extract_foreground(mask, depth, camera, band)
            .map_err(Error::from)
            .and_then(|cloud| Ok((fit_obb(&cloud)?, cloud.len())));
        match result {
            Ok((obb, point_count)) => found.push(LocalizedComponent {
                label: mask.label.clone(),
                obb,
                point_count,
            }),
            Err(e) => warnings.push(Warning::new(e.code(), format!("mask {i} ({}): {e}", mask.label))),
        }
    }
    (found, warnings)
}

/// Renders at `camera`, asks the provider for `prompt` masks and localizes each.
pub fn segment(
    mesh: &TriangleMesh,
    camera: &Camera,
    prompt: &str,
    provider: &MaskProviderConfig,
    band: DepthBand,
) -> Result<(Vec<LocalizedComponent>, Vec<Warning>), Error> {
    let depth = render_depth(mesh, camera)?;
    let masks = request_masks(prompt, &view_png(&depth), provider)?;
    Ok(localize(&masks, &depth, camera, band))
}

/// Copies the component file's materials into `target` so that slots starting at
/// `slot_base` resolve to them. Texture references are dropped because the component's
/// textures are not carried over.
pub fn merge_component_materials(target: &mut OpaqueData, component: &OpaqueData, slot_base: u32) {
    let Some(Value::Array(extra)) = component.json.get("materials") else {
        return;
    };
    let materials = target
        .json
        .entry("materials".to_owned())
        .or_insert_with(|| Value::Array(Vec::new()));
    let Value::Array(list) = materials else {
        return;
    };
    while list.len() < slot_base as usize {
        list.push(serde_json::json!({}));
    }
    for m in extra {
        let mut m = m.clone();
        strip_textures(&mut m);
        list.push(m);
    }
}

fn strip_textures(v: &mut Value) {
    if let Value::Object(map) = v {
        map.retain(|k, _| !k.ends_with("Texture"));
        for child in map.values_mut() {
            strip_textures(child);
        }
    }
}

/// Everything a single replacement run needs besides the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub prompt: String,
    pub view: ViewSettings,
    /// Overrides the default front elevation camera.
    #[serde(default)]
    pub camera: Option<Camera>,
    /// Which localized component to replace.
    pub target: usize,
    pub mode: ScalingMode,
    pub inflation: f64,
    pub band: DepthBand,
    pub top_k: usize,
    /// Restrict retrieval to this category.
    #[serde(default)]
    pub category: Option<String>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            prompt: "window".into(),
            view: ViewSettings {
                width: 512,
                height: 512,
                ..ViewSettings::default()
            },
            camera: None,
            target: 0,
            mode: ScalingMode::PerAxis,
            inflation: crate::replacement::DEFAULT_INFLATION,
            band: DepthBand::default(),
            top_k: 5,
            category: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub model: ModelSummary,
    pub camera: Camera,
    pub localized: Vec<LocalizedComponent>,
    pub candidates: Vec<ScoredComponent>,
    pub plan: ReplacementPlan,
    pub fusion: FusionReport,
    pub output: ModelSummary,
    pub warnings: Vec<Warning>,
}

/// Loads the catalog component `id` in canonical coordinates along with its file's opaque
/// data.
pub fn load_catalog_component(catalog: &Catalog, id: u32) -> Result<(TriangleMesh, OpaqueData), Error> {
    let mesh = catalog.manifest.load_component(id)?;
    let record = catalog.manifest.record(id).expect("load_component checked the id");
    let bytes = std::fs::read(catalog.manifest.path_of(record))?;
    let opaque = parse_glb(&bytes)?.opaque;
    Ok((mesh, opaque))
}

/// Plans the replacement of `target` by catalog component `component_id` without touching
/// the building.
pub fn plan_for(
    building: &Building,
    target: &OrientedBoundingBox,
    catalog: &Catalog,
    component_id: u32,
    mode: ScalingMode,
    inflation: f64,
) -> Result<ReplacementPlan, Error> {
    let record = catalog
        .manifest
        .record(component_id)
        .ok_or(crate::catalog::CatalogError::NotFound(component_id))?;
    Ok(plan_replacement(&building.mesh, target, component_id, &record.canonical_obb, mode, inflation)?)
}

/// Applies `plan` with its catalog component and merges the component's materials into the
/// building.
pub fn apply_plan(building: &Building, plan: &ReplacementPlan, catalog: &Catalog) -> Result<(Building, FusionReport), Error> {
    let (component, component_opaque) = load_catalog_component(catalog, plan.component_id)?;
    let (mesh, report) = apply_replacement(&building.mesh, plan, &component)?;
    let mut opaque = building.opaque.clone();
    if component.material_slots.is_some() {
        merge_component_materials(&mut opaque, &component_opaque, fresh_slot_base(&building.mesh));
    }
    Ok((Building { mesh, opaque }, report))
}

pub fn replace_component(
    building: &Building,
    target: &OrientedBoundingBox,
    catalog: &Catalog,
    component_id: u32,
    mode: ScalingMode,
    inflation: f64,
) -> Result<(Building, ReplacementPlan, FusionReport), Error> {
    let plan = plan_for(building, target, catalog, component_id, mode, inflation)?;
    let (edited, report) = apply_plan(building, &plan, catalog)?;
    Ok((edited, plan, report))
}

/// One full pass: model GLB in, edited GLB out.
pub fn run_pipeline(
    model_glb: &[u8],
    provider: &MaskProviderConfig,
    sketch: &SketchImage,
    catalog: &Catalog,
    options: &PipelineOptions,
) -> Result<(Vec<u8>, PipelineReport), Error> {
    let building = Building::from_glb(model_glb)?;
    let camera = match &options.camera {
        Some(c) => {
            c.validate()?;
            c.clone()
        }
        None => front_camera(&building.mesh, &options.view)?,
    };
    let (localized, mut warnings) = segment(&building.mesh, &camera, &options.prompt, provider, options.band)?;
    let target = localized.get(options.target).ok_or_else(|| {
        crate::segmentation::SegmentationError::ProviderFailure(format!(
            "prompt `{}` localized {} component(s); target {} does not exist",
            options.prompt,
            localized.len(),
            options.target
        ))
    })?;
    let candidates = catalog
        .index
        .query(sketch, options.top_k.max(1), options.category.as_deref())?;
    let best = candidates[0].component_id;
    let (edited, plan, fusion) =
        replace_component(&building, &target.obb, catalog, best, options.mode, options.inflation)?;
    let report = crate::mesh::validate_mesh(&edited.mesh);
    for (code, loc) in &report.warnings {
        warnings.push(Warning::new(&format!("{code:?}"), format!("{loc:?}")));
    }
    let glb = edited.to_glb()?;
    Ok((
        glb,
        PipelineReport {
            model: summarize(&building.mesh),
            camera,
            localized: localized.clone(),
            candidates,
            plan,
            fusion,
            output: summarize(&edited.mesh),
            warnings,
        },
    ))
}

/// Thumbnail-sized canonical front line art of a catalog component as PNG.
pub fn component_thumbnail(catalog: &Catalog, id: u32) -> Result<Vec<u8>, Error> {
    let mesh = catalog.manifest.load_component(id)?;
    let mut params = catalog.index.params.clone();
    params.views_per_component = 1;
    let views = crate::retrieval::RetrievalIndex::line_art_views(&mesh, &params);
    let img = views
        .into_iter()
        .next()
        .unwrap_or_else(|| SketchImage::blank(params.canonical_size, params.canonical_size));
    Ok(bits_to_png(img.width, img.height, &img.bits))
}
