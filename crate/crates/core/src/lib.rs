//! Component-level editing of building meshes: localize a component from a 2D mask, find a
//! replacement by sketch in a catalog, and splice it into the model.

pub mod asset;
pub mod catalog;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod mesh;
pub mod pipeline;
pub mod replacement;
pub mod retrieval;
pub mod segmentation;

pub use asset::{flatten_scene, load_glb_mesh, mesh_to_glb, parse_glb, write_glb, GlbError, OpaqueData, SceneAsset};
pub use catalog::{ingest_directory, Catalog, CatalogError, CatalogManifest, CategoryRule, ComponentRecord};
pub use error::{Error, Result, Warning};
pub use geometry::{
    back_project, compute_alignment, fit_obb, front_camera, orbit_camera, render_depth, AffinePlacement, Camera,
    DepthBuffer, GeometryError, OrientedBoundingBox, PointCloud, ScalingMode, ViewSettings,
};
pub use mesh::{validate_mesh, TriangleMesh, ValidationReport};
pub use pipeline::{run_pipeline, Building, LocalizedComponent, PipelineOptions, PipelineReport};
pub use replacement::{apply_replacement, plan_replacement, FusionReport, ReplacementError, ReplacementPlan};
pub use retrieval::{build_index, RetrievalError, RetrievalIndex, RetrievalParams, ScoredComponent, SketchImage};
pub use segmentation::{extract_foreground, request_masks, ComponentMask, DepthBand, MaskProviderConfig, SegmentationError};
