//! The `casement` command line: fixtures, catalog and index building, renders, OBB fitting,
//! retrieval, single-shot pipeline runs, evaluation and the HTTP service.

pub mod config;
pub mod eval;

use std::path::{Path, PathBuf};
use std::time::Instant;

use casement_core::catalog::{ingest_directory, CategoryRule};
use casement_core::fixtures::{fixture_house, synthetic_suite, write_house_fixture, write_suite, HouseParams};
use casement_core::pipeline::{self, PipelineOptions};
use casement_core::retrieval::{render_line_art, LineArtSettings};
use casement_core::segmentation::load_mask;
use casement_core::{
    extract_foreground, fit_obb, load_glb_mesh, orbit_camera, render_depth, Camera, Catalog, MaskProviderConfig,
    ScalingMode, SketchImage, TriangleMesh, ViewSettings,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{CliConfig, CONFIG_ENV};
pub use eval::{run_eval_self_retrieval, EvalOptions, EvalReport};

/// Failure with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<casement_core::Error> for CliError {
    fn from(e: casement_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                casement_core::Error::from(e).into()
            }
        }
    )*};
}

via_core!(
    casement_core::GlbError,
    casement_core::GeometryError,
    casement_core::SegmentationError,
    casement_core::RetrievalError,
    casement_core::ReplacementError,
    casement_core::CatalogError,
    std::io::Error
);

/// What a subcommand produced: the JSON document printed under `--json` and a short human
/// summary otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: Value,
    pub text: String,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Self { json, text: text.into() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "casement", version, about = "Component-level editing of building meshes")]
pub struct Cli {
    /// Print one JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every random choice (fixtures, vocabulary training, queries, evaluation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file; falls back to $CASEMENT_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    #[command(subcommand)]
    Catalog(CatalogCommand),
    #[command(subcommand)]
    Index(IndexCommand),
    #[command(subcommand)]
    Render(RenderCommand),
    /// Fit an OBB to the surface under a mask.
    FitObb(FitObbArgs),
    /// Rank catalog components for a sketch.
    Retrieve(RetrieveArgs),
    /// Segment, retrieve and replace in one run.
    Pipeline(PipelineArgs),
    /// Self-retrieval evaluation over a catalog.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// Procedural window and door components plus a metadata.json sidecar.
    Suite {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Gable house with two windows and a door, its front camera and per-opening masks.
    House {
        #[arg(long)]
        out: PathBuf,
        /// Horizontal shift of the openings, for distinct variants.
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Ingest a directory of GLB components and index them into one archive.
    Build {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Re-index a catalog archive with the current retrieval settings.
    Build {
        catalog: PathBuf,
        /// Archive to write; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the bare index file.
        #[arg(long)]
        index_out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ViewArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub elev: f64,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum RenderCommand {
    /// Grayscale depth image (near is bright).
    Depth {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        /// Also write the float depth buffer.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Also write the camera as JSON.
        #[arg(long)]
        camera_out: Option<PathBuf>,
    },
    /// Silhouette and crease line art.
    Lineart {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Depth images on an evenly spaced yaw ring.
    Turntable {
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
        elev: f64,
    },
}

#[derive(Debug, Args)]
pub struct FitObbArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Camera JSON the mask was drawn on; defaults to the front camera at the mask's size.
    #[arg(long)]
    pub camera: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long)]
    pub category: Option<String>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Mask file map: a masks.json file or its directory.
    #[arg(long, conflicts_with = "provider", required_unless_present = "provider")]
    pub masks: Option<PathBuf>,
    /// JSON file holding any mask provider config.
    #[arg(long)]
    pub provider: Option<PathBuf>,
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "window")]
    pub prompt: String,
    /// Which localized component to replace.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    #[arg(long, default_value = "per_axis")]
    pub mode: ScalingMode,
    #[arg(long, default_value_t = casement_core::replacement::DEFAULT_INFLATION)]
    pub inflation: f64,
    /// Camera JSON; defaults to the front elevation.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub category: Option<String>,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Share of stroke pixels removed for the robustness score.
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::new("IoFailure", format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::new("IoFailure", format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read(path)?)
        .map_err(|e| CliError::new("InvalidInput", format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn load_model(path: &Path) -> Result<TriangleMesh, CliError> {
    Ok(load_glb_mesh(&read(path)?)?)
}

fn view_camera(mesh: &TriangleMesh, view: &ViewArgs, config: &CliConfig) -> Result<Camera, CliError> {
    let settings = ViewSettings {
        width: view.width.unwrap_or(config.view.width),
        height: view.height.unwrap_or(config.view.height),
        fill: config.view.fill,
    };
    let (center, radius) = mesh.bounding_sphere().ok_or(casement_core::GeometryError::EmptyMesh)?;
    Ok(orbit_camera(center, radius, view.yaw, view.elev, 2.5, &settings))
}

fn load_catalog(path: &Path) -> Result<(Catalog, Vec<casement_core::Warning>), CliError> {
    Ok(Catalog::load(path)?)
}

/// High-water resident set size of this process (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<Output, CliError> {
    let mut config = CliConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.retrieval.seed = seed;
    }
    let seed = cli.seed.unwrap_or(config.retrieval.seed);
    match &cli.command {
        Command::Fixtures(FixturesCommand::Suite { out, count }) => {
            let suite = synthetic_suite(*count, seed);
            write_suite(out, &suite)?;
            let windows = suite.iter().filter(|c| c.name.starts_with("window")).count();
            Ok(Output::new(
                json!({"dir": out, "components": suite.len(), "windows": windows, "doors": suite.len() - windows}),
                format!("wrote {} components to {}", suite.len(), out.display()),
            ))
        }
        Command::Fixtures(FixturesCommand::House { out, shift }) => {
            let house = fixture_house(&HouseParams {
                shift: *shift,
                ..HouseParams::default()
            });
            let camera = write_house_fixture(out, &house, &config.view)?;
            Ok(Output::new(
                json!({"dir": out, "faces": house.mesh.triangle_count(), "openings": house.openings, "camera": camera}),
                format!("wrote fixture house to {}", out.display()),
            ))
        }
        Command::Catalog(CatalogCommand::Build { dir, out }) => {
            let started = Instant::now();
            let manifest = ingest_directory(dir, &CategoryRule::for_directory(dir)?)?;
            let ingested = started.elapsed().as_secs_f64();
            let ingest_errors = manifest.ingest_errors.clone();
            let (catalog, warnings) = Catalog::build(manifest, &config.retrieval)?;
            catalog.save(out)?;
            Ok(Output::new(
                json!({
                    "catalog": out,
                    "components": catalog.manifest.records.len(),
                    "views": catalog.index.view_count(),
                    "codebook_k": catalog.index.codebook.k(),
                    "ingest_errors": ingest_errors,
                    "warnings": warnings,
                    "ingest_seconds": ingested,
                    "total_seconds": started.elapsed().as_secs_f64(),
                    "peak_rss_bytes": peak_rss_bytes(),
                }),
                format!(
                    "{} components ({} ingest errors), {} views indexed -> {}",
                    catalog.manifest.records.len(),
                    ingest_errors.len(),
                    catalog.index.view_count(),
                    out.display()
                ),
            ))
        }
        Command::Index(IndexCommand::Build { catalog, out, index_out }) => {
            let started = Instant::now();
            let (old, _) = load_catalog(catalog)?;
            let (rebuilt, warnings) = Catalog::build(old.manifest, &config.retrieval)?;
            let target = out.as_ref().unwrap_or(catalog);
            rebuilt.save(target)?;
            if let Some(path) = index_out {
                write(path, &rebuilt.index.to_bytes())?;
            }
            Ok(Output::new(
                json!({
                    "catalog": target,
                    "views": rebuilt.index.view_count(),
                    "codebook_k": rebuilt.index.codebook.k(),
                    "warnings": warnings,
                    "seconds": started.elapsed().as_secs_f64(),
                }),
                format!("indexed {} views -> {}", rebuilt.index.view_count(), target.display()),
            ))
        }
        Command::Render(RenderCommand::Depth {
            model,
            out,
            view,
            raw,
            camera_out,
        }) => {
            let mesh = load_model(model)?;
            let camera = view_camera(&mesh, view, &config)?;
            let depth = render_depth(&mesh, &camera)?;
            write(out, &pipeline::view_png(&depth))?;
            if let Some(path) = raw {
                let mut bytes = Vec::new();
                depth.write_to(&mut bytes)?;
                write(path, &bytes)?;
            }
            if let Some(path) = camera_out {
                write(path, &serde_json::to_vec_pretty(&camera).expect("camera serializes"))?;
            }
            let covered = depth.covered_pixels().count();
            Ok(Output::new(
                json!({"out": out, "camera": camera, "covered_pixels": covered}),
                format!("{}x{} depth, {covered} covered pixels -> {}", depth.width, depth.height, out.display()),
            ))
        }
        Command::Render(RenderCommand::Lineart { model, out, view }) => {
            let mesh = load_model(model)?;
            let camera = view_camera(&mesh, view, &config)?;
            let radius = mesh.bounding_sphere().map(|s| s.1).unwrap_or(1.0);
            let settings = LineArtSettings {
                depth_threshold: config.retrieval.depth_threshold_ratio * radius,
                normal_threshold_deg: config.retrieval.normal_threshold_deg,
            };
            let art = render_line_art(&mesh, &camera, &settings)?;
            write(out, &art.to_png())?;
            Ok(Output::new(
                json!({"out": out, "camera": camera, "ink_pixels": art.ink_count()}),
                format!("{} ink pixels -> {}", art.ink_count(), out.display()),
            ))
        }
        Command::Render(RenderCommand::Turntable {
            model,
            out_dir,
            views,
            elev,
        }) => {
            let mesh = load_model(model)?;
            let frames = casement_core::geometry::render_turntable(&mesh, *views, *elev, 2.5, &config.view)?;
            let yaws = casement_core::geometry::turntable_yaws(*views);
            let mut files = Vec::new();
            for (i, (camera, depth)) in frames.iter().enumerate() {
                let path = out_dir.join(format!("view_{i:03}.png"));
                write(&path, &pipeline::view_png(depth))?;
                files.push(json!({"file": path, "yaw": yaws[i], "camera": camera}));
            }
            Ok(Output::new(
                json!({"views": files}),
                format!("{} views -> {}", frames.len(), out_dir.display()),
            ))
        }
        Command::FitObb(args) => {
            let mesh = load_model(&args.model)?;
            let (mask, warnings) = load_mask(&read(&args.mask)?, "mask", "")?;
            let camera = match &args.camera {
                Some(p) => {
                    let c: Camera = read_json(p)?;
                    c.validate()?;
                    c
                }
                None => casement_core::front_camera(
                    &mesh,
                    &ViewSettings {
                        width: mask.width,
                        height: mask.height,
                        fill: config.view.fill,
                    },
                )?,
            };
            let depth = render_depth(&mesh, &camera)?;
            let cloud = extract_foreground(&mask, &depth, &camera, config.band)?;
            let obb = fit_obb(&cloud)?;
            Ok(Output::new(
                json!({"obb": obb, "point_count": cloud.len(), "warnings": warnings}),
                format!(
                    "center {:.4?}, half extents {:.4?} from {} points",
                    obb.center.coords.as_slice(),
                    obb.half_extents.as_slice(),
                    cloud.len()
                ),
            ))
        }
        Command::Retrieve(args) => {
            let (catalog, warnings) = load_catalog(&args.catalog)?;
            let sketch = SketchImage::from_png(&read(&args.sketch)?)?;
            let ranked = match cli.seed {
                Some(s) => catalog
                    .index
                    .query_with_seed(&sketch, args.top_k.max(1), args.category.as_deref(), s)?,
                None => catalog.index.query(&sketch, args.top_k.max(1), args.category.as_deref())?,
            };
            let rows: Vec<Value> = ranked
                .iter()
                .map(|r| {
                    let rec = catalog.manifest.record(r.component_id);
                    json!({
                        "component_id": r.component_id,
                        "score": r.score,
                        "name": rec.map(|r| r.name.as_str()),
                        "category": rec.map(|r| r.category.as_str()),
                    })
                })
                .collect();
            let text = rows
                .iter()
                .enumerate()
                .map(|(i, r)| format!("{}. {} ({}) {:.4}", i + 1, r["name"].as_str().unwrap_or("?"), r["component_id"], r["score"].as_f64().unwrap_or(0.0)))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(json!({"candidates": rows, "warnings": warnings}), text))
        }
        Command::Pipeline(args) => {
            let started = Instant::now();
            let provider = match (&args.masks, &args.provider) {
                (Some(path), _) => MaskProviderConfig::FileMap { path: path.clone() },
                (None, Some(path)) => read_json(path)?,
                (None, None) => return Err(CliError::new("InvalidInput", "--masks or --provider is required")),
            };
            let camera = args.camera.as_deref().map(read_json::<Camera>).transpose()?;
            let (catalog, _) = load_catalog(&args.catalog)?;
            let sketch = SketchImage::from_png(&read(&args.sketch)?)?;
            let options = PipelineOptions {
                prompt: args.prompt.clone(),
                view: config.view,
                camera,
                target: args.target,
                mode: args.mode,
                inflation: args.inflation,
                band: config.band,
                top_k: 5,
                category: args.category.clone(),
            };
            let (glb, report) = pipeline::run_pipeline(&read(&args.model)?, &provider, &sketch, &catalog, &options)?;
            write(&args.out, &glb)?;
            if let Some(path) = &args.report {
                write(path, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
            }
            let f = &report.fusion;
            Ok(Output::new(
                json!({
                    "out": args.out,
                    "fusion": f,
                    "component_id": report.plan.component_id,
                    "candidates": report.candidates,
                    "localized": report.localized.len(),
                    "output": report.output,
                    "warnings": report.warnings,
                    "seconds": started.elapsed().as_secs_f64(),
                }),
                format!(
                    "replaced target {} with component {}: removed {} faces, added {}, {} open boundary edges, gap {:.3e} -> {}",
                    args.target,
                    report.plan.component_id,
                    f.removed_face_count,
                    f.added_face_count,
                    f.open_boundary_edge_count,
                    f.bounding_gap,
                    args.out.display()
                ),
            ))
        }
        Command::Eval(args) => {
            let (catalog, _) = load_catalog(&args.catalog)?;
            let report = run_eval_self_retrieval(
                &catalog,
                &EvalOptions {
                    seed,
                    dropout: args.dropout,
                    ..EvalOptions::default()
                },
            )?;
            Ok(Output::new(
                to_json(&report),
                format!(
                    "{} components: top1 {:.3}, top5 {:.3}, top5 at {:.0}% dropout {:.3}, straight-on top1 {:.3}",
                    report.components,
                    report.top1,
                    report.top5,
                    report.dropout * 100.0,
                    report.top5_under_dropout,
                    report.top1_straight_on
                ),
            ))
        }
        Command::Serve(args) => {
            let mut service = config.service.clone();
            if let Some(p) = args.port {
                service.port = p;
            }
            if let Some(b) = &args.bind {
                service.bind = b.clone();
            }
            if let Some(c) = &args.catalog {
                service.catalog = Some(c.clone());
            }
            let (state, warnings) = casement_service::AppState::from_config(service)?;
            for w in &warnings {
                log::warn!("{}: {}", w.code, w.message);
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(casement_service::serve(state))?;
            Ok(Output::new(json!({"stopped": true}), "stopped"))
        }
    }
}
