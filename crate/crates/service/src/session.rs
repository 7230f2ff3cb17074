use std::collections::VecDeque;

use casement_core::pipeline::{self, Building, LocalizedComponent, ModelSummary};
use casement_core::segmentation::{DepthBand, MaskProviderConfig};
use casement_core::{
    orbit_camera, render_depth, Camera, Catalog, DepthBuffer, FusionReport, ReplacementPlan, ScalingMode,
    ViewSettings, Warning,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Empty,
    Ready,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub status: SessionStatus,
    pub model: Option<ModelSummary>,
    pub camera: Option<Camera>,
    pub detected: Vec<LocalizedComponent>,
    pub history_len: usize,
}

/// One designer's working state. Each entry of `history` is the building as it was before
/// the plan next to it was committed.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub building: Option<Building>,
    pub camera: Option<Camera>,
    pub history: VecDeque<(Building, ReplacementPlan)>,
    pub detected: Vec<LocalizedComponent>,
}

fn no_catalog() -> ApiError {
    ApiError::precondition("no catalog is loaded")
}

impl Session {
    pub fn new(id: String) -> Self {
        Self {
            id,
            building: None,
            camera: None,
            history: VecDeque::new(),
            detected: Vec::new(),
        }
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.id.clone(),
            status: if self.building.is_some() {
                SessionStatus::Ready
            } else {
                SessionStatus::Empty
            },
            model: self.building.as_ref().map(|b| pipeline::summarize(&b.mesh)),
            camera: self.camera.clone(),
            detected: self.detected.clone(),
            history_len: self.history.len(),
        }
    }

    pub fn building(&self) -> Result<&Building, ApiError> {
        self.building
            .as_ref()
            .ok_or_else(|| ApiError::precondition("session has no model"))
    }

    /// Replaces the model, resets history and detections, and points the camera at the front
    /// elevation. The session is unchanged on error.
    pub fn set_model(&mut self, building: Building, view: &ViewSettings) -> Result<ModelSummary, ApiError> {
        let camera = casement_core::front_camera(&building.mesh, view)?;
        let summary = pipeline::summarize(&building.mesh);
        self.building = Some(building);
        self.camera = Some(camera);
        self.history.clear();
        self.detected.clear();
        Ok(summary)
    }

    /// Depth view from the active camera, or from a new orbit camera when a yaw or an
    /// elevation is given; the new camera becomes the active one.
    pub fn render(
        &mut self,
        yaw_deg: Option<f64>,
        elevation_deg: Option<f64>,
        view: &ViewSettings,
    ) -> Result<(Camera, DepthBuffer), ApiError> {
        let mesh = &self.building()?.mesh;
        let camera = if yaw_deg.is_some() || elevation_deg.is_some() {
            let (center, radius) = mesh
                .bounding_sphere()
                .ok_or(casement_core::GeometryError::EmptyMesh)?;
            orbit_camera(
                center,
                radius,
                yaw_deg.unwrap_or(0.0),
                elevation_deg.unwrap_or(0.0),
                2.5,
                view,
            )
        } else {
            self.camera.clone().ok_or_else(|| ApiError::precondition("session has no camera"))?
        };
        let depth = render_depth(mesh, &camera)?;
        self.camera = Some(camera.clone());
        Ok((camera, depth))
    }

    pub fn segment(
        &mut self,
        prompt: &str,
        provider: &MaskProviderConfig,
        band: DepthBand,
    ) -> Result<(Vec<LocalizedComponent>, Vec<Warning>), ApiError> {
        let building = self.building()?;
        let camera = self.camera.as_ref().ok_or_else(|| ApiError::precondition("session has no camera"))?;
        let (found, warnings) = pipeline::segment(&building.mesh, camera, prompt, provider, band)?;
        self.detected = found.clone();
        Ok((found, warnings))
    }

    /// Plans and dry-runs a replacement on a copy of the building.
    pub fn preview(
        &self,
        catalog: Option<&Catalog>,
        target: usize,
        component_id: u32,
        mode: ScalingMode,
        inflation: f64,
    ) -> Result<(ReplacementPlan, FusionReport), ApiError> {
        let catalog = catalog.ok_or_else(no_catalog)?;
        let building = self.building()?;
        let obb = &self
            .detected
            .get(target)
            .ok_or_else(|| {
                ApiError::precondition(format!(
                    "target {target} does not exist; {} component(s) detected",
                    self.detected.len()
                ))
            })?
            .obb;
        let plan = pipeline::plan_for(building, obb, catalog, component_id, mode, inflation)?;
        let (_, report) = pipeline::apply_plan(building, &plan, catalog)?;
        Ok((plan, report))
    }

    pub fn commit(
        &mut self,
        catalog: Option<&Catalog>,
        plan: ReplacementPlan,
        history_depth: usize,
    ) -> Result<(FusionReport, ModelSummary), ApiError> {
        let catalog = catalog.ok_or_else(no_catalog)?;
        let building = self.building()?;
        let (edited, report) = pipeline::apply_plan(building, &plan, catalog)?;
        let summary = pipeline::summarize(&edited.mesh);
        let previous = self.building.replace(edited).expect("checked above");
        self.history.push_back((previous, plan));
        while self.history.len() > history_depth {
            self.history.pop_front();
        }
        Ok((report, summary))
    }

    pub fn undo(&mut self) -> Result<ModelSummary, ApiError> {
        let (previous, _) = self.history.pop_back().ok_or_else(|| {
            ApiError::new(axum::http::StatusCode::CONFLICT, "NothingToUndo", "history is empty")
        })?;
        let summary = pipeline::summarize(&previous.mesh);
        self.building = Some(previous);
        Ok(summary)
    }

    pub fn export(&self) -> Result<Vec<u8>, ApiError> {
        Ok(self.building()?.to_glb()?)
    }
}
