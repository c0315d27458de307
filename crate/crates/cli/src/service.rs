//! HTTP JSON API over a scene directory and one model snapshot.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use dualseg::dataset::{SceneSample, SceneStore};
use dualseg::grid::DepthMap;
use dualseg::inference::{segment_at, Model, DEFAULT_MASK_THRESHOLD};
use dualseg::rle::{quantize, quantized_component, MaskRle};

use crate::commands::{check_threshold, seed_in_bounds};

/// Scenes are loaded once; the model can be swapped between requests.
#[derive(Clone)]
pub struct AppState {
    scenes: Arc<BTreeMap<String, DepthMap>>,
    model: Arc<RwLock<Option<Arc<Model>>>>,
}

impl AppState {
    pub fn new(scenes: impl IntoIterator<Item = (String, DepthMap)>, model: Option<Model>) -> Self {
        Self {
            scenes: Arc::new(scenes.into_iter().collect()),
            model: Arc::new(RwLock::new(model.map(Arc::new))),
        }
    }

    /// Loads every scene listed in the store's manifest.
    pub fn from_store(store: &SceneStore, model: Option<Model>) -> dualseg::Result<Self> {
        let mut scenes = Vec::new();
        for entry in &store.manifest().scenes {
            let SceneSample { depth, .. } = store.load(entry)?;
            scenes.push((entry.id.clone(), depth));
        }
        Ok(Self::new(scenes, model))
    }

    pub fn swap_model(&self, model: Option<Model>) {
        *self.model.write().expect("model lock poisoned") = model.map(Arc::new);
    }

    fn model(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock poisoned").clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPayload {
    pub width: usize,
    pub height: usize,
    pub min_mm: u16,
    pub max_mm: u16,
    /// Base64 of the row-major 16-bit big-endian values.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub row: i64,
    pub col: i64,
    pub threshold: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: MaskRle,
    pub edge: MaskRle,
    pub empty: bool,
    pub confidence: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub architecture: String,
    pub checkpoint_sha256: String,
    pub parameters: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scenes/{id}/depth", get(scene_depth))
        .route("/api/scenes/{id}/segment", post(segment))
        .route("/api/model/info", get(model_info))
        .with_state(state)
}

async fn list_scenes(State(state): State<AppState>) -> Json<Vec<SceneInfo>> {
    Json(
        state
            .scenes
            .iter()
            .map(|(id, d)| SceneInfo {
                id: id.clone(),
                width: d.width(),
                height: d.height(),
            })
            .collect(),
    )
}

fn scene(state: &AppState, id: &str) -> Result<DepthMap, ApiError> {
    state
        .scenes
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene {id:?}")))
}

pub fn depth_payload(depth: &DepthMap) -> DepthPayload {
    let bytes: Vec<u8> = depth.data().iter().flat_map(|v| v.to_be_bytes()).collect();
    DepthPayload {
        width: depth.width(),
        height: depth.height(),
        min_mm: depth.data().iter().copied().min().unwrap_or(0),
        max_mm: depth.data().iter().copied().max().unwrap_or(0),
        data: STANDARD.encode(bytes),
    }
}

async fn scene_depth(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<DepthPayload> {
    Ok(Json(depth_payload(&scene(&state, &id)?)))
}

async fn segment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SegmentRequest>,
) -> ApiResult<SegmentResponse> {
    let depth = scene(&state, &id)?;
    let model = state
        .model()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))?;
    let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    let threshold = req.threshold.unwrap_or(DEFAULT_MASK_THRESHOLD);
    check_threshold(threshold).map_err(unprocessable)?;
    let seed = seed_in_bounds(req.row, req.col, depth.height(), depth.width()).map_err(unprocessable)?;

    let start = Instant::now();
    let seg = tokio::task::spawn_blocking(move || segment_at(&model, &depth, seed, threshold))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| unprocessable(e.to_string()))?;
    // empty flag and confidence follow the quantized map the client sees
    let quantized = seg.mask_probabilities.map(quantize);
    let comp = quantized_component(&quantized, seed, threshold)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(SegmentResponse {
        mask: MaskRle::encode(&quantized),
        edge: MaskRle::from_probabilities(&seg.edge_probabilities),
        empty: comp.empty,
        confidence: comp.confidence,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

async fn model_info(State(state): State<AppState>) -> ApiResult<ModelInfo> {
    let model = state
        .model()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))?;
    Ok(Json(ModelInfo {
        architecture: model.arch.header(),
        checkpoint_sha256: model.checkpoint_hash(),
        parameters: model.params.num_scalars(),
    }))
}

pub async fn serve(state: AppState, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
