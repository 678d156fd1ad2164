//! HTTP service over the analysis pipeline: case lifecycle, composed 2D views,
//! 3D renders, classification and measurements.
//!
//! Images are rendered server-side and returned as PNG with strong ETags
//! derived from the case content hash, the canonicalized request and the
//! model version. Every GET is a pure function of the loaded case.

mod error;
mod handlers;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use ctview_core::ingest::DerivedCache;
use ctview_core::measure::MeasurementRecord;
use ctview_core::mil::load_checkpoint;
use ctview_core::pipeline::{AnalyzedCase, Classifier, Pipeline, PipelineConfig};
use ctview_core::render::{load_presets, Scene, TfPreset};

pub use error::ApiError;

pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    /// Root of the derived-result cache; no caching when absent.
    pub cache_dir: Option<PathBuf>,
    /// Classifier checkpoint; classification endpoints answer 409 without one.
    pub model: Option<PathBuf>,
    /// Extra transfer-function presets (`*.json`) overriding the built-ins.
    pub presets_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

/// A case as held by the session.
pub struct LoadedCase {
    pub analyzed: AnalyzedCase,
    /// Volume records from load time followed by linear measurements in request order.
    pub measurements: Mutex<Vec<MeasurementRecord>>,
    /// The last scene rendered for this case.
    pub scene: Mutex<Option<Scene>>,
}

pub struct AppState {
    pub pipeline: Pipeline,
    pub presets: BTreeMap<String, TfPreset>,
    cases: RwLock<BTreeMap<String, Arc<LoadedCase>>>,
    /// Serializes case loads and unloads; reads never take it.
    lifecycle: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, presets: BTreeMap<String, TfPreset>) -> Self {
        Self { pipeline, presets, cases: RwLock::new(BTreeMap::new()), lifecycle: tokio::sync::Mutex::new(()) }
    }

    /// Build the pipeline, model handle and presets described by `cfg`.
    pub fn from_config(cfg: &ServerConfig) -> Result<Self, String> {
        let classifier = match &cfg.model {
            Some(path) => {
                let model = load_checkpoint::<f64>(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Some(Classifier::new(model))
            }
            None => None,
        };
        let cache = cfg.cache_dir.as_ref().map(DerivedCache::new);
        let presets = load_presets(cfg.presets_dir.as_deref()).map_err(|e| e.to_string())?;
        Ok(Self::new(Pipeline::new(cfg.pipeline.clone(), classifier, cache), presets))
    }

    pub fn case(&self, id: &str) -> Result<Arc<LoadedCase>, ApiError> {
        self.cases.read().expect("case map lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.read().expect("case map lock").keys().cloned().collect()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/cases", post(handlers::load_case).get(handlers::list_cases))
        .route("/cases/{id}", get(handlers::case_summary).delete(handlers::unload_case))
        .route("/cases/{id}/slice", get(handlers::slice))
        .route("/cases/{id}/render", post(handlers::render))
        .route("/cases/{id}/transform", get(handlers::transform))
        .route("/cases/{id}/classification", get(handlers::classification))
        .route("/cases/{id}/heatmap/slice", get(handlers::heatmap_slice))
        .route("/cases/{id}/measurements", get(handlers::measurements))
        .route("/cases/{id}/measure/linear", post(handlers::measure_linear))
        .route("/presets", get(handlers::presets))
        .with_state(state)
}

pub fn listen_addr(cfg: &ServerConfig) -> Result<SocketAddr, String> {
    let host = cfg.host.as_deref().unwrap_or(DEFAULT_HOST);
    let port = cfg.port.unwrap_or(DEFAULT_PORT);
    format!("{host}:{port}").parse().map_err(|e| format!("invalid listen address {host}:{port}: {e}"))
}

/// Bind and serve until the process is stopped.
pub async fn serve(cfg: ServerConfig) -> Result<(), String> {
    let addr = listen_addr(&cfg)?;
    let state = Arc::new(AppState::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("bind {addr}: {e}"))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state)).await.map_err(|e| e.to_string())
}
