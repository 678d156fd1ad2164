use std::hash::Hasher;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use ctview_core::ingest::{is_safe_id, CaseManifest, IngestError};
use ctview_core::measure::{now_unix, LesionDenominator, LesionStats, MeasurementRecord};
use ctview_core::pipeline::{AnalyzedCase, MaskSource, SegmentationInfo, Stage};
use ctview_core::render::{compose_slice, encode_png, heatmap_image, render_scene, HeatmapStyle, Scene, SliceView};
use ctview_core::volume::{Axis, TransformDirection, WindowLevel, LABEL_LESION, LABEL_LUNG};
use ctview_core::SliceImage;
use serde::{Deserialize, Serialize};

use crate::{ApiError, AppState, LoadedCase};

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

const OMITTED_HEADER: &str = "x-ctview-omitted";

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn flag(name: &str, v: &Option<String>) -> ApiResult<bool> {
    match v.as_deref() {
        None | Some("0") | Some("false") => Ok(false),
        Some("1") | Some("true") => Ok(true),
        Some(other) => Err(ApiError::bad_request(format!("{name} must be 0 or 1, got {other:?}"))),
    }
}

fn parse_axis(v: &Option<String>) -> ApiResult<Axis> {
    match v.as_deref() {
        None => Ok(Axis::Axial),
        Some(s) => Axis::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown axis {s:?}"))),
    }
}

// ---- case lifecycle ----

#[derive(Deserialize)]
#[serde(untagged)]
enum LoadRequest {
    /// `{"manifest": "path/to/case.json"}`
    File { manifest: PathBuf },
    Inline(CaseManifest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub p_neg: f64,
    pub p_pos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub metadata: std::collections::BTreeMap<String, String>,
    pub segmentation: SegmentationInfo,
    pub classification: Option<Probabilities>,
    pub classification_error: Option<String>,
    pub volumes: Option<LesionStats>,
    pub volumes_error: Option<String>,
    pub model_version: Option<String>,
}

fn summarize(case: &AnalyzedCase) -> CaseSummary {
    let g = case.scalar.geometry();
    CaseSummary {
        id: case.record.id.clone(),
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        metadata: case.record.metadata.clone(),
        segmentation: case.segmentation.clone(),
        classification: case.classification.as_ref().ok().map(|c| Probabilities { p_neg: c.p_neg, p_pos: c.p_pos }),
        classification_error: case.classification.as_ref().err().cloned(),
        volumes: case.measurements.as_ref().ok().copied(),
        volumes_error: case.measurements.as_ref().err().cloned(),
        model_version: case.classification.as_ref().ok().map(|c| c.model_version.clone()),
    }
}

fn provenance(case: &AnalyzedCase) -> String {
    match case.segmentation.notice.as_deref() {
        Some(notice) => notice.to_string(),
        None => "mask file".to_string(),
    }
}

pub async fn load_case(State(state): Shared, body: Bytes) -> ApiResult<Response> {
    let request: LoadRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed manifest: {e}")).with_stage(Stage::Ingest))?;
    let manifest = match request {
        LoadRequest::File { manifest } => CaseManifest::read(&manifest),
        LoadRequest::Inline(m) if is_safe_id(&m.id) => Ok(m),
        LoadRequest::Inline(m) => Err(IngestError::InvalidId(m.id)),
    }
    .map_err(|e| ApiError::bad_request(e.to_string()).with_stage(Stage::Ingest))?;

    let _guard = state.lifecycle.lock().await;
    let worker = state.clone();
    let analyzed = blocking(move || worker.pipeline.run(&manifest)).await?.map_err(|e| {
        let status = if e.stage == Stage::Ingest { StatusCode::BAD_REQUEST } else { StatusCode::UNPROCESSABLE_ENTITY };
        ApiError::pipeline(status, e.stage, e.detail)
    })?;

    let ts = now_unix();
    let prov = provenance(&analyzed);
    let records = match &analyzed.labels {
        Some(l) => [LABEL_LUNG, LABEL_LESION].iter().map(|&lab| MeasurementRecord::volume(l, lab, &prov, ts)).collect(),
        None => Vec::new(),
    };
    let summary = summarize(&analyzed);
    let failed = analyzed.segmentation.error.clone();
    let loaded = LoadedCase { analyzed, measurements: Mutex::new(records), scene: Mutex::new(None) };
    state.cases.write().expect("case map lock").insert(summary.id.clone(), Arc::new(loaded));
    log::info!("loaded case {}", summary.id);

    match failed {
        // the case stays loaded so its slices can still be viewed
        Some(reason) => Err(ApiError::pipeline(
            StatusCode::UNPROCESSABLE_ENTITY,
            Stage::Segmentation,
            format!("{reason}; case {} remains loaded for 2D viewing", summary.id),
        )),
        None => Ok(Json(summary).into_response()),
    }
}

pub async fn list_cases(State(state): Shared) -> Json<Vec<CaseSummary>> {
    let cases = state.cases.read().expect("case map lock");
    Json(cases.values().map(|c| summarize(&c.analyzed)).collect())
}

pub async fn case_summary(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<CaseSummary>> {
    Ok(Json(summarize(&state.case(&id)?.analyzed)))
}

pub async fn unload_case(State(state): Shared, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let _guard = state.lifecycle.lock().await;
    match state.cases.write().expect("case map lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(&id)),
    }
}

// ---- images ----

/// Strong ETag over everything that determines the response bytes.
fn etag(case: &LoadedCase, route: &str, canonical: &str) -> String {
    let mut h = fnv::FnvHasher::default();
    let model = case.analyzed.classification.as_ref().map_or("none", |c| c.model_version.as_str());
    for part in [route, &case.analyzed.record.content_hash.to_string(), canonical, model] {
        h.write(part.as_bytes());
        h.write_u8(0);
    }
    format!("\"{:016x}\"", h.finish())
}

fn png_response(headers: &HeaderMap, tag: String, img: ApiResult<SliceImage>, omitted: &[&str]) -> ApiResult<Response> {
    let etag = HeaderValue::from_str(&tag).expect("hex etag is a valid header");
    if headers.get(header::IF_NONE_MATCH).is_some_and(|v| v.as_bytes() == tag.as_bytes()) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
    }
    let bytes = encode_png(&img?).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut resp = Response::new(Body::from(bytes));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    h.insert(header::ETAG, etag);
    if !omitted.is_empty() {
        h.insert(OMITTED_HEADER, HeaderValue::from_str(&omitted.join(",")).expect("ascii names"));
    }
    Ok(resp)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceQuery {
    axis: Option<String>,
    index: Option<usize>,
    wl_lo: Option<f64>,
    wl_hi: Option<f64>,
    outlines: Option<String>,
    heatmap: Option<String>,
    mip: Option<String>,
    /// MIP slab half-width in slices.
    slab: Option<usize>,
}

pub const DEFAULT_SLAB: usize = 5;

fn slice_view(case: &AnalyzedCase, q: &SliceQuery) -> ApiResult<SliceView> {
    let axis = parse_axis(&q.axis)?;
    let len = case.scalar.geometry().axis_len(axis);
    let index = q.index.unwrap_or(len / 2);
    if index >= len {
        return Err(ApiError::bad_request(format!("index {index} out of range for {axis:?} axis of length {len}")));
    }
    let d = WindowLevel::default();
    let window = WindowLevel::new(q.wl_lo.unwrap_or(d.lo()), q.wl_hi.unwrap_or(d.hi()))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mip = flag("mip", &q.mip)?;
    Ok(SliceView {
        axis,
        index,
        window,
        outlines: flag("outlines", &q.outlines)?,
        heatmap: flag("heatmap", &q.heatmap)?.then(HeatmapStyle::default),
        mip_half_width: mip.then_some(q.slab.unwrap_or(DEFAULT_SLAB)),
    })
}

pub async fn slice(
    State(state): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<SliceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let case = state.case(&id)?;
    let mut view = slice_view(&case.analyzed, &query(q)?)?;
    let a = &case.analyzed;
    // graceful degradation: overlays that cannot be drawn are dropped, never fatal
    let mut omitted = Vec::new();
    if view.outlines && a.labels.is_none() {
        view.outlines = false;
        omitted.push("outlines");
    }
    if view.heatmap.is_some() && a.heatmap.is_none() {
        view.heatmap = None;
        omitted.push("heatmap");
    }
    let canonical = serde_json::to_string(&view).expect("view serializes");
    let tag = etag(&case, "slice", &canonical);
    let worker = case.clone();
    let img = blocking(move || {
        let a = &worker.analyzed;
        let hm = match (&a.heatmap, view.heatmap) {
            (Some(h), Some(_)) => Some(h.slice(a.scalar.dims(), view.axis, view.index)),
            _ => None,
        };
        compose_slice(&a.scalar, a.labels.as_ref(), hm.as_ref(), &view).map_err(|e| ApiError::bad_request(e.to_string()))
    })
    .await?;
    png_response(&headers, tag, img, &omitted)
}

pub async fn render(State(state): Shared, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let case = state.case(&id)?;
    let scene: Scene = if body.is_empty() {
        Scene { settings: Default::default(), camera: None, clip: Default::default() }
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid scene: {e}")))?
    };
    let canonical = serde_json::to_string(&scene).expect("scene serializes");
    let tag = etag(&case, "render", &canonical);
    *case.scene.lock().expect("scene lock") = Some(scene.clone());
    let worker = case.clone();
    let img = blocking(move || {
        let a = &worker.analyzed;
        render_scene(&a.scalar, a.labels.as_ref(), &scene).map_err(|e| ApiError::bad_request(e.to_string()))
    })
    .await?;
    png_response(&headers, tag, img, &[])
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapQuery {
    axis: Option<String>,
    index: Option<usize>,
}

pub async fn heatmap_slice(
    State(state): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<HeatmapQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let case = state.case(&id)?;
    let q = query(q)?;
    let a = &case.analyzed;
    let Some(hm) = &a.heatmap else {
        let why = a.classification.as_ref().err().cloned().unwrap_or_else(|| "no heatmap".into());
        return Err(ApiError::unavailable(Stage::Classification, why));
    };
    let axis = parse_axis(&q.axis)?;
    let len = a.scalar.geometry().axis_len(axis);
    let index = q.index.unwrap_or(len / 2);
    if index >= len {
        return Err(ApiError::bad_request(format!("index {index} out of range for {axis:?} axis of length {len}")));
    }
    let style = HeatmapStyle::default();
    let tag = etag(&case, "heatmap", &serde_json::to_string(&(axis, index, style.colormap)).expect("serializes"));
    let map = hm.slice(a.scalar.dims(), axis, index);
    let img = heatmap_image(&map, style.colormap).map_err(|e| ApiError::internal(e.to_string()));
    png_response(&headers, tag, img, &[])
}

// ---- analysis ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformQuery {
    x: f64,
    y: f64,
    z: f64,
    dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformResponse {
    pub point: [f64; 3],
    /// For world→voxel: the nearest voxel, when it lies inside the volume.
    pub voxel: Option<[usize; 3]>,
}

pub async fn transform(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<TransformQuery>, QueryRejection>,
) -> ApiResult<Json<TransformResponse>> {
    let case = state.case(&id)?;
    let q = query(q)?;
    let dir = match q.dir.as_deref().unwrap_or("voxel2world") {
        "voxel2world" => TransformDirection::VoxelToWorld,
        "world2voxel" => TransformDirection::WorldToVoxel,
        other => return Err(ApiError::bad_request(format!("dir must be voxel2world or world2voxel, got {other:?}"))),
    };
    let p = [q.x, q.y, q.z];
    if p.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::bad_request("coordinates must be finite"));
    }
    let g = case.analyzed.scalar.geometry();
    let point = g.transform(p, dir);
    let voxel = match dir {
        TransformDirection::WorldToVoxel => {
            let r = point.map(f64::round);
            (0..3).all(|a| r[a] >= 0.0 && r[a] < g.dims[a] as f64).then(|| r.map(|v| v as usize))
        }
        TransformDirection::VoxelToWorld => None,
    };
    Ok(Json(TransformResponse { point, voxel }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResponse {
    pub p_neg: f64,
    pub p_pos: f64,
    pub attention: Vec<f64>,
    pub model_version: String,
}

pub async fn classification(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<ClassificationResponse>> {
    let case = state.case(&id)?;
    match &case.analyzed.classification {
        Ok(c) => Ok(Json(ClassificationResponse {
            p_neg: c.p_neg,
            p_pos: c.p_pos,
            attention: c.attention.clone(),
            model_version: c.model_version.clone(),
        })),
        Err(reason) => Err(ApiError::unavailable(Stage::Classification, reason.clone())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementsResponse {
    pub denominator: LesionDenominator,
    pub volumes: Option<LesionStats>,
    pub volumes_error: Option<String>,
    pub lung_source: MaskSource,
    pub lesion_source: MaskSource,
    pub records: Vec<MeasurementRecord>,
}

pub async fn measurements(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<MeasurementsResponse>> {
    let case = state.case(&id)?;
    let a = &case.analyzed;
    let records = case.measurements.lock().expect("measurement lock").clone();
    Ok(Json(MeasurementsResponse {
        denominator: state.pipeline.config.lesion_denominator,
        volumes: a.measurements.as_ref().ok().copied(),
        volumes_error: a.measurements.as_ref().err().cloned(),
        lung_source: a.segmentation.lung,
        lesion_source: a.segmentation.lesion,
        records,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRequest {
    p1: [f64; 3],
    p2: [f64; 3],
}

pub async fn measure_linear(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<MeasurementRecord>> {
    let case = state.case(&id)?;
    let req: LinearRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("expected {{p1, p2}}: {e}")))?;
    let record = MeasurementRecord::linear(case.analyzed.scalar.geometry(), req.p1, req.p2, "caliper", now_unix())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    case.measurements.lock().expect("measurement lock").push(record.clone());
    Ok(Json(record))
}

pub async fn presets(State(state): Shared) -> Json<serde_json::Value> {
    Json(serde_json::to_value(&state.presets).expect("presets serialize"))
}
