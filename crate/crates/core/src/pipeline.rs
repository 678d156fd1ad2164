//! The automatic per-case chain: ingest, masks (from files or the fallback
//! segmenters), classification with Grad-CAM, and volumetry.
//!
//! A segmentation failure does not fail the case: the scalar volume stays
//! available for 2D viewing and the later stages report why they are missing.
//! Classification results are cached on disk keyed by input content and model
//! version, so reloading a case does not run the model again.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{load_case, CacheKey, CaseManifest, CaseRecord, DerivedCache, IngestError};
use crate::measure::{lesion_stats, LesionDenominator, LesionStats};
use crate::mil::{model_version, predict_with_heatmap, Bag, MilModel, PredictionResult};
use crate::segment::{localize_lesions, segment_lungs, SegmenterConfig, FALLBACK_NOTICE};
use crate::volume::{
    plane_to_voxel, prepare_classifier_input, Axis, LabelVolume, PreprocessGeometry, Slice2, Volume, VolumeError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Segmentation,
    Classification,
    Measurement,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Ingest => "ingest",
            Stage::Segmentation => "segmentation",
            Stage::Classification => "classification",
            Stage::Measurement => "measurement",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} failed: {detail}")]
pub struct PipelineError {
    pub stage: Stage,
    pub detail: String,
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        Self { stage: Stage::Ingest, detail: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub segmenter: SegmenterConfig,
    pub lesion_denominator: LesionDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    File,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationInfo {
    pub lung: MaskSource,
    pub lesion: MaskSource,
    /// Present when any mask came from the fallback segmenters.
    pub notice: Option<String>,
    /// Why segmentation failed, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub p_neg: f64,
    pub p_pos: f64,
    pub attention: Vec<f64>,
    pub model_version: String,
}

/// A loaded classifier and its version tag.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: Arc<MilModel<f64>>,
    pub version: String,
}

impl Classifier {
    pub fn new(model: MilModel<f64>) -> Self {
        let version = model_version(&model);
        Self { model: Arc::new(model), version }
    }
}

/// Grad-CAM volume in classifier-input space plus the mapping back.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub field: Vec<f32>,
    pub geometry: PreprocessGeometry,
}

impl Heatmap {
    /// The heatmap resampled onto one plane of the source grid.
    pub fn slice(&self, dims: [usize; 3], axis: Axis, index: usize) -> Slice2<f32> {
        let (ca, ra) = axis.in_plane();
        let (w, h) = (dims[ca], dims[ra]);
        let data = (0..w * h)
            .map(|i| self.geometry.sample(&self.field, plane_to_voxel(axis, i % w, i / w, index)))
            .collect();
        Slice2 { width: w, height: h, data, spacing: (1.0, 1.0) }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzedCase {
    pub record: CaseRecord,
    pub scalar: Volume<f64>,
    /// Composite labels (0 context, 1 lung, 2 lesion); `None` when segmentation failed.
    pub labels: Option<LabelVolume>,
    pub segmentation: SegmentationInfo,
    pub classification: Result<Classification, String>,
    pub heatmap: Option<Heatmap>,
    pub measurements: Result<LesionStats, String>,
    /// True when the classification came from the derived-result cache.
    pub from_cache: bool,
}

impl AnalyzedCase {
    pub fn segmentation_failed(&self) -> bool {
        self.labels.is_none()
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    classifier: Option<Classifier>,
    cache: Option<DerivedCache>,
    executions: AtomicUsize,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, classifier: Option<Classifier>, cache: Option<DerivedCache>) -> Self {
        Self { config, classifier, cache, executions: AtomicUsize::new(0) }
    }

    pub fn classifier(&self) -> Option<&Classifier> {
        self.classifier.as_ref()
    }

    /// Number of times the classifier has actually been run.
    pub fn model_executions(&self) -> usize {
        self.executions.load(Ordering::SeqCst)
    }

    pub fn run(&self, manifest: &CaseManifest) -> Result<AnalyzedCase, PipelineError> {
        let (record, volumes) = load_case(manifest)?;
        let scalar = volumes.scalar;
        let seg = &self.config.segmenter;

        let lung_source = if volumes.lung.is_some() { MaskSource::File } else { MaskSource::Fallback };
        let lesion_source = if volumes.lesion.is_some() { MaskSource::File } else { MaskSource::Fallback };
        let labels: Result<LabelVolume, String> = (|| {
            let lung = match volumes.lung {
                Some(l) => l,
                None => segment_lungs(&scalar, seg).map_err(|e| e.to_string())?,
            };
            match volumes.lesion {
                Some(lesion) => LabelVolume::compose(&lung, Some(&lesion)).map_err(|e| e.to_string()),
                None => localize_lesions(&scalar, &lung, seg).map_err(|e| e.to_string()),
            }
        })();
        let segmentation = SegmentationInfo {
            lung: lung_source,
            lesion: lesion_source,
            notice: (lung_source == MaskSource::Fallback || lesion_source == MaskSource::Fallback)
                .then(|| FALLBACK_NOTICE.to_string()),
            error: labels.as_ref().err().cloned(),
        };
        let labels = match labels {
            Ok(l) => l,
            Err(reason) => {
                log::warn!("case {}: segmentation failed: {reason}", record.id);
                let why = format!("segmentation failed: {reason}");
                return Ok(AnalyzedCase {
                    record,
                    scalar,
                    labels: None,
                    segmentation,
                    classification: Err(why.clone()),
                    heatmap: None,
                    measurements: Err(why),
                    from_cache: false,
                });
            }
        };

        let measurements = lesion_stats(&labels, self.config.lesion_denominator).map_err(|e| e.to_string());
        let (classification, heatmap, from_cache) = match self.classify(&record, &scalar, &labels) {
            Ok((c, h, cached)) => (Ok(c), Some(h), cached),
            Err(e) => (Err(e), None, false),
        };
        Ok(AnalyzedCase { record, scalar, labels: Some(labels), segmentation, classification, heatmap, measurements, from_cache })
    }

    fn classify(
        &self,
        record: &CaseRecord,
        scalar: &Volume<f64>,
        labels: &LabelVolume,
    ) -> Result<(Classification, Heatmap, bool), String> {
        let Some(classifier) = &self.classifier else {
            return Err("no classifier model is loaded".into());
        };
        let key = CacheKey {
            case_id: record.id.clone(),
            content_hash: record.content_hash,
            model_version: classifier.version.clone(),
        };
        if let Some(cache) = &self.cache {
            match cache.load(&key) {
                Ok(Some(bytes)) => match decode_derived(&bytes) {
                    Some((c, h)) => return Ok((c, h, true)),
                    None => log::warn!("case {}: undecodable cache entry, recomputing", record.id),
                },
                Ok(None) => {}
                Err(e) => log::warn!("case {}: cache lookup failed: {e}", record.id),
            }
        }
        let input = prepare_classifier_input(scalar, labels).map_err(|e: VolumeError| e.to_string())?;
        let bag = Bag::from_input(&record.id, 0, &input).map_err(|e| e.to_string())?;
        self.executions.fetch_add(1, Ordering::SeqCst);
        let result = predict_with_heatmap(&classifier.model, &bag).map_err(|e| e.to_string())?;
        let classification = Classification {
            p_neg: result.p_neg,
            p_pos: result.p_pos,
            attention: result.attention.clone(),
            model_version: classifier.version.clone(),
        };
        let heatmap = Heatmap { field: result.heatmap.clone(), geometry: input.geometry };
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.store(&key, &encode_derived(&result, &classification, &heatmap)) {
                log::warn!("case {}: could not cache classification: {e}", record.id);
            }
        }
        Ok((classification, heatmap, false))
    }
}

#[derive(Serialize, Deserialize)]
struct DerivedHeader {
    classification: Classification,
    geometry: PreprocessGeometry,
    slices: usize,
    size: usize,
}

/// `u64 header length | JSON header | f32 LE heatmap`.
fn encode_derived(result: &PredictionResult, classification: &Classification, heatmap: &Heatmap) -> Vec<u8> {
    let header = DerivedHeader {
        classification: classification.clone(),
        geometry: heatmap.geometry,
        slices: result.slices,
        size: result.size,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * heatmap.field.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &heatmap.field {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_derived(bytes: &[u8]) -> Option<(Classification, Heatmap)> {
    let len = u64::from_le_bytes(bytes.get(..8)?.try_into().ok()?) as usize;
    let header: DerivedHeader = serde_json::from_slice(bytes.get(8..8 + len)?).ok()?;
    let rest = bytes.get(8 + len..)?;
    if rest.len() != 4 * header.slices * header.size * header.size {
        return None;
    }
    let field = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Some((header.classification, Heatmap { field, geometry: header.geometry }))
}
