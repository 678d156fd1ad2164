//! Case ingestion: NIfTI volumes, per-case JSON manifests, content hashing and
//! the on-disk cache of derived results.

pub mod cache;
pub mod nifti;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, DerivedCache};
pub use nifti::{parse_nifti, write_nifti, Datatype, NiftiError, NiftiVolume};

use crate::volume::{LabelVolume, Volume, LABEL_LESION, LABEL_LUNG};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Nifti(PathBuf, #[source] NiftiError),
    #[error("manifest {0}: {1}")]
    Manifest(PathBuf, String),
    #[error("case id {0:?} is empty or not filesystem-safe")]
    InvalidId(String),
    #[error("{path} is expected to hold a scalar volume, found a label map")]
    NotScalar { path: PathBuf },
    #[error("geometry mismatch between {scalar} and {mask}")]
    GeometryMismatch { scalar: PathBuf, mask: PathBuf },
    #[error("cache directory {0} is not writable: {1}")]
    CacheUnwritable(PathBuf, #[source] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// 64-bit FNV-1a content hash.
pub fn content_hash(parts: &[&[u8]]) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    for p in parts {
        h.write(p);
    }
    h.finish()
}

/// One JSON document per case. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub id: String,
    pub scalar: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lung_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_mask: Option<PathBuf>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl CaseManifest {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let m: CaseManifest =
            serde_json::from_str(text).map_err(|e| IngestError::Manifest(origin.to_path_buf(), e.to_string()))?;
        if !is_safe_id(&m.id) {
            return Err(IngestError::InvalidId(m.id));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::from_json(&text, path)?.resolved(base))
    }

    /// Make relative paths absolute against `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.scalar);
        if let Some(p) = self.lung_mask.as_mut() {
            fix(p);
        }
        if let Some(p) = self.lesion_mask.as_mut() {
            fix(p);
        }
        self
    }
}

/// A loaded case. `derived` results are attached by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub id: String,
    pub scalar_path: PathBuf,
    pub lung_mask_path: Option<PathBuf>,
    pub lesion_mask_path: Option<PathBuf>,
    pub metadata: BTreeMap<String, String>,
    pub lung_fallback: bool,
    pub lesion_fallback: bool,
    /// FNV-1a over the bytes of every input file, in manifest order.
    pub content_hash: u64,
}

#[derive(Debug, Clone)]
pub struct CaseVolumes {
    pub scalar: Volume<f64>,
    pub lung: Option<LabelVolume>,
    pub lesion: Option<LabelVolume>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| IngestError::Io(path.to_path_buf(), e))
}

/// Read every file a manifest names and validate co-registration.
pub fn load_case(manifest: &CaseManifest) -> Result<(CaseRecord, CaseVolumes)> {
    if !is_safe_id(&manifest.id) {
        return Err(IngestError::InvalidId(manifest.id.clone()));
    }
    let scalar_bytes = read_bytes(&manifest.scalar)?;
    let scalar = match parse_nifti(&scalar_bytes).map_err(|e| IngestError::Nifti(manifest.scalar.clone(), e))? {
        NiftiVolume::Scalar(v) => v,
        NiftiVolume::Label(_) => return Err(IngestError::NotScalar { path: manifest.scalar.clone() }),
    };
    let mut hashed: Vec<Vec<u8>> = vec![scalar_bytes];

    let mut load_mask = |path: &Option<PathBuf>, label: u8| -> Result<Option<LabelVolume>> {
        let Some(path) = path else { return Ok(None) };
        let bytes = read_bytes(path)?;
        let mask = parse_nifti(&bytes).map_err(|e| IngestError::Nifti(path.clone(), e))?.into_mask(label);
        if !mask.geometry().same_grid(scalar.geometry()) {
            return Err(IngestError::GeometryMismatch { scalar: manifest.scalar.clone(), mask: path.clone() });
        }
        hashed.push(bytes);
        // masks inherit the scalar's origin so downstream geometry compares equal
        Ok(Some(mask.with_geometry(*scalar.geometry()).expect("same length")))
    };
    let lung = load_mask(&manifest.lung_mask, LABEL_LUNG)?;
    let lesion = load_mask(&manifest.lesion_mask, LABEL_LESION)?;

    let parts: Vec<&[u8]> = hashed.iter().map(|b| b.as_slice()).collect();
    let record = CaseRecord {
        id: manifest.id.clone(),
        scalar_path: manifest.scalar.clone(),
        lung_mask_path: manifest.lung_mask.clone(),
        lesion_mask_path: manifest.lesion_mask.clone(),
        metadata: manifest.metadata.clone(),
        lung_fallback: lung.is_none(),
        lesion_fallback: lesion.is_none(),
        content_hash: content_hash(&parts),
    };
    Ok((record, CaseVolumes { scalar, lung, lesion }))
}
