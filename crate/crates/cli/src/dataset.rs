//! Dataset directories: one manifest plus NIfTI files per case and an
//! `index.json` listing ids, labels and manifests.

use std::path::{Path, PathBuf};

use ctview_core::ingest::nifti::write_nifti_file;
use ctview_core::ingest::{load_case, CaseManifest, NiftiVolume};
use ctview_core::mil::Bag;
use ctview_core::segment::{localize_lesions, segment_lungs, SegmenterConfig};
use ctview_core::synth::SyntheticCase;
use ctview_core::volume::{prepare_classifier_input, LabelVolume};
use serde::{Deserialize, Serialize};

use crate::commands::Failure;

pub const INDEX: &str = "index.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub label: u8,
    /// Relative to the dataset directory.
    pub manifest: PathBuf,
}

/// Write one synthetic case with its truth masks and return its index entry.
pub fn write_case(dir: &Path, case: &SyntheticCase) -> Result<IndexEntry, Failure> {
    let io = |e: std::io::Error| Failure::io(e.to_string());
    let name = |suffix: &str| format!("{}_{suffix}.nii", case.id);
    write_nifti_file(&dir.join(name("ct")), &NiftiVolume::Scalar(case.scalar.clone())).map_err(io)?;
    write_nifti_file(&dir.join(name("lung")), &NiftiVolume::Label(case.lung_mask.clone())).map_err(io)?;
    write_nifti_file(&dir.join(name("lesion")), &NiftiVolume::Label(case.lesion_mask.clone())).map_err(io)?;
    let manifest = CaseManifest {
        id: case.id.clone(),
        scalar: name("ct").into(),
        lung_mask: Some(name("lung").into()),
        lesion_mask: Some(name("lesion").into()),
        metadata: [("label".to_string(), case.label.to_string()), ("source".into(), "synthetic phantom".into())]
            .into_iter()
            .collect(),
    };
    let file = format!("{}.json", case.id);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(&file), text).map_err(io)?;
    Ok(IndexEntry { id: case.id.clone(), label: case.label, manifest: file.into() })
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>, Failure> {
    let path = dir.join(INDEX);
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::ingest(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::ingest(format!("{}: {e}", path.display())))
}

/// Composite labels for a case: mask files when present, fallback otherwise.
pub fn case_labels(manifest: &CaseManifest) -> Result<(ctview_core::ScalarVolume, LabelVolume), Failure> {
    let (_, v) = load_case(manifest).map_err(|e| Failure::ingest(e.to_string()))?;
    let cfg = SegmenterConfig::default();
    let seg = |e: ctview_core::segment::SegmentError| Failure::segmentation(e.to_string());
    let lung = match v.lung {
        Some(l) => l,
        None => segment_lungs(&v.scalar, &cfg).map_err(seg)?,
    };
    let labels = match v.lesion {
        Some(lesion) => LabelVolume::compose(&lung, Some(&lesion)).map_err(|e| Failure::segmentation(e.to_string()))?,
        None => localize_lesions(&v.scalar, &lung, &cfg).map_err(seg)?,
    };
    Ok((v.scalar, labels))
}

/// Classifier bags for every indexed case.
pub fn load_bags(dir: &Path) -> Result<Vec<Bag>, Failure> {
    read_index(dir)?
        .into_iter()
        .map(|entry| {
            let manifest = CaseManifest::read(&dir.join(&entry.manifest)).map_err(|e| Failure::ingest(e.to_string()))?;
            let (scalar, labels) = case_labels(&manifest)?;
            let input = prepare_classifier_input(&scalar, &labels).map_err(|e| Failure::ingest(e.to_string()))?;
            Bag::from_input(&entry.id, entry.label, &input).map_err(|e| Failure::ingest(e.to_string()))
        })
        .collect()
}
