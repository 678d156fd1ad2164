//! The automatic per-case chain, including the derived-result cache.

use std::path::{Path, PathBuf};

use ctview_core::ingest::nifti::write_nifti_file;
use ctview_core::ingest::{CaseManifest, DerivedCache, NiftiVolume};
use ctview_core::mil::{MilModel, ModelConfig};
use ctview_core::pipeline::{Classifier, MaskSource, Pipeline, PipelineConfig, Stage};
use ctview_core::synth::{generate_case, SynthConfig, SyntheticCase};
use ctview_core::volume::{Geometry, Volume};

fn classifier() -> Classifier {
    Classifier::new(MilModel::<f64>::init(&ModelConfig::toy(), 3).unwrap())
}

fn write_case(dir: &Path, case: &SyntheticCase, with_masks: bool) -> CaseManifest {
    let scalar = dir.join(format!("{}.nii", case.id));
    write_nifti_file(&scalar, &NiftiVolume::Scalar(case.scalar.clone())).unwrap();
    let mask = |name: &str, lv: &ctview_core::LabelVolume| -> Option<PathBuf> {
        let p = dir.join(format!("{}_{name}.nii", case.id));
        write_nifti_file(&p, &NiftiVolume::Label(lv.clone())).unwrap();
        Some(p)
    };
    CaseManifest {
        id: case.id.clone(),
        scalar,
        lung_mask: if with_masks { mask("lung", &case.lung_mask) } else { None },
        lesion_mask: if with_masks { mask("lesion", &case.lesion_mask) } else { None },
        metadata: Default::default(),
    }
}

#[test]
fn masks_from_files_are_not_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let case = generate_case(&SynthConfig::default(), "withmasks", 4, true);
    let pipe = Pipeline::new(PipelineConfig::default(), Some(classifier()), None);
    let out = pipe.run(&write_case(dir.path(), &case, true)).unwrap();
    assert!(!out.record.lung_fallback && !out.record.lesion_fallback);
    assert_eq!((out.segmentation.lung, out.segmentation.lesion), (MaskSource::File, MaskSource::File));
    assert!(out.segmentation.notice.is_none());
    assert_eq!(out.labels.as_ref().unwrap(), &case.composite_labels());
    let c = out.classification.as_ref().unwrap();
    assert!((c.p_neg + c.p_pos - 1.0).abs() < 1e-12);
    assert!((c.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let stats = out.measurements.unwrap();
    assert!(stats.lesion_ml > 0.0 && stats.pct > 0.0);
}

#[test]
fn scalar_only_case_uses_the_flagged_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let case = generate_case(&SynthConfig::default(), "bare", 6, true);
    let pipe = Pipeline::new(PipelineConfig::default(), None, None);
    let out = pipe.run(&write_case(dir.path(), &case, false)).unwrap();
    assert!(out.record.lung_fallback && out.record.lesion_fallback);
    assert_eq!(out.segmentation.lung, MaskSource::Fallback);
    assert!(out.segmentation.notice.as_deref().unwrap().contains("not clinically validated"));
    assert!(out.measurements.is_ok());
    // no model loaded: classification is unavailable, not an error of the case
    assert!(out.classification.is_err());
    assert!(out.heatmap.is_none());
}

#[test]
fn reloading_reuses_the_cached_classification() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let case = generate_case(&SynthConfig::default(), "cached", 8, true);
    let manifest = write_case(dir.path(), &case, true);
    let pipe = Pipeline::new(PipelineConfig::default(), Some(classifier()), Some(DerivedCache::new(&cache)));
    let first = pipe.run(&manifest).unwrap();
    let second = pipe.run(&manifest).unwrap();
    assert_eq!(pipe.model_executions(), 1);
    assert!(!first.from_cache && second.from_cache);
    assert_eq!(first.classification, second.classification);
    assert_eq!(first.heatmap, second.heatmap);

    // a fresh process sharing the cache directory does not run the model either
    let other = Pipeline::new(PipelineConfig::default(), Some(classifier()), Some(DerivedCache::new(&cache)));
    assert!(other.run(&manifest).unwrap().from_cache);
    assert_eq!(other.model_executions(), 0);

    // changing the scalar content is a cache miss
    let mut changed = case.clone();
    changed.scalar = changed.scalar.map(|v| v + 1.0);
    let manifest = write_case(dir.path(), &changed, true);
    let third = pipe.run(&manifest).unwrap();
    assert!(!third.from_cache);
    assert_eq!(pipe.model_executions(), 2);
}

#[test]
fn heatmap_maps_back_onto_the_source_grid() {
    let dir = tempfile::tempdir().unwrap();
    let case = generate_case(&SynthConfig::default(), "hm", 10, true);
    let pipe = Pipeline::new(PipelineConfig::default(), Some(classifier()), None);
    let out = pipe.run(&write_case(dir.path(), &case, true)).unwrap();
    let hm = out.heatmap.unwrap();
    let dims = case.scalar.dims();
    let s = hm.slice(dims, ctview_core::Axis::Axial, dims[2] / 2);
    assert_eq!((s.width, s.height), (dims[0], dims[1]));
    assert!(s.data.iter().all(|v| (0.0..=1.0).contains(v)));
    // outside the lung bounding box the heatmap is zero
    assert_eq!(s.get(0, 0), 0.0);
}

#[test]
fn segmentation_failure_keeps_the_scalar_viewable() {
    let dir = tempfile::tempdir().unwrap();
    let g = Geometry::new([16, 16, 4], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
    let flat = Volume::filled(g, 40.0f64).unwrap();
    let path = dir.path().join("flat.nii");
    write_nifti_file(&path, &NiftiVolume::Scalar(flat.clone())).unwrap();
    let manifest =
        CaseManifest { id: "flat".into(), scalar: path, lung_mask: None, lesion_mask: None, metadata: Default::default() };
    let pipe = Pipeline::new(PipelineConfig::default(), Some(classifier()), None);
    let out = pipe.run(&manifest).unwrap();
    assert!(out.segmentation_failed());
    assert!(out.segmentation.error.is_some());
    assert_eq!(out.scalar, flat);
    assert!(out.classification.is_err() && out.measurements.is_err());
    assert_eq!(pipe.model_executions(), 0);
}

#[test]
fn unreadable_scalar_is_an_ingest_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.nii");
    std::fs::write(&path, b"not a nifti file").unwrap();
    let manifest =
        CaseManifest { id: "junk".into(), scalar: path, lung_mask: None, lesion_mask: None, metadata: Default::default() };
    let err = Pipeline::new(PipelineConfig::default(), None, None).run(&manifest).unwrap_err();
    assert_eq!(err.stage, Stage::Ingest);
}
