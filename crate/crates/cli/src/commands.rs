//! Subcommand implementations. Each returns a [`Failure`] naming the stage
//! that went wrong; `main` prints it and exits 1.

use std::io::Write;
use std::path::Path;

use ctview_core::ingest::nifti::{read_nifti_file, write_labels, write_scalar_as};
use ctview_core::ingest::{load_case, CaseManifest, Datatype, DerivedCache, NiftiVolume};
use ctview_core::measure::{lesion_stats, now_unix, LesionDenominator, MeasurementRecord};
use ctview_core::mil::{cross_validate, load_checkpoint, roc_curve, save_checkpoint, train as fit, CvConfig, TrainConfig};
use ctview_core::pipeline::{Classifier, Pipeline, PipelineConfig, Stage};
use ctview_core::render::{compose_slice, encode_png, render_scene, Scene, SliceView};
use ctview_core::segment::{localize_lesions, segment_lungs, SegmenterConfig, FALLBACK_NOTICE};
use ctview_core::synth::{generate_case, generate_synthetic_dataset, SynthConfig};
use ctview_core::volume::{Axis, LabelVolume, WindowLevel, LABEL_LESION, LABEL_LUNG};
use ctview_core::SliceImage;
use serde_json::json;

use crate::dataset;
use crate::{
    AxisArg, ClassifyArgs, DatatypeArg, DenominatorArg, EvalArgs, IngestArgs, MeasureArgs, MipArgs, RenderArgs,
    SegmentArgs, ServeArgs, SynthArgs, TrainArgs, TrainingFlags,
};

#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub detail: String,
}

impl Failure {
    fn new(stage: &'static str, detail: impl Into<String>) -> Self {
        Self { stage, detail: detail.into() }
    }
    pub fn ingest(detail: impl Into<String>) -> Self {
        Self::new("ingest", detail)
    }
    pub fn segmentation(detail: impl Into<String>) -> Self {
        Self::new("segmentation", detail)
    }
    pub fn io(detail: impl Into<String>) -> Self {
        Self::new("output", detail)
    }
    fn stage(stage: Stage, detail: impl Into<String>) -> Self {
        let name = match stage {
            Stage::Ingest => "ingest",
            Stage::Segmentation => "segmentation",
            Stage::Classification => "classification",
            Stage::Measurement => "measurement",
        };
        Self::new(name, detail)
    }
}

type Outcome = Result<(), Failure>;

/// Prints to stdout; a closed pipe (`ctview ... | head`) is not an error.
fn print_json(v: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(v).expect("output serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write_png(path: &Path, img: &SliceImage) -> Outcome {
    let bytes = encode_png(img).map_err(|e| Failure::new("render", e.to_string()))?;
    write_file(path, &bytes)
}

fn read_manifest(path: &Path) -> Result<CaseManifest, Failure> {
    CaseManifest::read(path).map_err(|e| Failure::ingest(e.to_string()))
}

fn axis(a: AxisArg) -> Axis {
    match a {
        AxisArg::Axial => Axis::Axial,
        AxisArg::Coronal => Axis::Coronal,
        AxisArg::Sagittal => Axis::Sagittal,
    }
}

pub fn ingest(a: IngestArgs) -> Outcome {
    if a.input.extension().is_some_and(|e| e == "json") {
        let (record, volumes) = load_case(&read_manifest(&a.input)?).map_err(|e| Failure::ingest(e.to_string()))?;
        let g = volumes.scalar.geometry();
        print_json(&json!({ "record": record, "dims": g.dims, "spacing": g.spacing, "origin": g.origin }));
        return Ok(());
    }
    let vol = read_nifti_file(&a.input).map_err(|e| Failure::ingest(e.to_string()))?;
    let g = *vol.geometry();
    let summary = match &vol {
        NiftiVolume::Scalar(s) => {
            let (lo, hi) = s.min_max();
            json!({ "kind": "scalar", "dims": g.dims, "spacing": g.spacing, "origin": g.origin, "min": lo, "max": hi })
        }
        NiftiVolume::Label(l) => json!({
            "kind": "label", "dims": g.dims, "spacing": g.spacing, "origin": g.origin,
            "voxels": { "lung": l.count(LABEL_LUNG), "lesion": l.count(LABEL_LESION) }
        }),
    };
    if let Some(out) = &a.out {
        let dt = match a.datatype {
            DatatypeArg::Uint8 => Datatype::Uint8,
            DatatypeArg::Int16 => Datatype::Int16,
            DatatypeArg::Int32 => Datatype::Int32,
            DatatypeArg::Float32 => Datatype::Float32,
            DatatypeArg::Float64 => Datatype::Float64,
        };
        let bytes = match &vol {
            NiftiVolume::Scalar(s) => write_scalar_as(s, dt),
            NiftiVolume::Label(l) => write_labels(l),
        };
        write_file(out, &bytes)?;
    }
    print_json(&summary);
    Ok(())
}

pub fn segment(a: SegmentArgs) -> Outcome {
    let cfg: SegmenterConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::new("config", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::new("config", format!("{}: {e}", p.display())))?
        }
        None => SegmenterConfig::default(),
    };
    let manifest = read_manifest(&a.case)?;
    let (record, v) = load_case(&manifest).map_err(|e| Failure::ingest(e.to_string()))?;
    let lung = segment_lungs(&v.scalar, &cfg).map_err(|e| Failure::segmentation(e.to_string()))?;
    let labels = localize_lesions(&v.scalar, &lung, &cfg).map_err(|e| Failure::segmentation(e.to_string()))?;
    let g = *labels.geometry();
    let only = |keep: u8| {
        LabelVolume::new(g, labels.labels().iter().map(|&l| if l == keep { keep } else { 0 }).collect())
            .expect("subset of valid labels")
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::io(e.to_string()))?;
    let lung_path = a.out_dir.join(format!("{}_lung.nii", record.id));
    let lesion_path = a.out_dir.join(format!("{}_lesion.nii", record.id));
    // the lung file keeps lesions as lung tissue, like externally supplied masks
    write_file(&lung_path, &write_labels(&lung))?;
    write_file(&lesion_path, &write_labels(&only(LABEL_LESION)))?;
    print_json(&json!({
        "id": record.id,
        "notice": FALLBACK_NOTICE,
        "lung_voxels": labels.count(LABEL_LUNG) + labels.count(LABEL_LESION),
        "lesion_voxels": labels.count(LABEL_LESION),
        "lung_mask": lung_path,
        "lesion_mask": lesion_path,
    }));
    Ok(())
}

pub fn classify(a: ClassifyArgs) -> Outcome {
    let manifest = read_manifest(&a.case)?;
    let model = load_checkpoint::<f64>(&a.model).map_err(|e| Failure::new("model", e.to_string()))?;
    let pipe = Pipeline::new(PipelineConfig::default(), Some(Classifier::new(model)), a.cache_dir.map(DerivedCache::new));
    let case = pipe.run(&manifest).map_err(|e| Failure::stage(e.stage, e.detail))?;
    if let Some(reason) = &case.segmentation.error {
        return Err(Failure::segmentation(reason.clone()));
    }
    let c = case.classification.map_err(|e| Failure::stage(Stage::Classification, e))?;
    print_json(&json!({
        "id": case.record.id,
        "p_neg": c.p_neg,
        "p_pos": c.p_pos,
        "attention": c.attention,
        "model_version": c.model_version,
        "from_cache": case.from_cache,
        "segmentation": case.segmentation,
    }));
    Ok(())
}

pub fn render(a: RenderArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.scene).map_err(|e| Failure::new("config", format!("{}: {e}", a.scene.display())))?;
    let scene: Scene =
        serde_json::from_str(&text).map_err(|e| Failure::new("config", format!("{}: {e}", a.scene.display())))?;
    let (scalar, labels) = match &a.case {
        Some(p) => {
            let (scalar, labels) = dataset::case_labels(&read_manifest(p)?)?;
            (scalar, Some(labels))
        }
        None => {
            let case = generate_case(&SynthConfig::default(), "phantom", a.seed, true);
            let labels = case.composite_labels();
            (case.scalar, Some(labels))
        }
    };
    let img = render_scene(&scalar, labels.as_ref(), &scene).map_err(|e| Failure::new("render", e.to_string()))?;
    write_png(&a.out, &img)
}

/// Scalar plus labels, with labels absent when segmentation fails.
fn analyzed(path: &Path) -> Result<ctview_core::pipeline::AnalyzedCase, Failure> {
    let pipe = Pipeline::new(PipelineConfig::default(), None, None);
    pipe.run(&read_manifest(path)?).map_err(|e| Failure::stage(e.stage, e.detail))
}

pub fn mip(a: MipArgs) -> Outcome {
    let case = analyzed(&a.case)?;
    let ax = axis(a.axis);
    let len = case.scalar.geometry().axis_len(ax);
    let d = WindowLevel::default();
    let window = WindowLevel::new(a.wl_lo.unwrap_or(d.lo()), a.wl_hi.unwrap_or(d.hi()))
        .map_err(|e| Failure::new("render", e.to_string()))?;
    let view = SliceView {
        axis: ax,
        index: a.index.unwrap_or(len / 2),
        window,
        outlines: a.outlines,
        heatmap: None,
        mip_half_width: Some(a.slab),
    };
    let img = compose_slice(&case.scalar, case.labels.as_ref(), None, &view)
        .map_err(|e| Failure::new("render", e.to_string()))?;
    write_png(&a.out, &img)
}

fn parse_point(s: &str) -> Result<[f64; 3], Failure> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()
        .map_err(|e| Failure::new("measurement", format!("point {s:?}: {e}")))?;
    v.try_into().map_err(|_| Failure::new("measurement", format!("point {s:?} needs three coordinates")))
}

pub fn measure(a: MeasureArgs) -> Outcome {
    let case = analyzed(&a.case)?;
    let denom = match a.denominator {
        DenominatorArg::LungAndLesion => LesionDenominator::LungAndLesion,
        DenominatorArg::LungOnly => LesionDenominator::LungOnly,
    };
    let ts = now_unix();
    let prov = case.segmentation.notice.clone().unwrap_or_else(|| "mask file".into());
    let mut records = Vec::new();
    let volumes = match &case.labels {
        Some(l) => {
            records.push(MeasurementRecord::volume(l, LABEL_LUNG, &prov, ts));
            records.push(MeasurementRecord::volume(l, LABEL_LESION, &prov, ts));
            Some(lesion_stats(l, denom).map_err(|e| Failure::new("measurement", e.to_string()))?)
        }
        None if a.p1.is_none() => {
            return Err(Failure::segmentation(case.segmentation.error.unwrap_or_default()));
        }
        None => None,
    };
    if let (Some(p1), Some(p2)) = (&a.p1, &a.p2) {
        let r = MeasurementRecord::linear(case.scalar.geometry(), parse_point(p1)?, parse_point(p2)?, "caliper", ts)
            .map_err(|e| Failure::new("measurement", e.to_string()))?;
        records.push(r);
    }
    if let Some(out) = &a.out {
        write_file(out, serde_json::to_string_pretty(&records).expect("records serialize").as_bytes())?;
    }
    print_json(&json!({ "id": case.record.id, "denominator": denom, "volumes": volumes, "records": records }));
    Ok(())
}

pub fn synth(a: SynthArgs) -> Outcome {
    let cfg = SynthConfig { positive_fraction: a.positive_fraction, ..SynthConfig::default() };
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::io(format!("{}: {e}", a.out.display())))?;
    let cases = generate_synthetic_dataset(a.cases, a.seed, &cfg);
    let index: Vec<dataset::IndexEntry> =
        cases.iter().map(|c| dataset::write_case(&a.out, c)).collect::<Result<_, _>>()?;
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    write_file(&a.out.join(dataset::INDEX), text.as_bytes())?;
    let positives = index.iter().filter(|e| e.label == 1).count();
    print_json(&json!({ "cases": index.len(), "positives": positives, "seed": a.seed, "out": a.out }));
    Ok(())
}

fn train_config(f: &TrainingFlags) -> TrainConfig {
    let d = TrainConfig::toy();
    TrainConfig {
        seed: f.seed,
        epochs: f.epochs.unwrap_or(d.epochs),
        lambda: f.lambda.unwrap_or(d.lambda),
        learning_rate: f.learning_rate.unwrap_or(d.learning_rate),
        batch_size: f.batch_size.unwrap_or(d.batch_size),
        augment: !f.no_augment,
        ..d
    }
}

pub fn train(a: TrainArgs) -> Outcome {
    let bags = dataset::load_bags(&a.data)?;
    let cfg = train_config(&a.training);
    let outcome = fit::<f64>(&bags, &cfg).map_err(|e| Failure::new("training", e.to_string()))?;
    save_checkpoint(&outcome.model, &a.out).map_err(|e| Failure::io(e.to_string()))?;
    print_json(&json!({
        "cases": bags.len(),
        "model_version": ctview_core::mil::model_version(&outcome.model),
        "config": cfg,
        "history": outcome.history,
    }));
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let bags = dataset::load_bags(&a.data)?;
    let cfg = train_config(&a.training);
    let cv = CvConfig { folds: a.folds, seed: a.training.seed, bootstrap_resamples: a.bootstrap, ..CvConfig::default() };
    let report = cross_validate::<f64>(&bags, &cfg, &cv).map_err(|e| Failure::new("evaluation", e.to_string()))?;
    let scores: Vec<f64> = report.predictions.iter().map(|p| p.p_pos).collect();
    let labels: Vec<u8> = report.predictions.iter().map(|p| p.label).collect();
    let roc = roc_curve(&scores, &labels).map_err(|e| Failure::new("evaluation", e.to_string()))?;
    let out = json!({
        "cases": bags.len(),
        "folds": a.folds,
        "config": cfg,
        "pooled": report.pooled,
        "per_fold": report.folds,
        "roc": roc,
        "predictions": report.predictions,
    });
    if let Some(path) = &a.out {
        write_file(path, serde_json::to_string_pretty(&out).expect("report serializes").as_bytes())?;
    }
    print_json(&out);
    Ok(())
}

pub fn serve(a: ServeArgs) -> Outcome {
    let cfg = ctview_server::ServerConfig {
        host: Some(a.host),
        port: Some(a.port),
        cache_dir: a.cache_dir,
        model: a.model,
        presets_dir: a.presets_dir,
        pipeline: PipelineConfig::default(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new("serve", e.to_string()))?;
    rt.block_on(ctview_server::serve(cfg)).map_err(|e| Failure::new("serve", e))
}
