//! `ctview`: batch entry points for every pipeline stage, the evaluation
//! harness and the HTTP service.

mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ctview", version, about = "Chest-CT analysis workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a NIfTI volume or case manifest; optionally rewrite the volume.
    Ingest(IngestArgs),
    /// Run the fallback lung and lesion segmenters on a case.
    Segment(SegmentArgs),
    /// Classify one case and print probabilities, attention and model version.
    Classify(ClassifyArgs),
    /// Raycast a scene (the render endpoint's JSON body) to PNG.
    Render(RenderArgs),
    /// Lung-masked thick-slab maximum intensity projection to PNG.
    Mip(MipArgs),
    /// Lung/lesion volumetry and optional caliper distance.
    Measure(MeasureArgs),
    /// Generate a synthetic phantom dataset.
    Synth(SynthArgs),
    /// Train a classifier on a dataset directory.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation with ROC and bootstrap intervals.
    Eval(EvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// NIfTI file (.nii or .nii.gz) or case manifest (.json).
    #[arg(long)]
    pub input: PathBuf,
    /// Write the volume back out as NIfTI.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Storage type for a rewritten scalar volume.
    #[arg(long, value_enum, default_value_t = DatatypeArg::Float32)]
    pub datatype: DatatypeArg,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DatatypeArg {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

#[derive(Args)]
pub struct SegmentArgs {
    /// Case manifest.
    #[arg(long)]
    pub case: PathBuf,
    /// Directory for `<id>_lung.nii` and `<id>_lesion.nii`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Segmenter configuration JSON; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub case: PathBuf,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Derived-result cache directory.
    #[arg(long, env = "CTVIEW_CACHE")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct RenderArgs {
    /// Scene JSON: {settings, camera, clip}, all optional.
    #[arg(long)]
    pub scene: PathBuf,
    /// Case manifest; a synthetic phantom is rendered when omitted.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Seed of the phantom used without --case.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Axial,
    Coronal,
    Sagittal,
}

#[derive(Args)]
pub struct MipArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, value_enum, default_value_t = AxisArg::Axial)]
    pub axis: AxisArg,
    /// Slab centre; the middle slice when omitted.
    #[arg(long)]
    pub index: Option<usize>,
    /// Slab half-width in slices.
    #[arg(long, default_value_t = 5)]
    pub slab: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub wl_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub wl_hi: Option<f64>,
    /// Draw lung and lesion outlines.
    #[arg(long)]
    pub outlines: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DenominatorArg {
    LungAndLesion,
    LungOnly,
}

#[derive(Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub case: PathBuf,
    /// First caliper point as voxel coordinates `x,y,z`.
    #[arg(long, requires = "p2")]
    pub p1: Option<String>,
    #[arg(long, requires = "p1")]
    pub p2: Option<String>,
    #[arg(long, value_enum, default_value_t = DenominatorArg::LungAndLesion)]
    pub denominator: DenominatorArg,
    /// Export the measurement records as a JSON array.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub positive_fraction: f64,
}

#[derive(Args, Clone)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the attention-smoothness penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth` (or any directory with an index.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 2000)]
    pub bootstrap: usize,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, env = "CTVIEW_HOST", default_value = ctview_server::DEFAULT_HOST)]
    pub host: String,
    #[arg(long, env = "CTVIEW_PORT", default_value_t = ctview_server::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "CTVIEW_CACHE")]
    pub cache_dir: Option<PathBuf>,
    /// Classifier checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory of transfer-function preset JSON files.
    #[arg(long)]
    pub presets_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Segment(a) => commands::segment(a),
        Command::Classify(a) => commands::classify(a),
        Command::Render(a) => commands::render(a),
        Command::Mip(a) => commands::mip(a),
        Command::Measure(a) => commands::measure(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {} stage failed: {}", f.stage, f.detail);
            ExitCode::FAILURE
        }
    }
}
