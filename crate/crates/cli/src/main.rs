mod commands;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::CliError;

#[derive(Parser, Debug)]
#[command(name = "icedual", version, about = "Dual-encoder MSI/SAR sea-ice segmentation pipeline")]
struct Cli {
    /// Worker threads (1 = fully deterministic). Defaults to ICEDUAL_THREADS or 1.
    #[arg(long, global = true, env = "ICEDUAL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus of MSI/SAR scene pairs.
    Synth(SynthArgs),
    /// Build a reference label from an MSI scene and water polygons.
    Label(LabelArgs),
    /// Pair scenes, cut patches, select dataset variants.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Build a network from a model config and print its shape report.
    Build(BuildArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Hyperparameter search.
    Sweep(SweepArgs),
    /// Tiled prediction over a scene.
    Predict(PredictArgs),
    /// Score predictions against reference labels.
    Eval(EvalArgs),
    /// Permute-and-predict modality importance.
    Permute(PermuteArgs),
    /// Downscale an ice mask to concentration cells.
    Sic(SicArgs),
    /// Compare two concentration grids.
    SicCompare(SicCompareArgs),
    /// Collect run directories into tables and figures.
    Report(ReportArgs),
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// JSON file with corpus parameter ranges.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene side in SAR pixels (overrides the config file).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct LabelArgs {
    #[arg(long)]
    pub msi: PathBuf,
    /// Polygon file; water-under-cloud polygons are forced to water.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub vis_band: usize,
    #[arg(long, default_value_t = icedual::labeling::VISIBLE_THRESHOLD)]
    pub threshold: f32,
    /// Also write the SWIR cloud mask here.
    #[arg(long)]
    pub cloud_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub swir_band: usize,
    #[arg(long, default_value_t = icedual::labeling::CLOUD_THRESHOLD)]
    pub cloud_threshold: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Pair MSI and SAR scenes from a metadata CSV.
    Pair(PairArgs),
    /// Cut co-registered patches from one scene pair.
    Patches(PatchesArgs),
    /// Select the all/edge/equal subset of a manifest and split it.
    Variant(VariantArgs),
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PairArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value_t = icedual::dataset::MAX_LAG_HOURS)]
    pub max_lag_hours: f64,
    #[arg(long, default_value_t = icedual::dataset::DRIFT_BUDGET_M)]
    pub drift_budget_m: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PatchesArgs {
    #[arg(long)]
    pub sar: PathBuf,
    #[arg(long)]
    pub msi: PathBuf,
    #[arg(long)]
    pub label: PathBuf,
    /// Patch side in SAR pixels.
    #[arg(long, default_value_t = 720)]
    pub patch: usize,
    #[arg(long, default_value = "msi")]
    pub msi_id: String,
    #[arg(long, default_value = "sar")]
    pub sar_id: String,
    /// Dihedral augmentation: none, five or all.
    #[arg(long, default_value = "none")]
    pub augment: String,
    /// Output directory for patch rasters and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct VariantArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "all")]
    pub kind: String,
    /// Fraction of entries written to train.jsonl; the rest go to val.jsonl.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct ModelOverrides {
    /// Model config JSON (defaults apply to missing fields).
    #[arg(long = "model")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct BuildArgs {
    /// Model config JSON (same as --model).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ModelOverrides,
    /// Print the shape report and fail when it finds a problem.
    #[arg(long)]
    pub verify: bool,
    /// Write the freshly initialized network as a checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct TrainOverrides {
    /// Training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset_kind: Option<String>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Separate validation manifest; without it the data is split.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Search space JSON; defaults cover learning rate, batch size, class
    /// weights and dataset variant.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub budget: usize,
    #[arg(long, default_value = "random")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub search_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epoch_cap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub sar: PathBuf,
    #[arg(long)]
    pub msi: PathBuf,
    /// Confidence raster output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 720)]
    pub tile: usize,
    #[arg(long, default_value_t = 120)]
    pub overlap: usize,
    #[arg(long, default_value_t = 60)]
    pub crop: usize,
    /// Threshold for the binary mask written with --mask.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct EvalArgs {
    /// Predictions (confidence or binary); repeat for several images.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Reference labels, one per --pred.
    #[arg(long = "ref", required = true)]
    pub reference: Vec<PathBuf>,
    /// Pixel masks (1 = evaluate), one per --pred.
    #[arg(long)]
    pub mask: Vec<PathBuf>,
    /// Incidence-angle rasters; evaluates only pixels below --max-incidence.
    #[arg(long)]
    pub incidence: Vec<PathBuf>,
    #[arg(long, default_value_t = icedual::evaluation::LOW_INCIDENCE_DEG)]
    pub max_incidence: f32,
    /// Group label per image for grouped means.
    #[arg(long)]
    pub group: Vec<String>,
    /// Second set of predictions for a McNemar test against --pred.
    #[arg(long)]
    pub compare: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also sweep thresholds 0.1..0.9.
    #[arg(long)]
    pub sweep: bool,
    /// Name recorded in the summary (e.g. the network).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PermuteArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Manifest of original MSI/SAR pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Text file listing permuted SAR rasters, one path per line.
    #[arg(long)]
    pub permuted: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub swir_band: usize,
    #[arg(long, default_value_t = icedual::labeling::CLOUD_THRESHOLD)]
    pub cloud_threshold: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SicArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub land: Option<PathBuf>,
    #[arg(long, default_value_t = icedual::sic::DEFAULT_CELL_M)]
    pub cell: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SicCompareArgs {
    #[arg(long, required_unless_present = "series")]
    pub a: Option<PathBuf>,
    #[arg(long, required_unless_present = "series")]
    pub b: Option<PathBuf>,
    /// Coast-distance raster on a's grid.
    #[arg(long)]
    pub coast: Option<PathBuf>,
    #[arg(long, default_value_t = 25_000.0)]
    pub coast_threshold_m: f64,
    /// CSV with columns date,a,b for a dated series of grid pairs.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct ReportArgs {
    /// Run directories (eval, permute, sic-compare outputs).
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads.unwrap_or(1).max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("thread pool: {e}");
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
