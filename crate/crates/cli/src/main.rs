//! `sar-damage` command-line tool.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

const AFTER_HELP: &str = "Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.\n\
Flags can also come from --config FILE: a TOML file with one [subcommand] table keyed by flag name \
(e.g. [train] trees = 75). Flags given on the command line take precedence.";

#[derive(Debug, Parser)]
#[command(name = "sar-damage", version, about = "Building damage mapping from Sentinel-1 style SAR amplitude time series", after_help = AFTER_HELP)]
pub struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// TOML file with default flag values, one [subcommand] table each.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, env = "SAR_DAMAGE_THREADS", value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic scene: stack, labels, footprints, regions and truth.
    Synth(SynthArgs),
    /// Train a random forest from a stack and point labels.
    Train(TrainArgs),
    /// Write dense per-period damage maps for a stack.
    Infer(InferArgs),
    /// Aggregate period maps to building footprints (per-period likelihoods plus a verdict).
    Buildings(BuildingsArgs),
    /// Count damaged buildings per region or per building class.
    Rollup(RollupArgs),
    /// Score a model, the t-test baseline or precomputed maps against labels.
    Eval(EvalArgs),
    /// Find the smallest threshold reaching a target precision.
    Calibrate(CalibrateArgs),
    /// Compare the forest and the t-test baseline on the same samples.
    Compare(CompareArgs),
    /// Retrain along one configuration axis and report F1 per value.
    Ablate(AblateArgs),
    /// Run the local HTTP assessment service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in scenario: clean-steps, seasonal-confounder or noise-free.
    #[arg(long, default_value = "clean-steps", conflicts_with = "scenario")]
    pub preset: String,
    /// Scenario TOML file instead of a preset.
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the scene bundle.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Where the labelled samples come from.
#[derive(Debug, Args, Clone)]
pub struct SampleArgs {
    /// Assessment periods, e.g. 1-8 or 5,7,9-12. T1..T4 precede the invasion.
    #[arg(long, default_value = "1-8")]
    pub periods: String,
    /// Reference interval index (T0 is the year before the pre-invasion periods).
    #[arg(long, default_value_t = 0)]
    pub reference: u8,
    /// Per-layer spatial support: 1x1 (pixel) or 3x3 (neighbourhood mean).
    #[arg(long, default_value = "1x1")]
    pub window: String,
}

#[derive(Debug, Args, Clone)]
pub struct ForestArgs {
    /// Number of trees.
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    /// Minimum samples per leaf.
    #[arg(long, default_value_t = 3)]
    pub min_leaf: usize,
    /// Maximum nodes per tree.
    #[arg(long, default_value_t = 10_000)]
    pub max_nodes: usize,
    /// Features tried per split [default: floor(sqrt(allowed features)), 5 for all 28].
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Polarizations: vv, vh or both.
    #[arg(long, default_value = "both")]
    pub bands: String,
    /// Statistics: all, or a +-joined list of min, max, mean, median, std, kurtosis, skewness.
    #[arg(long, default_value = "all")]
    pub features: String,
    /// Keep the class imbalance instead of downsampling the majority class.
    #[arg(long)]
    pub no_balance: bool,
    /// Grow every tree on the full sample instead of a bootstrap draw.
    #[arg(long)]
    pub no_bootstrap: bool,
}

/// A stack directory plus its labels. A scene bundle written by `synth`
/// may be given as `--stack`; its `labels.geojson` is then the default.
#[derive(Debug, Args, Clone)]
pub struct StackLabels {
    /// Stack directory (meta.json plus layer files) or a scene bundle containing stack/.
    #[arg(long, value_name = "DIR")]
    pub stack: PathBuf,
    /// Label points GeoJSON [default: labels.geojson of a scene bundle].
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: StackLabels,
    /// Output model file (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub samples: SampleArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Forest,
    Pwtt,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Stack directory or scene bundle.
    #[arg(long, value_name = "DIR")]
    pub stack: PathBuf,
    /// Model file; required for --method forest.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// forest: damage probability in [0, 1]; pwtt: t-test |t| score (unbounded).
    #[arg(long, value_enum, default_value_t = Method::Forest)]
    pub method: Method,
    /// Output directory; one Tnn/ map per period.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Assessment periods to map.
    #[arg(long, default_value = "1-12")]
    pub periods: String,
    /// Reference interval index.
    #[arg(long, default_value_t = 0)]
    pub reference: u8,
    /// 1x1 or 3x3; must match the window the model was trained with.
    #[arg(long, default_value = "1x1")]
    pub window: String,
    /// Tile edge length in pixels.
    #[arg(long, default_value_t = 256)]
    pub tile_size: usize,
    /// Store probabilities quantised to 8 bits (round(p*255)) with a nodata mask.
    #[arg(long)]
    pub uint8: bool,
}

#[derive(Debug, Args)]
pub struct BuildingsArgs {
    /// Directory of Tnn/ maps written by `infer --method forest`.
    #[arg(long, value_name = "DIR")]
    pub maps: PathBuf,
    /// Building footprints GeoJSON.
    #[arg(long, value_name = "FILE")]
    pub footprints: PathBuf,
    /// Output GeoJSON with y_T1..y_T12 likelihoods and the verdict.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Verdict threshold on the likelihood, in [0, 1].
    #[arg(long, default_value_t = 0.655)]
    pub threshold: f64,
    /// Footprints smaller than this many square metres are dropped.
    #[arg(long, default_value_t = 50.0)]
    pub min_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Region,
    Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct RollupArgs {
    /// Building GeoJSON written by `buildings`.
    #[arg(long, value_name = "FILE")]
    pub buildings: PathBuf,
    /// Region polygons GeoJSON; required for --level region.
    #[arg(long, value_name = "FILE")]
    pub regions: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Level::Region)]
    pub level: Level,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Verdict threshold on the likelihood, in [0, 1].
    #[arg(long, default_value_t = 0.655)]
    pub threshold: f64,
    /// Only use post-invasion periods up to this index (cumulative counts).
    #[arg(long, value_parser = clap::value_parser!(u8).range(5..=12))]
    pub until: Option<u8>,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: StackLabels,
    /// Model file; required for --method forest unless --maps is given.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Forest)]
    pub method: Method,
    /// Score precomputed Tnn/ maps instead of running inference.
    #[arg(long, value_name = "DIR")]
    pub maps: Option<PathBuf>,
    /// Decision threshold [default: 0.655 for forest, 1.63 for pwtt].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub samples: SampleArgs,
    /// Also write per-sample scores as CSV.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub input: StackLabels,
    /// Model file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Target damaged-class precision, in (0, 1].
    #[arg(long, default_value_t = 0.9)]
    pub target: f64,
    #[command(flatten)]
    pub samples: SampleArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: StackLabels,
    /// Model file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Forest probability threshold.
    #[arg(long, default_value_t = 0.655)]
    pub threshold: f64,
    /// t-test |t| cutoff.
    #[arg(long, default_value_t = 1.63)]
    pub cutoff: f64,
    #[command(flatten)]
    pub samples: SampleArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Trees,
    Bands,
    Features,
    Window,
}

const OPTICAL_REJECTION: &str = "Sentinel-2 axes are not available: adding Sentinel-2 optical features did not improve on \
Sentinel-1-only models, so the ablation covers the Sentinel-1 axes trees, bands, features and window";

fn parse_axis(s: &str) -> Result<Axis, String> {
    let k = s.trim().to_ascii_lowercase();
    match k.as_str() {
        "trees" => Ok(Axis::Trees),
        "bands" => Ok(Axis::Bands),
        "features" => Ok(Axis::Features),
        "window" => Ok(Axis::Window),
        _ if ["s2", "sentinel2", "sentinel-2", "optical", "ndvi", "ndbi", "multispectral", "rgb"].iter().any(|p| k.starts_with(p)) => {
            Err(OPTICAL_REJECTION.into())
        }
        _ => Err(format!("unknown axis '{s}'; use trees, bands, features or window")),
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Scene bundle used for training (stack/ plus labels.geojson).
    #[arg(long, value_name = "DIR")]
    pub train: PathBuf,
    /// Scene bundle used for scoring.
    #[arg(long, value_name = "DIR")]
    pub test: PathBuf,
    /// trees, bands, features or window.
    #[arg(long, value_parser = parse_axis)]
    pub axis: Axis,
    /// Comma-separated values, e.g. 10,25,50,75,100 / vv,vh,both / mean+std,all / 1x1,3x3.
    #[arg(long)]
    pub values: String,
    /// Forest probability threshold for the reported metrics.
    #[arg(long, default_value_t = 0.655)]
    pub threshold: f64,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub samples: SampleArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Stack directory or scene bundle.
    #[arg(long, value_name = "DIR")]
    pub stack: PathBuf,
    /// Model file served as model "default".
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Building footprints GeoJSON [default: footprints.geojson of a scene bundle].
    #[arg(long, value_name = "FILE")]
    pub footprints: Option<PathBuf>,
    /// Region polygons GeoJSON [default: regions.geojson of a scene bundle].
    #[arg(long, value_name = "FILE")]
    pub regions: Option<PathBuf>,
    /// Directory for job results; finished jobs are reloaded on restart.
    #[arg(long, value_name = "DIR", default_value = "./sar-damage-work")]
    pub workdir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Jobs running at once.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: u16,
    /// Jobs waiting for a worker before /assess answers 503.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(1..))]
    pub queue: u16,
    /// Largest job result in pixels (window area times periods).
    #[arg(long, default_value_t = 4_000_000)]
    pub max_result_pixels: usize,
    /// Inference tile edge in pixels.
    #[arg(long, default_value_t = 256)]
    pub tile_size: usize,
    /// Footprints smaller than this many square metres are dropped.
    #[arg(long, default_value_t = 50.0)]
    pub min_area: f64,
    /// Allowed browser origin; repeatable [default: any localhost port].
    #[arg(long = "cors-origin", value_name = "ORIGIN")]
    pub cors_origins: Vec<String>,
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::merge(args) {
        Ok(a) => a,
        Err(config::ConfigError::Read(m)) => {
            eprintln!("error: cannot read config: {m}");
            return ExitCode::from(1);
        }
        Err(config::ConfigError::Schema(m)) => {
            eprintln!("error: bad config: {m}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
