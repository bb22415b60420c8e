//! `orchard` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Semantic mapping and route planning for orchard point clouds.
#[derive(Debug, Parser)]
#[command(name = "orchard", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic orchard cloud and its ground truth.
    Generate(GenerateArgs),
    /// Run every stage from a config file and write all artifacts.
    Pipeline(PipelineArgs),
    /// Window subdivision, encoding, detection, merge and 3D lifting.
    Detect(DetectArgs),
    /// Cloth-simulation ground segmentation.
    Terrain(TerrainArgs),
    /// Tree-row extraction from detections.
    Rows(RowsArgs),
    /// Build the directed route graph.
    Graph(GraphArgs),
    /// Plan on a route graph, singly or as a timed batch.
    Plan(PlanArgs),
    /// Score detections against ground truth, or run the window study.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Orchard spec (TOML); built-in defaults when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output cloud; format from the extension unless --format is given.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// Ground-truth JSON output.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Shared overrides applied on top of a pipeline config file.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Pipeline config (TOML). Flags below override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long)]
    input_format: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Detections JSON output.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct TerrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    class_threshold: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    rigidness: Option<u8>,
    #[arg(long)]
    time_step: Option<f64>,
    /// Segmentation JSON output.
    #[arg(long, short)]
    output: PathBuf,
    /// Also write `x y z label` with label 1 ground, 0 non-ground.
    #[arg(long)]
    labelled: Option<PathBuf>,
    /// Ground-truth JSON; prints SER/SAR when given.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Sweep cloth resolution × class threshold instead (needs --truth or a
    /// synthetic input).
    #[arg(long)]
    study: bool,
}

#[derive(Debug, Args)]
struct RowsArgs {
    /// Detections JSON (array) from `detect`.
    #[arg(long, short)]
    detections: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tolerance: f64,
    #[arg(long, default_value_t = 3)]
    min_trees: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Detections JSON; rows are extracted from them.
    #[arg(long, short, conflicts_with = "manual")]
    detections: Option<PathBuf>,
    /// Hand-placed rows: JSON array of rows, each an array of [x, y].
    #[arg(long)]
    manual: Option<PathBuf>,
    /// Canopy radius for --manual rows.
    #[arg(long, default_value_t = 0.8)]
    canopy_radius: f64,
    /// Pipeline config supplying [rows] and [graph] parameters.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long, short)]
    graph: PathBuf,
    /// Start pose `x,y,heading_deg`; defaults to the first node.
    #[arg(long, allow_hyphen_values = true)]
    start: Option<String>,
    /// Goal pose `x,y,heading_deg`.
    #[arg(long, allow_hyphen_values = true, required_unless_present = "batch")]
    goal: Option<String>,
    /// Plan to N random goals drawn from the graph's nodes.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted detections JSON.
    #[arg(long, short, required_unless_present = "study")]
    predictions: Option<PathBuf>,
    /// Ground truth: a truth JSON from `generate` or a detections array.
    #[arg(long, short, required_unless_present = "study")]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Use 3D box IoU instead of footprints.
    #[arg(long)]
    volume: bool,
    /// Run the window-size × resolution study on the config's scene.
    #[arg(long)]
    study: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// JSON output (CSV alongside for --study).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
