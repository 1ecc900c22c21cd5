mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "voxelrec", version, about = "Train and evaluate the volumetric graphics-code network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural image/volume dataset.
    GenData(GenDataArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Predict continuous volumes for dataset images.
    Predict(PredictArgs),
    /// Threshold a predicted volume and write it as an OBJ mesh.
    ExportMesh(ExportMeshArgs),
    /// Run one evaluation suite and write CSV and JSON reports.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Head,
    Chair,
}

impl From<FamilyArg> for voxelrec::datagen::Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Head => Self::Head,
            FamilyArg::Chair => Self::Chair,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn as_str(self) -> &'static str {
        match self {
            OnOff::On => "on",
            OnOff::Off => "off",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Volume,
    Twin,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Number of distinct shapes; image datasets hold 15 examples per shape.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    shapes: u64,
    /// Image resolution.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(2..=512))]
    res: u64,
    /// Volume resolution; defaults to the image resolution for heads and 30
    /// for chairs.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=256))]
    volume_res: Option<u64>,
    /// Emit 5-frame rotation videos instead of single images.
    #[arg(long)]
    video: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: std::path::PathBuf,
    /// Flat `key=value` file with network and training settings; flags win.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    batchnorm: Option<OnOff>,
    #[arg(long, value_enum)]
    fc3000: Option<OnOff>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seeds both weight initialisation and batch shuffling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: std::path::PathBuf,
    #[arg(long)]
    data: std::path::PathBuf,
    /// Example indices to predict; all examples when omitted.
    #[arg(long, value_delimiter = ',')]
    index: Vec<usize>,
    /// Output volume file.
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct ExportMeshArgs {
    /// Volume file written by `predict`.
    #[arg(long)]
    volumes: std::path::PathBuf,
    /// Which grid of the file to export.
    #[arg(long, default_value_t = 0)]
    item: usize,
    /// Occupancy threshold; defaults to 0.01 for heads and 0.2 for chairs.
    #[arg(long)]
    threshold: Option<f32>,
    /// Laplacian smoothing passes (step 0.5).
    #[arg(long, default_value_t = 0)]
    smooth: usize,
    /// Keep grid-index coordinates instead of the [-1, 1] world frame.
    #[arg(long)]
    grid_coords: bool,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Nn,
    Invariance,
    Rank,
    Video,
    Interp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FactorArg {
    Pose,
    Lighting,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Model directory; the video model for `--suite video`.
    #[arg(long)]
    model: std::path::PathBuf,
    /// Single-image model compared against in `--suite video`.
    #[arg(long)]
    image_model: Option<std::path::PathBuf>,
    /// Evaluation dataset.
    #[arg(long)]
    data: std::path::PathBuf,
    /// Training dataset searched by `--suite nn`.
    #[arg(long)]
    train_data: Option<std::path::PathBuf>,
    /// Binarization threshold applied to predictions before scoring; `none`
    /// scores clamped continuous values.
    #[arg(long, default_value = "0.5")]
    score_threshold: String,
    /// Use at most this many evaluation examples (`nn`, `video`).
    #[arg(long)]
    limit: Option<usize>,
    /// Factor changed between probe and target (`rank`).
    #[arg(long, value_enum, default_value = "pose")]
    factor: FactorArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 150)]
    gallery: usize,
    /// Batches per factor (`invariance`).
    #[arg(long, default_value_t = 100)]
    batches: usize,
    /// Examples per batch (`invariance`).
    #[arg(long, default_value_t = 3)]
    batch_size: usize,
    /// Image pairs (`interp`).
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report directory.
    #[arg(long)]
    out: std::path::PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::ExportMesh(a) => commands::export_mesh(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<commands::UsageError>().map_or(1, |_| 2))
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("VOXELREC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow::anyhow!("VOXELREC_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
