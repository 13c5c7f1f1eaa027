use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Open-set recognition toolkit: protocols, evaluation, plots and loss checks.
#[derive(Parser)]
#[command(name = "osr", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a protocol manifest from WordNet metadata and ILSVRC image lists
    Protocol(ProtocolArgs),
    /// Evaluate a score file: OSCR curve, CCR@FPR table and confidence
    Eval(EvalArgs),
    /// Confidence per epoch over a series of score files
    Confidence(ConfidenceArgs),
    /// Render SVG figures
    #[command(subcommand)]
    Plot(PlotCommand),
    /// Compare analytic loss gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Train S, BG and EOS linear models on 2-D clusters and evaluate them
    Toy(ToyArgs),
}

#[derive(Args)]
pub struct DataArgs {
    /// Root for default metadata and image list paths
    #[arg(long, env = "OSR_DATA_ROOT", default_value = "data")]
    pub data_root: PathBuf,
    /// WordNet is-a edges [default: <data-root>/wordnet/is_a.txt]
    #[arg(long)]
    pub is_a: Option<PathBuf>,
    /// Synset names [default: <data-root>/wordnet/words.txt]
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// ILSVRC class list [default: <data-root>/wordnet/ilsvrc_synsets.txt]
    #[arg(long)]
    pub ilsvrc: Option<PathBuf>,
    /// How synsets with several hypernyms are attached: `last` keeps only the
    /// last-listed parent, `all` keeps the full graph
    #[arg(long, default_value = "last")]
    pub parent_policy: osr_core::ParentPolicy,
}

#[derive(Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Built-in protocol (p1, p2, p3) or path to a protocol spec file
    #[arg(long)]
    pub protocol: String,
    /// Seed of the per-class train/val split
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Original ILSVRC training images, lines `path synsetId` [default: <data-root>/ilsvrc/train.txt]
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Original ILSVRC validation images [default: <data-root>/ilsvrc/val.txt]
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Only resolve and list the classes of each role; no image lists needed
    #[arg(long)]
    pub list_classes: bool,
    /// Output file [default: stdout]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Score file to evaluate
    #[arg(long)]
    pub scores: PathBuf,
    /// Rejection group evaluated against the knowns
    #[arg(long, default_value = "negative")]
    pub group: osr_core::metrics::Group,
    /// Check sample ids and labels against the test split of this manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the OSCR curve (`theta,fpr,ccr`) here
    #[arg(long)]
    pub oscr_out: Option<PathBuf>,
    /// Row label in the printed table [default: score file name]
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args)]
pub struct ConfidenceArgs {
    /// Score file path with an `{epoch}` placeholder
    #[arg(long)]
    pub pattern: String,
    /// Epochs as `first..last` (inclusive) or a comma list
    #[arg(long)]
    pub epochs: String,
    /// Group providing the rejection confidence
    #[arg(long, default_value = "negative")]
    pub group: osr_core::metrics::Group,
    /// Output CSV [default: stdout]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum PlotCommand {
    /// OSCR curves from `theta,fpr,ccr` files
    Oscr {
        /// Curves as `LABEL=PATH` or `PATH`
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long, default_value = "log")]
        scale: osr_core::report::AxisScale,
        #[arg(long, default_value = "OSCR")]
        title: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Confidence against epoch from confidence CSV files
    Confidence {
        /// Files as `LABEL=PATH` or `PATH`
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        /// gamma, gamma-plus or gamma-minus
        #[arg(long, default_value = "gamma")]
        metric: osr_core::report::ConfidenceMetric,
        #[arg(long, default_value = "Confidence")]
        title: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score histograms: true-class probability of knowns, maximum known
    /// probability of the selected group
    Histogram {
        /// Score files as `LABEL=PATH` or `PATH`
        #[arg(long = "scores", required = true)]
        inputs: Vec<String>,
        #[arg(long, default_value = "unknown")]
        group: osr_core::metrics::Group,
        #[arg(long, default_value_t = osr_core::report::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value = "Score histogram")]
        title: String,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Random instances per loss mode
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Central difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct ToyArgs {
    /// Directory for score files, OSCR curves and the summary table
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    /// Cluster layout
    #[arg(long, value_enum, default_value_t = ToyLayout::Ring)]
    pub layout: ToyLayout,
    /// Known clusters
    #[arg(long, default_value_t = 4)]
    pub known: usize,
    /// Distance of the known cluster means from the origin
    #[arg(long, default_value_t = 3.5)]
    pub radius: f64,
    /// Unknown cluster mean as `x,y` (ring layout only)
    #[arg(long, default_value = "0.5,0.5")]
    pub unknown_at: String,
    /// Points per cluster
    #[arg(long, default_value_t = 200)]
    pub per_cluster: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ToyLayout {
    /// Knowns on a full circle, negatives at the origin, unknowns at `--unknown-at`
    Ring,
    /// Knowns on the upper arc, negatives at the origin, unknowns below it
    FarUnknown,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Protocol(args) => commands::protocol(args),
        Command::Eval(args) => commands::eval(args),
        Command::Confidence(args) => commands::confidence(args),
        Command::Plot(cmd) => commands::plot(cmd),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Toy(args) => commands::toy(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
