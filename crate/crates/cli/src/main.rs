//! Command-line front end: data synthesis, training, forecasting,
//! sampling, evaluation, dictionary inspection and ablations.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "primflow", version, about = "Compositional trajectory generation with masked motion primitives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of tiled primitives plus its truth.
    Synth(SynthArgs),
    /// Train the dictionary, placement logits and flow network.
    Train(TrainArgs),
    /// Forecast the future of every window in a dataset.
    Predict(PredictArgs),
    /// Draw unconditional samples.
    Sample(SampleArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Legality energy of a given placement.
    EvalEnergy(EvalEnergyArgs),
    /// Render the learned atoms.
    InspectDict(InspectArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and compare ablation variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// TOML file with any `SynthSpec` fields; missing fields use defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv", value_parser = ["csv", "jsonl"])]
    pub format: String,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides as `key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Trajectories (CSV or JSONL by extension).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub cfg: TrainConfigArgs,
    /// Checkpoint to write; rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args)]
pub struct SamplingArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Keep the best of this many draws per window (by ADE against the
    /// known future). 1 is plain single-sample forecasting.
    #[arg(long, default_value_t = 1)]
    pub best_of: usize,
    /// Predicted futures as trajectories.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground-truth futures here.
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Render the first sample tiled by owning atom.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Real trajectories to compute JSD against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also report JSD of the predictions against the ground truth.
    #[arg(long)]
    pub jsd: bool,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalEnergyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSON list of `[atom, onset, prob]` triples.
    #[arg(long)]
    pub placement: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    /// Trajectory id in `--traj`; the first one by default.
    #[arg(long)]
    pub id: Option<String>,
    /// Event-timeline SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "tiny", value_parser = ["tiny"])]
    pub size: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub cfg: TrainConfigArgs,
    /// Comma-separated variants: base, no_mask, no_primitives, m=<count>.
    #[arg(long, default_value = "base,no_mask,no_primitives")]
    pub variants: String,
    /// Fraction of trajectories held out for scoring, taken from the end.
    #[arg(long, default_value_t = 0.1)]
    pub test_frac: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::EvalEnergy(a) => commands::eval_energy(a),
        Command::InspectDict(a) => commands::inspect_dict(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
