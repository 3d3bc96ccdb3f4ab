//! `octforce`: simulate, train, evaluate, compare and export plot data.
//!
//! Every setting can come from a `key = value` file (`--config`), from a
//! dedicated flag, or from `--set key=value`; flags win over the file. Each
//! command prints its fully-resolved configuration first.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

mod commands;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resolve::{CliError, Resolver};

#[derive(Parser)]
#[command(name = "octforce", version, about = "Needle-tip force estimation from simulated OCT A-scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a calibration or insertion run and write a windowed dataset.
    Simulate(SimulateArgs),
    /// Train one architecture on a dataset and write a checkpoint and loss history.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train several architectures over several seeds and rank them.
    Compare(CompareArgs),
    /// Export predicted, base-measured and tip-truth force columns for an insertion.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Plain-text `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set optics.noise_floor=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// calibration or insertion.
    #[arg(long)]
    mode: Option<String>,
    /// needle1, needle2 or needle3.
    #[arg(long)]
    preset: Option<String>,
    /// Calibration length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// A-scans per window.
    #[arg(long = "t-s")]
    t_s: Option<usize>,
    /// Depth pixels kept per A-scan.
    #[arg(long = "d-c")]
    d_c: Option<usize>,
    /// Scans between consecutive window starts.
    #[arg(long)]
    stride: Option<usize>,
    /// Insertion with the shielding tube (base sensor decoupled from shaft friction).
    #[arg(long)]
    shielded: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tip-force truth sidecar for insertions (default: `<out>.truth.csv`).
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// default, small or tiny.
    #[arg(long)]
    layer_spec: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// convgru-cnn, cnn-gru, 2d-cnn, 1d-cnn or gru.
    #[arg(long)]
    arch: Option<String>,
    #[command(flatten)]
    train: TrainFlags,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, val, test or all.
    #[arg(long)]
    split: Option<String>,
    /// Also write the metrics row to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated architecture names.
    #[arg(long)]
    archs: Option<String>,
    /// Training runs per architecture.
    #[arg(long)]
    seeds: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Insertion dataset written by `simulate --mode insertion`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Tip-force truth sidecar (default: `<data>.truth.csv`).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Collects flag values as key/value overrides.
#[derive(Default)]
struct Flags(Vec<(String, String)>);

impl Flags {
    fn add(&mut self, key: &str, v: Option<impl ToString>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.to_string()));
        }
        self
    }

    fn path(&mut self, key: &str, v: Option<PathBuf>) -> &mut Self {
        self.add(key, v.map(|p| p.display().to_string()))
    }

    fn train(&mut self, t: TrainFlags) -> &mut Self {
        self.add("epochs", t.epochs)
            .add("seed", t.seed)
            .add("lr", t.lr)
            .add("batch_size", t.batch_size)
            .add("layer_spec", t.layer_spec)
    }

    fn resolver(&mut self, common: Common) -> Result<Resolver, CliError> {
        let mut all = Vec::new();
        for s in common.set {
            let (k, v) =
                s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
            all.push((k.trim().to_string(), v.trim().to_string()));
        }
        // dedicated flags win over --set
        all.append(&mut self.0);
        Resolver::new(common.config.as_deref(), all)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut f = Flags::default();
    match cli.command {
        Command::Simulate(a) => {
            f.add("mode", a.mode)
                .add("preset", a.preset)
                .add("duration", a.duration)
                .add("seed", a.seed)
                .add("t_s", a.t_s)
                .add("d_c", a.d_c)
                .add("stride", a.stride)
                .add("shielded", a.shielded.then_some(true))
                .path("out", a.out)
                .path("truth_out", a.truth_out);
            commands::simulate(f.resolver(a.common)?)
        }
        Command::Train(a) => {
            f.path("data", a.data).add("arch", a.arch).train(a.train).path("out", a.out).path("history", a.history);
            commands::train_cmd(f.resolver(a.common)?)
        }
        Command::Eval(a) => {
            f.path("checkpoint", a.checkpoint).path("data", a.data).add("split", a.split).path("out", a.out);
            commands::eval(f.resolver(a.common)?)
        }
        Command::Compare(a) => {
            f.path("data", a.data).add("archs", a.archs).add("seeds", a.seeds).train(a.train).path("out", a.out);
            commands::compare(f.resolver(a.common)?)
        }
        Command::Plot(a) => {
            f.path("checkpoint", a.checkpoint).path("data", a.data).path("truth", a.truth).path("out", a.out);
            commands::plot(f.resolver(a.common)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("octforce: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
