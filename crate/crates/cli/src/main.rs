use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Exit status 2: the command line or config was unusable.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "eo-pinn", version, about = "Noise-aware pulse training for exchange-only spin qubits")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with TrainConfig keys; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gate: Option<String>,
    /// Relative noise amplitude, e.g. 0.01 for 1%.
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub qubits: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub stage1_end: Option<usize>,
    #[arg(long)]
    pub n_real: Option<usize>,
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Any other config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Pinn,
    Baseline,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Convergence,
    Duration,
    SigmaSweep,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one gate and write trace, checkpoints and summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory. Defaults to $EO_PINN_OUT_DIR/<gate>-<qubits>q-s<sigma>-seed<seed>.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run a gate × sigma grid.
    Sweep {
        #[arg(long, value_enum)]
        mode: SweepMode,
        /// Comma-separated gate tokens.
        #[arg(long, default_value = "x,y,z,h")]
        gates: String,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        sigmas: Vec<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render traces or sweep tables as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// Legend labels, comma-separated, one per input.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Run the numerical self-check battery.
    Verify {
        /// Degrade the matrix exponential so the battery must fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Dump a checkpointed pulse as time_ns,j12_mhz,j23_mhz.
    ExportPulse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resample the network on this many points instead of the training grid.
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Train { cfg, out_dir, quiet } => commands::train(&cfg, out_dir, quiet),
        Command::Sweep { mode, gates, sigmas, cfg, out_dir } => commands::sweep(mode, &gates, &sigmas, &cfg, out_dir),
        Command::Plot { kind, out, labels, inputs } => commands::plot(kind, &out, &labels, &inputs),
        Command::Verify { inject_fault } => commands::verify(inject_fault),
        Command::ExportPulse { checkpoint, out, samples } => commands::export_pulse(&checkpoint, &out, samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
