mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vaegan_core::data::Split;
use vaegan_core::pipeline::{EnhanceMode, Preset};

#[derive(Debug, Parser)]
#[command(name = "vaegan", version, about = "Two-stage VAE-GAN speech enhancement")]
pub struct Cli {
    /// TOML config file layered over the preset.
    #[arg(long, global = true, env = "VAEGAN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Dotted override such as `train.batch_size=8`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for corpus generation and training; overrides both config seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "toy")]
    pub preset: Preset,
    /// Arithmetic used for training and inference. `f64` is the bitwise
    /// reproducible verification mode.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the clean-speech VAE.
    TrainCvae(TrainArgs),
    /// Train the noise VAE.
    TrainNvae(TrainArgs),
    /// Train the noisy-signal encoder against the two frozen encoders.
    TrainNsvae(TrainArgs),
    /// Refine both decoders adversarially.
    TrainGan(TrainArgs),
    /// Enhance one WAV file.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "M")]
        mode: EnhanceMode,
        #[arg(long)]
        out: PathBuf,
        /// Also write the noise estimate.
        #[arg(long)]
        noise_out: Option<PathBuf>,
        /// Resample input at other rates instead of rejecting it.
        #[arg(long)]
        resample: bool,
    },
    /// Score noisy, L, M and oracle-mask outputs on a corpus split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Record stream; defaults to `eval.jsonl` next to the checkpoint.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Evaluate only the first N utterances.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory holding the manifest.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to continue from; required after the first two stages.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch records; defaults to `<out>.<stage>.jsonl`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// An error caused by how the tool was invoked rather than by the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
