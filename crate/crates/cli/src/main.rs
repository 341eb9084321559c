mod commands;
mod config;
mod plot;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rashvit_core::datasets::Split;
use rashvit_core::sigproc::FeatureMode;
use rashvit_core::ErrorKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Bearing fault diagnosis with a residual-attention single-head vision transformer.
#[derive(Parser)]
#[command(name = "rashvit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic archive.
    Synth(SynthArgs),
    /// Convert per-class signal files into an archive.
    Ingest(IngestArgs),
    /// Train from a run config; writes model.ckpt, run.json and timing.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split at one SNR.
    Eval(EvalArgs),
    /// Evaluate a checkpoint over an SNR grid and several noise seeds.
    Sweep(SweepArgs),
    /// Train one-axis variants of a run config and compare them across SNRs.
    Ablate(AblateArgs),
    /// Check every registered backward rule against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write classifier-input features per segment as CSV.
    Export(ExportArgs),
    /// Parameter count, MAC estimate and layer table of a model config.
    Info(InfoArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// SynthSpec JSON; the standard table is used when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub per_class: usize,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum InputFormat {
    /// Numbers separated by whitespace or commas.
    Text,
    /// Headerless little-endian f32.
    F32le,
}

#[derive(Args)]
pub struct IngestArgs {
    /// `NAME=FILE`; repeat per file. Classes are numbered by first appearance.
    #[arg(long = "class", value_name = "NAME=FILE", required = true)]
    pub classes: Vec<String>,
    #[arg(long)]
    pub sample_rate: f64,
    #[arg(long, value_enum, default_value_t = InputFormat::Text)]
    pub format: InputFormat,
    #[arg(long, default_value_t = rashvit_core::sigproc::WINDOW)]
    pub window: usize,
    /// Defaults to the window length.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FeatureArg {
    Fft,
    Raw,
}

impl From<FeatureArg> for FeatureMode {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Fft => FeatureMode::Fft,
            FeatureArg::Raw => FeatureMode::Raw,
        }
    }
}

/// Checkpoint plus the data to run it on. Split seed, split ratios and
/// feature mode default to the `run.json` beside the checkpoint.
#[derive(Args)]
pub struct DataArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Archive manifest or its directory.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub data: Option<PathBuf>,
    /// Take the dataset from a run config instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub features: Option<FeatureArg>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// SNR in dB, or `inf` for clean input.
    #[arg(long, default_value = "inf", allow_hyphen_values = true)]
    pub snr: String,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `lo:step:hi` (inclusive) or a comma list; `inf` is clean.
    #[arg(long, default_value = "-10:2:10", allow_hyphen_values = true)]
    pub snrs: String,
    /// Comma-separated noise seeds.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    /// A model per SNR, trained at that SNR.
    PerSnr,
    /// One model per arm and seed, tested at every SNR.
    Shared,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "-6", allow_hyphen_values = true)]
    pub snrs: String,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "1,2,3")]
    pub seeds: String,
    /// Comma-separated `axis=value` arms: ahab=on|off, ffn=res|plain, features=fft|raw.
    #[arg(long, default_value = "features=raw,ffn=plain,ahab=off")]
    pub variants: String,
    #[arg(long, value_enum, default_value_t = ProtocolArg::PerSnr)]
    pub protocol: ProtocolArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Defaults to `<out_dir>/ablation`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Adds a check with a deliberately wrong backward rule.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Default,
    Cwru,
    Pu,
    Tiny,
}

#[derive(Args)]
pub struct InfoArgs {
    /// Run config whose model section is described.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Default)]
    pub preset: PresetArg,
    #[arg(long)]
    pub json: bool,
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rashvit_core::Error>() {
            return match e.kind() {
                ErrorKind::Validation => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("RA_SHVIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| rashvit_core::Error::InvalidArgument(format!("RA_SHVIT_THREADS={v} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run() -> anyhow::Result<i32> {
    configure_threads()?;
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return Ok(code);
        }
    };
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Export(a) => commands::export(a),
        Command::Info(a) => commands::info(a),
    }
}

fn main() {
    // Exit quietly when piped into `head` and the like.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let code = match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}
