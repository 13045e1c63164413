//! Command-line front end: simulate, augment, pretrain-encoder, train,
//! predict, evaluate and gradcheck over plain-text datasets and configs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use crowdcast::config::KvConfig;

mod commands;
mod keys;

pub use keys::{all_keys, help_text, AUGMENT_KEYS, EVAL_KEYS, PRETRAIN_KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] crowdcast::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Maps configuration problems to usage errors.
pub(crate) fn usage<T>(r: crowdcast::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        crowdcast::Error::Config(m) => CliError::Usage(m),
        other => CliError::Core(other),
    })
}

#[derive(Debug, Parser)]
#[command(name = "crowdcast", version, about = "Multi-modal pedestrian trajectory prediction", after_long_help = help_text())]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// RNG seed; overrides the `seed` config key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plain-text `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Primary output file (stdout when omitted, where that makes sense).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override, `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset file (`frame<TAB>agent<TAB>x<TAB>y` rows after `# fps=`).
    #[arg(long)]
    pub data: PathBuf,
    /// Static map (PGM with `.meta` sidecar). Defaults to the dataset's `.pgm` sidecar if present.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for crowdcast::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => crowdcast::Split::Train,
            SplitArg::Val => crowdcast::Split::Val,
            SplitArg::Test => crowdcast::Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Social-Forces dataset; the map is written next to it as `.pgm`.
    #[command(after_help = keys::table_help(&[0]))]
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario preset (corridor | plaza15); overrides `preset`.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Add synthetic trajectories in unseen homotopy classes.
    #[command(after_help = keys::table_help(&[1, 2]))]
    Augment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit the occupancy-grid autoencoder and save its parameters.
    #[command(name = "pretrain-encoder", after_help = keys::table_help(&[1, 3]))]
    PretrainEncoder {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Per-step reconstruction loss, TSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train a predictor and save a checkpoint.
    #[command(after_help = keys::table_help(&[1]))]
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Pretrained encoder from `pretrain-encoder`.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Loss trace, TSV. Defaults to `<out>.trace.tsv`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict one agent's future from a checkpoint.
    #[command(after_help = keys::table_help(&[1]))]
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint from `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        agent: u32,
        /// Current step; defaults to the first step with a full history.
        #[arg(long)]
        step: Option<i64>,
        /// Draw the latent from the prior with this seed instead of using its mean.
        #[arg(long)]
        sample: Option<u64>,
        /// Write a gnuplot-friendly position dump here.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Score checkpoints on one or more datasets.
    #[command(after_help = keys::table_help(&[1, 4]))]
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint(s) to score; may be repeated.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        /// Dataset as `name=path` or `path`; may be repeated. Maps come from the `.pgm` sidecars.
        #[arg(long, required = true)]
        data: Vec<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Check the full training-loss gradient on a toy model.
    #[command(after_help = keys::table_help(&[1]))]
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Augment { common, .. }
            | Command::PretrainEncoder { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

/// Loads `--config`, applies `--set` and `--seed`, and rejects unknown keys.
pub fn load_config(common: &Common) -> CliResult<KvConfig> {
    let mut kv = match &common.config {
        Some(p) => KvConfig::load(p).map_err(|e| match e {
            crowdcast::Error::Parse { .. } => CliError::Usage(e.to_string()),
            other => CliError::Core(other),
        })?,
        None => KvConfig::default(),
    };
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed);
    }
    usage(kv.check_known(&all_keys()))?;
    Ok(kv)
}

/// Worker-thread cap from `CROWDCAST_THREADS`; 0 or unset leaves rayon's default.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("CROWDCAST_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::Usage(format!("CROWDCAST_THREADS must be a count, got `{v}`"))),
        },
    }
}

pub(crate) fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| crowdcast::Error::io(p, e).into()),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| crowdcast::Error::io("<stdout>", e).into())
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> CliResult<()> {
    let kv = load_config(cmd.common())?;
    let body = || commands::execute(cmd, &kv);
    match thread_cap()? {
        None => body(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(body),
    }
}
