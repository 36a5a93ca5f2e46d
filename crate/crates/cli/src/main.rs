mod commands;
mod out;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cachenet::config::{parse_config, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cachenet", version, about = "Learned-cache inference serving experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset, train the base model and record the layer profile.
    Prepare(Common),
    /// Train and measure every cache variant at every block.
    Explore {
        #[command(flatten)]
        common: Common,
        /// Use built-in metrics instead of training caches.
        #[arg(long, value_enum)]
        fixture: Option<Fixture>,
    },
    /// Choose caches under the memory, timing and accuracy constraints.
    Compose {
        #[command(flatten)]
        common: Common,
        /// Use built-in metrics instead of the explored ones.
        #[arg(long, value_enum)]
        fixture: Option<Fixture>,
    },
    /// Serve a workload through the composed caches.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also run online adaptation, paired with the static run.
        #[arg(long)]
        adapt: bool,
    },
    /// Sweep latency SLOs over a query DAG with and without replanning.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Log per-query audits for the replanning run instead of the static one.
        #[arg(long)]
        replan: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config; the built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the config's global seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Fixture {
    Reference,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_MISSING: u8 = 4;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<cachenet::Error> for Failure {
    fn from(e: cachenet::Error) -> Self {
        let code = match e {
            cachenet::Error::Infeasible(_) => EXIT_INFEASIBLE,
            cachenet::Error::Invalid { .. } | cachenet::Error::UnknownNode(_) => EXIT_CONFIG,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    /// Directory that relative paths in the config resolve against.
    pub config_dir: PathBuf,
    pub out: out::OutDir,
}

fn load(common: &Common) -> Result<Ctx, Failure> {
    let (mut cfg, config_dir) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
            let cfg = parse_config(&text)
                .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
            let dir = path.parent().map(PathBuf::from).unwrap_or_default();
            (cfg, dir)
        }
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    let out = out::OutDir::open(&common.out, &cfg)?;
    Ok(Ctx { cfg, config_dir, out })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Prepare(c) => commands::prepare(&mut load(&c)?),
        Command::Explore { common, fixture } => commands::explore(&mut load(&common)?, fixture),
        Command::Compose { common, fixture } => commands::compose(&mut load(&common)?, fixture),
        Command::Simulate { common, adapt } => commands::simulate(&mut load(&common)?, adapt),
        Command::Plan { common, replan } => commands::plan(&mut load(&common)?, replan),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
