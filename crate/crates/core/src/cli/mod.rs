//! Command-line interface: `fit`, `forecast`, `score`, `stack` and
//! `simulate`.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "pnarm", version, about = "Poisson network autoregression with clustered coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the posterior and write draws plus a run manifest.
    Fit(RunArgs),
    /// Predictive summaries for the step after the training data.
    Forecast(DrawArgs),
    /// Training and test log scores, MASE and randomized PITs.
    Score(DrawArgs),
    /// Chain stacking weights on the final training steps.
    Stack(StackArgs),
    /// Simulate a counts CSV from fixed clusters and coefficients.
    Simulate(SimulateArgs),
}

/// Options shared by every command that reads a run configuration. Flags
/// override values from the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Output directory [default: $PNARM_OUT_DIR or ./pnarm-out].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    /// Leading time steps used for fitting.
    #[arg(long)]
    pub train_steps: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let paths = &mut c.paths;
        for (slot, flag) in [
            (&mut paths.counts, &self.counts),
            (&mut paths.edges, &self.edges),
            (&mut paths.covariates, &self.covariates),
            (&mut paths.output, &self.out),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        let m = &mut c.mcmc;
        m.seed = self.seed.unwrap_or(m.seed);
        m.chains = self.chains.unwrap_or(m.chains);
        m.iterations = self.iterations.unwrap_or(m.iterations);
        m.burn_in = self.burn_in.unwrap_or(m.burn_in);
        m.thinning = self.thinning.unwrap_or(m.thinning);
        if self.train_steps.is_some() {
            c.eval.train_steps = self.train_steps;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DrawArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Draws file [default: draws.jsonl in the output directory].
    #[arg(long)]
    pub draws: Option<PathBuf>,
    /// Chain weights JSON written by `stack`; chains count equally without it.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StackArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Draws files; every chain in every file is one stacking component.
    #[arg(long, required = true)]
    pub draws: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML simulation spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Counts CSV to write [default: counts.csv in the output directory].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs the parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a.resolve()?).map(drop),
        Command::Forecast(a) => commands::forecast(&a.run.resolve()?, a.draws.as_deref(), a.weights.as_deref()),
        Command::Score(a) => commands::score(&a.run.resolve()?, a.draws.as_deref(), a.weights.as_deref()),
        Command::Stack(a) => commands::stack(&a.run.resolve()?, &a.draws).map(drop),
        Command::Simulate(a) => commands::simulate(&a.spec, a.out.as_deref(), a.seed),
    }
}

/// Parses `args`, runs the command and returns the process exit code,
/// reporting failures on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
