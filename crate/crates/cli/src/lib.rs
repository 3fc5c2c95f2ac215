//! Command-line front end for the `hfscat_core` scattering toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod suites;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use hfscat_core::Model;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::Ctx;

#[derive(Debug, Parser)]
#[command(name = "hfscat", version, about = "Forward and inverse scattering for Hartree-type NLS")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Template {
    Rh,
    Hartree,
    Hf,
}

impl From<Template> for Model {
    fn from(t: Template) -> Self {
        match t {
            Template::Rh => Model::Rh,
            Template::Hartree => Model::Hartree,
            Template::Hf => Model::Hf,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a starting configuration, or write `config.json` under `--out`.
    GenConfig {
        #[arg(long, value_enum, default_value = "rh")]
        template: Template,
    },
    /// Pairings over the dilation interval.
    Forward,
    /// Pairing against probe speed and probe amplitude.
    PairingSweep,
    /// Linearized kernel on the dilation and frequency grids.
    Kernel,
    /// Regularized reconstruction from `kernel.bin` and `forward.json`.
    Invert {
        /// `tsvd[:k]`, `discrepancy[:tau]` or `tikhonov:alpha`.
        #[arg(long)]
        reg: Option<String>,
    },
    /// Orthogonality checks and the localized comparison of two potentials.
    Uniqueness,
    /// Run a validation suite.
    Validate {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Plots from the files already in the output directory.
    Report,
}

fn load(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Schema {
        path: "--config".into(),
        message: "a configuration file is required".into(),
    })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::GenConfig { .. } => "gen-config",
        Command::Forward => "forward",
        Command::PairingSweep => "pairing-sweep",
        Command::Kernel => "kernel",
        Command::Invert { .. } => "invert",
        Command::Uniqueness => "uniqueness",
        Command::Validate { .. } => "validate",
        Command::Report => "report",
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::GenConfig { template } = &cli.command {
        if let Some(path) = commands::gen_config((*template).into(), cli.out.as_deref())? {
            eprintln!("wrote {}", path.display());
        }
        return Ok(());
    }
    let cfg = load(&cli)?;
    let out = cfg.output_dir.clone();
    let mut ctx = Ctx::new(cfg, out, subcommand_name(&cli.command))?;
    let mut failure = None;
    match &cli.command {
        Command::GenConfig { .. } => unreachable!(),
        Command::Forward => {
            let fd = commands::forward(&mut ctx)?;
            eprintln!(
                "{} dilations, remainder estimate {:.3e}",
                fd.lambda.len(),
                fd.noise_estimate
            );
        }
        Command::PairingSweep => {
            let (vs, amp) = commands::pairing_sweep(&mut ctx)?;
            eprintln!(
                "{} speeds, slope {:?}, small-amplitude limit {:?}",
                vs.rows.len(),
                vs.slope,
                amp.extrapolated
            );
            if let Some(f) = vs.failure {
                eprintln!("sweep stopped early: {f}");
            }
        }
        Command::Kernel => {
            let sha = commands::kernel(&mut ctx)?;
            eprintln!("kernel.bin sha256 {sha}");
        }
        Command::Invert { reg } => {
            let inv = commands::invert(&mut ctx, reg.as_deref())?;
            eprintln!(
                "k* {}, band {}, band error {:.3e}",
                inv.result.truncation_index, inv.band, inv.band_error
            );
        }
        Command::Uniqueness => {
            let u = commands::uniqueness(&mut ctx)?;
            eprintln!("verdict {:?}", u.compared.verdict);
        }
        Command::Validate { suite } => {
            for r in commands::validate(&mut ctx, suite)? {
                if let Err(e) = r.into_result() {
                    failure.get_or_insert(e);
                }
            }
        }
        Command::Report => {
            let n = commands::report(&mut ctx)?;
            eprintln!("{n} plots");
        }
    }
    ctx.finish()?;
    failure.map_or(Ok(()), Err)
}
