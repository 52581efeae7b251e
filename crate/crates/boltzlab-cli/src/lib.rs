//! Command-line front end: configuration, orchestration and persistence for
//! the simulate, verify-inequalities, detect-singular and exponents
//! workflows.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod workflows;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{parse_config, ConfigError, RunConfig, Workflow};
use workflows::RunError;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "BOLTZLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "boltzlab", version, about = "Boltzmann partial-regularity laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel kernels.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the regularized solver and write diagnostics and snapshots.
    Simulate(CommonArgs),
    /// Check the functional inequalities on the standard ensemble.
    VerifyInequalities(CommonArgs),
    /// Run the singular-time detection pipeline.
    DetectSingular(CommonArgs),
    /// Print the exponent table.
    Exponents {
        #[command(flatten)]
        common: CommonArgs,
        /// Print the schema-versioned JSON record instead of the table.
        #[arg(long)]
        json: bool,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(c) | Command::VerifyInequalities(c) | Command::DetectSingular(c) => c,
            Command::Exponents { common, .. } => common,
        }
    }

    fn workflow(&self) -> Workflow {
        match self {
            Command::Simulate(_) => Workflow::Simulate,
            Command::VerifyInequalities(_) => Workflow::VerifyInequalities,
            Command::DetectSingular(_) => Workflow::DetectSingular,
            Command::Exponents { .. } => Workflow::Exponents,
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(command: &Command) -> Result<RunConfig, ConfigError> {
    let common = command.common();
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    cfg.workflow = command.workflow();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<(), RunError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(RunError::Config("--threads must be at least 1".to_string()));
        }
        // A pool installed earlier in the same process is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<(), RunError> {
    let out = PathBuf::from(&cfg.output_dir);
    match command {
        Command::Simulate(_) => {
            let s = workflows::simulate(cfg, &out)?;
            println!(
                "simulate: {} outputs, mass drift {:e}, entropy variation {:e}",
                s.outputs, s.mass_drift, s.entropy_variation
            );
        }
        Command::VerifyInequalities(_) => {
            let reports = workflows::verify(cfg, &out)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{:<24} {:<4} ratio={:?} constant={:?}",
                    r.inequality_id,
                    if r.pass { "PASS" } else { "FAIL" },
                    r.worst_ratio,
                    r.fitted_constant
                );
                if !r.pass {
                    failed.push(r.inequality_id.clone());
                }
            }
            if !failed.is_empty() {
                return Err(RunError::Domain(format!("inequalities failed: {}", failed.join(", "))));
            }
        }
        Command::DetectSingular(_) => {
            let v = workflows::detect(cfg, &out)?;
            println!(
                "detect-singular: {} (e = {}, budget = {}, {} cover intervals)",
                v.verdict,
                v.exponent_e,
                v.budget,
                v.cover.len()
            );
        }
        Command::Exponents { json, .. } => {
            let es = cfg.exponent_set().map_err(|e| RunError::Config(e.to_string()))?;
            if *json {
                let text = serde_json::to_string_pretty(&output::envelope("exponents", cfg, es))
                    .map_err(|e| RunError::Domain(e.to_string()))?;
                println!("{text}");
            } else {
                print!("{}", workflows::exponent_table(&es));
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit status:
/// 0 on success, 1 for domain errors, 2 for configuration errors.
pub fn execute(cli: &Cli) -> i32 {
    let cfg = match resolve_config(&cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let result = configure_threads(cli.command.common().threads).and_then(|_| dispatch(&cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
