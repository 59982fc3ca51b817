//! `umelab` command-line experiments.
//!
//! Exit codes: 0 when every comparison passes, 1 on usage or runtime errors,
//! 2 when at least one comparison misses its tolerance.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{Effective, Options};

#[derive(Parser)]
#[command(name = "umelab", version, about = "Spectral statistics of the uni-modular ensemble")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sampled UME trace moments and GUE moments against exact values
    Moments(CommandArgs),
    /// Eigenvalue histogram against the mean density, semicircle and GUE density
    Density(CommandArgs),
    /// Spectral form factor against the GUE expression
    Formfactor(CommandArgs),
    /// Walk enumeration against operator traces and sampled means
    Walks(CommandArgs),
    /// Bass identity residual sweep
    Bass(CommandArgs),
    /// Drift, diffusion and remainder reports for the phase Brownian motion
    Brownian(CommandArgs),
    /// Moment and Wasserstein diagnostics of centered Chebyshev traces
    Gaussianity(CommandArgs),
}

#[derive(clap::Args)]
struct CommandArgs {
    /// JSON file with any of the option names as keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    options: Options,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, args, run): (&str, CommandArgs, fn(&Effective) -> commands::CmdResult) = match cli.command {
        Command::Moments(a) => ("moments", a, commands::moments),
        Command::Density(a) => ("density", a, commands::density),
        Command::Formfactor(a) => ("formfactor", a, commands::formfactor),
        Command::Walks(a) => ("walks", a, commands::walks),
        Command::Bass(a) => ("bass", a, commands::bass),
        Command::Brownian(a) => ("brownian", a, commands::brownian),
        Command::Gaussianity(a) => ("gaussianity", a, commands::gaussianity),
    };
    let file = match args.config.as_deref().map(Options::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cfg = Effective::resolve(args.options.over(file), &commands::defaults(name));
    let workers = umelab::mcharness::resolve_workers(cfg.workers);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("warning: could not size the worker pool: {e}");
    }

    let start = Instant::now();
    let mut result = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    result.elapsed_seconds = start.elapsed().as_secs_f64();
    match result.write(&cfg.out_dir) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: cannot write results to {}: {e}", cfg.out_dir.display());
            return ExitCode::from(1);
        }
    }
    for c in &result.checks {
        println!("{} {}: observed {:.6e}, expected {:.6e} (tolerance {:.3e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.observed, c.expected, c.tolerance);
    }
    for n in &result.notes {
        println!("note: {n}");
    }
    if result.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
