use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qpat_cli::commands::{reconstruct, report, simulate, verify};
use qpat_cli::config::RunConfig;
use qpat_cli::error::{CliError, Result};

/// Quantitative photoacoustic tomography: simulate data, reconstruct
/// absorption and scattering, verify invariants, summarize runs.
#[derive(Parser)]
#[command(name = "qpat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (noise.seed for simulate, algorithm.seed for reconstruct).
    #[arg(long)]
    seed: Option<u64>,
    /// Export an image every k iterations (overrides output.checkpoint_every).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy pressure data from the phantom.
    Simulate(RunArgs),
    /// Reconstruct parameters from simulated data.
    Reconstruct {
        #[command(flatten)]
        args: RunArgs,
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run invariant checks and print a JSON report.
    Verify {
        /// adjoints, isometry, gradients, dykstra, degeneracy or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Summarize reconstruction runs found in a directory.
    Report {
        /// Directory holding runs (itself or its subdirectories).
        #[arg(long)]
        dir: PathBuf,
        /// Where to write the report; defaults to `--dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs, seed: impl FnOnce(&mut RunConfig, u64)) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        seed(&mut cfg, s);
    }
    if let Some(k) = args.checkpoint_every {
        cfg.output.checkpoint_every = k;
    }
    if let Some(o) = &args.out {
        cfg.output.dir = Some(o.display().to_string());
    }
    let out = cfg.output.dir.clone().map(PathBuf::from).ok_or_else(|| {
        CliError::Usage("no output directory: pass --out or set output.dir".into())
    })?;
    Ok((cfg.resolve()?, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let (cfg, out) = load(&args, |c, s| c.noise.seed = s)?;
            let names = simulate::run(&cfg, &out)?;
            eprintln!("wrote {} files to {}", names.len() + 1, out.display());
        }
        Command::Reconstruct { args, data } => {
            let (cfg, out) = load(&args, |c, s| c.algorithm.seed = s)?;
            let s = reconstruct::run(&cfg, &data, &out)?;
            eprintln!(
                "{}: {} iterations, relative error of mu_a {:.4} -> {:.4}",
                s.algorithm, s.iterations, s.initial_rel_err_mu_a, s.final_rel_err_mu_a
            );
        }
        Command::Verify { suite } => {
            let suite = verify::Suite::parse(&suite)?;
            let rep = verify::run(suite, &verify::VerifyGrid::default())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&rep).expect("serializable")
            );
            if !rep.pass {
                let failed: Vec<&str> = rep
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
        Command::Report { dir, out } => {
            let rep = report::collect(&dir)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            let out = out.as_deref().unwrap_or(Path::new(&dir));
            report::write(&rep, out)?;
            eprintln!("{} runs summarized in {}", rep.runs.len(), out.display());
        }
    }
    Ok(())
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
