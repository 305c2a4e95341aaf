use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stokes_cem::experiment::{run_command, write_error, ErrorRecord, ExperimentConfig};
use stokes_cem::{Command, Error};

/// Multiscale Stokes solver for perforated domains.
#[derive(Parser)]
#[command(name = "stokes-cem", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON, "schema": 1).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single solve at the first coarse level.
    Solve(Common),
    /// Error table over all coarse levels.
    Convergence(Common),
    /// Exterior energy of global basis functions per layer.
    Decay(Common),
    /// Local eigenvalue spectra with Λ and Γ.
    Eigreport(Common),
}

fn fail(out: Option<&Path>, e: &Error, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&ErrorRecord::from(e)).expect("serializable"));
    if let Some(out) = out {
        let _ = write_error(out, e);
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Decay(a) => (Command::Decay, a),
        Cmd::Eigreport(a) => (Command::EigReport, a),
    };
    if !args.config.is_file() {
        let e = Error::Io(format!("config file {} not found", args.config.display()));
        return fail(None, &e, 2);
    }
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(Some(&args.out), &e, 2),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads == Some(0) {
        return fail(Some(&args.out), &Error::Config("--threads must be positive".into()), 2);
    }
    match run_command(cmd, &cfg, &args.out, args.threads) {
        Ok(files) => {
            println!("{}", serde_json::json!({ "out": args.out, "files": files }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(Some(&args.out), &e, 1),
    }
}
