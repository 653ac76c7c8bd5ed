use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinv_core::run::{cmd_forward, cmd_inverse, cmd_verify, RunManifest, RunOptions, Suite};

/// Forward and inverse solver for the modified nonlinear kinetic equation.
#[derive(Parser)]
#[command(name = "kinv", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat validation warnings as errors.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the direct problem.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the source factor or absorption coefficient from psi.
    Inverse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a verification suite: mms, oracle, stability or alpha.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn report(m: &RunManifest) -> ExitCode {
    if let Some(err) = &m.error {
        eprintln!("kinv {}: {err}", m.command);
        if let Some(v) = m.summary.get("violations").and_then(|v| v.as_array()) {
            for v in v {
                eprintln!("  {}: {}", v["code"].as_str().unwrap_or("?"), v["message"].as_str().unwrap_or(""));
            }
        }
    } else {
        eprintln!(
            "kinv {}: ok in {:.3} s, {} artifacts in {}",
            m.command,
            m.wall_time,
            m.artifact_list.len(),
            m.output_dir.display()
        );
    }
    ExitCode::from(m.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KINV_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("kinv: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions { strict: cli.strict };
    let manifest = match &cli.command {
        Command::Forward { config, out } => cmd_forward(config, out, opts),
        Command::Inverse { config, out } => cmd_inverse(config, out, opts),
        Command::Verify { suite, config, out } => cmd_verify(*suite, config.as_deref(), out, opts),
    };
    report(&manifest)
}
