use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slfv_cli::config::case_name;
use slfv_cli::{emit_plotdata, load_config, prepare, run, PlotError, RunOptions, RunStatus, View};

const VALIDATION: u8 = 1;
const RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "slfv", version, about = "Genealogies of the spatial Lambda-Fleming-Viot process on a torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and print its limit classification.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an experiment and write its artifact directory.
    Run(RunArgs),
    /// Print a tidy CSV view of a finished artifact directory.
    Plotdata {
        /// Artifact directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        view: View,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, env = "SLFV_SEED")]
    seed: Option<u64>,
    /// Worker threads; defaults to every core.
    #[arg(long, env = "SLFV_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Continue an interrupted run in `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!("ok: {} experiment", cfg.kind);
                println!("regime: {}", case_name(cfg.case.as_ref()));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(VALIDATION)
            }
        },
        Command::Run(args) => run_cmd(args),
        Command::Plotdata { out, view } => {
            let stdout = io::stdout();
            match emit_plotdata(&out, view, stdout.lock()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e @ PlotError::WrongKind { .. }) => {
                    eprintln!("{e}");
                    ExitCode::from(VALIDATION)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(RUNTIME)
                }
            }
        }
    }
}

fn run_cmd(args: RunArgs) -> ExitCode {
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(VALIDATION);
        }
    };
    let job = match prepare(&cfg) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(VALIDATION);
        }
    };
    let opts = RunOptions {
        out: args.out,
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        threads: args.threads,
        resume: args.resume,
        stop_after: args.stop_after,
    };
    match run(&job, &cfg, &opts) {
        Ok(RunStatus::Complete(m)) => {
            let _ = writeln!(
                io::stdout(),
                "wrote {} files to {} in {:.2}s",
                m.files.len() + 1,
                opts.out.display(),
                m.wall_time_seconds
            );
            ExitCode::SUCCESS
        }
        Ok(RunStatus::Interrupted { done, total }) => {
            println!("stopped after {done} of {total} replicates; rerun with --resume");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(RUNTIME)
        }
    }
}
