use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ers_cli::gradcheck::{cmd_grad_check, SEEDS, TOLERANCE};
use ers_cli::{eval::cmd_eval, load_config, report::cmd_report, train::cmd_train, CliError};

#[derive(Parser)]
#[command(
    name = "ers",
    version,
    about = "Entropy-regularized clustering ensembles on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every ensemble member and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Fresh output directory; defaults to `out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score checkpoints and write a report bundle.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint files or directories holding `*.ckpt` files.
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Score against subclass labels.
        #[arg(long)]
        subclass_scoring: bool,
    },
    /// Print a summary of a report bundle and write flat tables.
    Report {
        bundle: PathBuf,
        /// Table directory; defaults to `<bundle>/tables`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of every loss term.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let out = out.or_else(|| cfg.out.clone()).ok_or_else(|| {
                CliError::Usage("no output directory: pass --out or set `out`".into())
            })?;
            let manifest = cmd_train(&cfg, &out)?;
            let ok = manifest
                .members
                .iter()
                .filter(|m| m.error.is_none())
                .count();
            println!(
                "trained {ok}/{} members into {}",
                manifest.members.len(),
                out.display()
            );
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Eval {
            config,
            checkpoints,
            out,
            subclass_scoring,
        } => {
            let cfg = load_config(&config, None)?;
            let bundle = cmd_eval(&cfg, &checkpoints, &out, subclass_scoring)?;
            println!(
                "evaluated {} checkpoints into {}",
                bundle.checkpoints.len(),
                out.display()
            );
        }
        Command::Report { bundle, out } => {
            print!("{}", cmd_report(&bundle, out.as_deref())?);
        }
        Command::GradCheck { seed } => {
            let checks = cmd_grad_check(seed)?;
            let mut failed = false;
            for c in &checks {
                let ok = c.max_rel_error < TOLERANCE;
                failed |= !ok;
                println!(
                    "{} {:<22} max rel error {:.3e} (worst seed {})",
                    if ok { "PASS" } else { "FAIL" },
                    c.term,
                    c.max_rel_error,
                    c.seed
                );
            }
            if failed {
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "gradient check above {TOLERANCE} over {SEEDS} seeds"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
