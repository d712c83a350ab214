use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use raftsim::error::ConfigIssue;
use raftsim::harness::config::{ExperimentKind, Geometry, SystemKind};
use raftsim::harness::{execute_run, experiments, parse_config_with_overrides, write_report, RunConfig};
use raftsim::Error;

#[derive(Parser)]
#[command(name = "raftsim", version, about = "Bulk-surface lipid raft simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full bulk-surface system (disk geometry).
    RunFull(Common),
    /// Integrate the reduced system with spatially constant bulk.
    RunReduced(Common),
    /// Solve the stationary problem and post-process the constants.
    Steady(Common),
    /// Large-diffusion sweep over `experiment.d_list`.
    SweepD(Common),
    /// Regularization sweep over `experiment.kappa_list`.
    SweepKappa(Common),
    /// Long run towards equilibrium with a convergence report.
    ConvergeEq(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a snapshot written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// `KEY=VALUE` with a dotted key, applied before validation.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn load(c: &Common) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(&c.config).map_err(|e| {
        Error::Config(vec![ConfigIssue {
            key: String::new(),
            line: None,
            message: format!("cannot read {}: {e}", c.config.display()),
        }])
    })?;
    let mut cfg = parse_config_with_overrides(&text, &c.overrides)?;
    if let Some(out) = &c.out {
        cfg.output.dir = out.display().to_string();
    }
    Ok(cfg)
}

fn config_error(message: &str) -> Error {
    Error::Config(vec![ConfigIssue {
        key: "experiment.system".into(),
        line: None,
        message: message.into(),
    }])
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::RunFull(c)
            | Self::RunReduced(c)
            | Self::Steady(c)
            | Self::SweepD(c)
            | Self::SweepKappa(c)
            | Self::ConvergeEq(c) => c,
        }
    }
}

fn dispatch(which: &Command) -> Result<String, Error> {
    let c = which.common();
    let mut cfg = load(c)?;
    let out = PathBuf::from(&cfg.output.dir);
    let report = out.join("report.json");
    match which {
        Command::RunFull(_) | Command::RunReduced(_) => {
            if matches!(which, Command::RunFull(_)) {
                if !matches!(cfg.geometry.shape, Geometry::Disk { .. }) {
                    return Err(config_error("run-full requires disk geometry"));
                }
                cfg.experiment.system = SystemKind::Full;
            } else {
                cfg.experiment.system = SystemKind::Reduced;
            }
            match cfg.experiment.kind {
                ExperimentKind::Absorbing => {
                    let r = experiments::absorbing(&cfg, &cfg.experiment.amplitudes)?;
                    write_report(&report, &r)?;
                }
                ExperimentKind::Continuity => {
                    let r = experiments::continuous_dependence(&cfg, &cfg.experiment.amplitudes)?;
                    write_report(&report, &r)?;
                }
                _ => {
                    let traj = execute_run(&cfg, &out, c.resume.as_deref())?;
                    for w in &traj.warnings {
                        eprintln!("warning: {w}");
                    }
                    return Ok(format!(
                        "completed step {} at t = {}; output in {}",
                        traj.final_step,
                        traj.final_state.t(),
                        out.display()
                    ));
                }
            }
        }
        Command::Steady(_) => write_report(&report, &experiments::steady(&cfg)?)?,
        Command::SweepD(_) => {
            write_report(&report, &experiments::large_d(&cfg, &cfg.experiment.d_list)?)?
        }
        Command::SweepKappa(_) => write_report(
            &report,
            &experiments::kappa_refinement(&cfg, &cfg.experiment.kappa_list)?,
        )?,
        Command::ConvergeEq(_) => {
            write_report(&report, &experiments::equilibrium_convergence(&cfg)?)?
        }
    }
    Ok(format!("report written to {}", report.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Config(_) | Error::HashMismatch { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
