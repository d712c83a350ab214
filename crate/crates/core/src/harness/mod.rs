//! Configuration, persistence and scripted experiments around the solver.

pub mod config;
pub mod experiments;
pub mod io;

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::model::DiagnosticsRecord;
use crate::stepper::{run_from, RunObserver, SystemState, Trajectory};

pub use config::{parse_config, parse_config_with_overrides, RunConfig};

/// Observer that streams the series to CSV and writes checkpoints and
/// failure snapshots into an output directory.
struct DirObserver {
    dir: PathBuf,
    hash: String,
    mass: f64,
    series: io::SeriesWriter,
    /// The first sample repeats the last row of a resumed series.
    skip_next: bool,
}

impl RunObserver for DirObserver {
    fn checkpoint(&mut self, state: &SystemState, step: u64) -> Result<()> {
        let path = self.dir.join("checkpoints").join(format!("step_{step:010}.snap"));
        io::write_snapshot(&path, state, step, &self.hash, self.mass)
    }

    fn failure(&mut self, state: &SystemState, step: u64) -> Option<PathBuf> {
        let path = self.dir.join("failure.snap");
        io::write_snapshot(&path, state, step, &self.hash, self.mass).ok().map(|_| path)
    }

    fn sample(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        if std::mem::take(&mut self.skip_next) {
            return Ok(());
        }
        self.series.push(record)
    }
}

/// Run the configured system, writing `series.csv`, periodic checkpoints
/// and `final.snap` to `out`. With `resume`, continue from a checkpoint
/// written under the same dynamics (the parameter hash must match).
pub fn execute_run(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<Trajectory> {
    std::fs::create_dir_all(out)?;
    let hash = io::param_hash(cfg);
    let series_path = out.join("series.csv");
    let (init, mass, start, series, skip_next) = match resume {
        Some(p) => {
            let snap = io::restore(p, &hash)?;
            let series = if series_path.exists() {
                io::SeriesWriter::append(&series_path)?
            } else {
                io::SeriesWriter::create(&series_path)?
            };
            (snap.state, snap.reference_mass, snap.header.step, series, true)
        }
        None => {
            let init = experiments::initial_state(cfg)?;
            let mass = experiments::total_mass(&init);
            (init, mass, 0, io::SeriesWriter::create(&series_path)?, false)
        }
    };
    let params = cfg.model_params(mass)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut obs = DirObserver {
        dir: out.to_path_buf(),
        hash: hash.clone(),
        mass,
        series,
        skip_next,
    };
    let traj = run_from(init, start, &params, &cfg.stepper, &cfg.schedule, &mut obs)?;
    io::write_snapshot(&out.join("final.snap"), &traj.final_state, traj.final_step, &hash, mass)?;
    Ok(traj)
}

/// Write a report as pretty JSON.
pub fn write_report<T: serde::Serialize>(path: &Path, report: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}
