//! Diagnostics series (CSV), binary snapshots and parameter hashing.
//!
//! A snapshot is one line of JSON header followed by the raw little-endian
//! `f64` payload of the fields listed in the header, in order. Restoring a
//! snapshot reproduces the state bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Geometry, GeometryConfig, ParamsConfig, RunConfig};
use crate::bulk::{BulkField, DiskGrid};
use crate::error::{Error, Result};
use crate::model::{DiagnosticsRecord, FullState, ReducedState};
use crate::stepper::{StepperConfig, SystemState};
use crate::surface::{SurfaceField, SurfaceGrid};

const MAGIC: &str = "raftsim-snapshot";
const VERSION: u32 = 1;

/// Write diagnostics as CSV with a header row. Floats carry 17 significant
/// digits so the file reproduces the in-memory values exactly.
pub fn write_series(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = SeriesWriter::create(path)?;
    for r in records {
        w.push(r)?;
    }
    w.flush()
}

/// Incremental CSV writer, flushed per row so partial runs leave usable
/// output.
pub struct SeriesWriter {
    inner: csv::Writer<File>,
}

impl SeriesWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(DiagnosticsRecord::COLUMNS)?;
        Ok(Self { inner })
    }

    /// Continue an existing file (after a restore); no header is written.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        let inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self { inner })
    }

    pub fn push(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        let row: Vec<String> = r
            .to_row()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if DiagnosticsRecord::COLUMNS[i] == "newton_iters" {
                    format!("{}", *x as u64)
                } else {
                    format!("{x:.16e}")
                }
            })
            .collect();
        self.inner.write_record(&row)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_series(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != DiagnosticsRecord::COLUMNS {
        return Err(Error::Format(format!("unexpected series header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let vals: std::result::Result<Vec<f64>, _> = row.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Format(format!("bad number in series: {e}")))?;
        let row: [f64; 14] = vals
            .try_into()
            .map_err(|_| Error::Format("wrong column count in series".into()))?;
        out.push(DiagnosticsRecord::from_row(&row));
    }
    Ok(out)
}

/// Hash of everything that determines the dynamics: geometry, model
/// parameters and stepper settings.
pub fn param_hash(cfg: &RunConfig) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        geometry: &'a GeometryConfig,
        params: &'a ParamsConfig,
        stepper: &'a StepperConfig,
    }
    let canonical = serde_json::to_vec(&Hashed {
        geometry: &cfg.geometry,
        params: &cfg.params,
        stepper: &cfg.stepper,
    })
    .expect("configuration serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSystem {
    Full,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub system: SnapshotSystem,
    pub geometry: Geometry,
    pub step: u64,
    /// Informational; the exact time is stored in the `scalars` field.
    pub t: f64,
    pub param_hash: String,
    pub fields: Vec<FieldEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub state: SystemState,
    pub reference_mass: f64,
}

fn geometry_of(state: &SystemState) -> Geometry {
    use crate::surface::SurfaceKind;
    match state {
        SystemState::Full(s) => Geometry::Disk {
            nr: s.u.grid().nr(),
            n: s.u.grid().ntheta(),
        },
        SystemState::Reduced(s) => match s.phi.grid().kind() {
            SurfaceKind::Circle { n } => Geometry::Circle { n },
            SurfaceKind::Torus { nx, ny, lx, ly } => Geometry::Torus { nx, ny, lx, ly },
        },
    }
}

/// `reference_mass` is the total mass the run started from; it pins
/// mass-dependent parameter defaults so a resumed run is bit-identical.
pub fn write_snapshot(
    path: &Path,
    state: &SystemState,
    step: u64,
    param_hash: &str,
    reference_mass: f64,
) -> Result<()> {
    let (system, fields): (SnapshotSystem, Vec<(&str, Vec<f64>)>) = match state {
        SystemState::Full(s) => (
            SnapshotSystem::Full,
            vec![
                ("scalars", vec![s.t, reference_mass]),
                ("u", s.u.values().to_vec()),
                ("phi", s.phi.values().to_vec()),
                ("v", s.v.values().to_vec()),
            ],
        ),
        SystemState::Reduced(s) => (
            SnapshotSystem::Reduced,
            vec![
                ("scalars", vec![s.t, reference_mass, s.u, s.total_mass, s.omega_measure]),
                ("phi", s.phi.values().to_vec()),
                ("v", s.v.values().to_vec()),
            ],
        ),
    };
    let header = SnapshotHeader {
        format: MAGIC.into(),
        version: VERSION,
        system,
        geometry: geometry_of(state),
        step,
        t: state.t(),
        param_hash: param_hash.into(),
        fields: fields
            .iter()
            .map(|(n, v)| FieldEntry {
                name: (*n).into(),
                len: v.len(),
            })
            .collect(),
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    // write to a sibling file first so a crash never leaves a torn snapshot
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (_, values) in &fields {
            for x in values {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.format != MAGIC || header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported snapshot {} v{}",
            header.format, header.version
        )));
    }
    let mut fields = std::collections::HashMap::new();
    for entry in &header.fields {
        let mut buf = vec![0u8; entry.len * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated field {}", entry.name)))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        fields.insert(entry.name.clone(), vals);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let mut take = |name: &str| {
        fields
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing field {name}")))
    };
    let surface = |g: &Geometry| -> Result<Arc<SurfaceGrid>> {
        match *g {
            Geometry::Circle { n } | Geometry::Disk { n, .. } => SurfaceGrid::circle(n),
            Geometry::Torus { nx, ny, lx, ly } => SurfaceGrid::torus(nx, ny, lx, ly),
        }
    };
    let sgrid = surface(&header.geometry)?;
    let scalars = take("scalars")?;
    let phi = SurfaceField::new(sgrid.clone(), take("phi")?)?;
    let v = SurfaceField::new(sgrid.clone(), take("v")?)?;
    let (state, reference_mass) = match header.system {
        SnapshotSystem::Full => {
            let Geometry::Disk { nr, .. } = header.geometry else {
                return Err(Error::Format("full snapshot without disk geometry".into()));
            };
            let disk = DiskGrid::new(nr, sgrid)?;
            let u = BulkField::new(disk, take("u")?)?;
            let &[t, m] = scalars.as_slice() else {
                return Err(Error::Format("full snapshot needs two scalars".into()));
            };
            (SystemState::Full(FullState::new(t, u, phi, v)?), m)
        }
        SnapshotSystem::Reduced => {
            let &[t, m, u, total_mass, omega_measure] = scalars.as_slice() else {
                return Err(Error::Format("reduced snapshot needs five scalars".into()));
            };
            let state = SystemState::Reduced(ReducedState {
                t,
                u,
                phi,
                v,
                total_mass,
                omega_measure,
            });
            (state, m)
        }
    };
    Ok(Snapshot {
        header,
        state,
        reference_mass,
    })
}

/// Read a snapshot and check it was produced with the same dynamics.
pub fn restore(path: &Path, expected_hash: &str) -> Result<Snapshot> {
    let snap = read_snapshot(path)?;
    if snap.header.param_hash != expected_hash {
        return Err(Error::HashMismatch {
            expected: expected_hash.into(),
            found: snap.header.param_hash,
        });
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::default_config;

    fn record(i: u64) -> DiagnosticsRecord {
        let x = 0.1 * i as f64 + 1.0 / 3.0;
        DiagnosticsRecord {
            t: x,
            total_energy: -x * 7.0,
            surface_energy: x.sqrt(),
            lyapunov_g: 1e-300 * x,
            combined_mass: std::f64::consts::PI,
            phi_mass: -0.0,
            separation_margin: 1e-13,
            bulk_dissipation: 1e20 / 3.0,
            mu_dissipation: x.exp(),
            eta_dissipation: 0.0,
            q_integral: -x,
            q_work: 2.0 * x,
            newton_iters: i,
            u_scalar: x.ln(),
        }
    }

    #[test]
    fn series_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let recs: Vec<_> = (0..5).map(record).collect();
        write_series(&path, &recs).unwrap();
        let back = read_series(&path).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            for (x, y) in a.to_row().iter().zip(b.to_row().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&DiagnosticsRecord::COLUMNS.join(",")));
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = SurfaceGrid::circle(16).unwrap();
        let disk = DiskGrid::new(6, g.clone()).unwrap();
        let u = BulkField::from_fn(disk, |r, t| (r * 3.3).sin() + t.cos() / 7.0);
        let phi = SurfaceField::from_fn(g.clone(), |t, _| 0.3 * t.sin() + 1.0 / 3.0);
        let v = SurfaceField::from_fn(g.clone(), |t, _| 0.5 + 0.1 * (2.0 * t).cos());
        let full = SystemState::Full(FullState::new(0.7 / 3.0, u, phi.clone(), v.clone()).unwrap());
        let path = dir.path().join("a.snap");
        write_snapshot(&path, &full, 42, "abc", 1.0 / 7.0).unwrap();
        let snap = restore(&path, "abc").unwrap();
        assert_eq!(snap.state, full);
        assert_eq!(snap.reference_mass, 1.0 / 7.0);
        assert_eq!(snap.header.step, 42);
        assert!(matches!(restore(&path, "xyz"), Err(Error::HashMismatch { .. })));

        let reduced = SystemState::Reduced(ReducedState::from_initial(0.123456789, phi, v, 2.5).unwrap());
        write_snapshot(&path, &reduced, 3, "h", 2.0).unwrap();
        assert_eq!(read_snapshot(&path).unwrap().state, reduced);
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = SurfaceGrid::circle(8).unwrap();
        let f = SurfaceField::constant(g, 0.1);
        let s = SystemState::Reduced(ReducedState::from_initial(0.0, f.clone(), f, 1.0).unwrap());
        let path = dir.path().join("t.snap");
        write_snapshot(&path, &s, 0, "h", 0.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format(_))));
    }

    #[test]
    fn hash_tracks_dynamics_only() {
        let a = default_config(Geometry::Circle { n: 32 });
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        b.schedule.t_final = 99.0;
        assert_eq!(param_hash(&a), param_hash(&b));
        b.params.delta = 2.0;
        assert_ne!(param_hash(&a), param_hash(&b));
        assert_eq!(param_hash(&a).len(), 64);
    }
}
