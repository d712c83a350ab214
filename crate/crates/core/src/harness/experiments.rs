//! Scripted experiments. Sweeps run their elements as independent jobs on a
//! thread pool capped by `RAFTSIM_THREADS`; reports are assembled in
//! parameter order so the output does not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{InitialKind, PotentialName, RunConfig, SystemKind};
use super::io::read_snapshot;
use crate::bulk::{bulk_integral, bulk_l2_sq, bulk_mean, BulkField};
use crate::error::{Error, Result};
use crate::model::{chem_eta, chem_mu, FullState, Params, ReducedState};
use crate::steady::{postprocess_constants, solve_stationary_phi, steady_residual, EquilibriumData, VolumeRule};
use crate::stepper::{run, run_from, RunObserver, Schedule, SystemState, Trajectory};
use crate::surface::SurfaceField;

/// Run `f` on a pool sized by `RAFTSIM_THREADS` (default: all cores).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var("RAFTSIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        x.iter_mut().for_each(|v| *v /= max);
    }
    x
}

/// Initial `(φ₀, v₀)` on the surface grid of `cfg`.
fn initial_surface(cfg: &RunConfig) -> Result<(SurfaceField, SurfaceField)> {
    let grid = cfg.surface_grid()?;
    let ic = &cfg.initial;
    let n = grid.len();
    let (phi, v) = match ic.kind {
        InitialKind::Constant => (vec![ic.phi; n], vec![ic.v; n]),
        InitialKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(ic.seed.unwrap_or(0));
            let a = noise(&mut rng, n);
            let b = noise(&mut rng, n);
            (
                a.iter().map(|x| ic.phi + ic.amplitude * x).collect(),
                b.iter().map(|x| ic.v + ic.v_amplitude * x).collect(),
            )
        }
        InitialKind::Cosine => {
            let k = ic.mode as f64;
            let lx = match cfg.geometry.shape {
                super::config::Geometry::Torus { lx, .. } => lx,
                _ => 2.0 * std::f64::consts::PI,
            };
            let phi = (0..n)
                .map(|i| ic.phi + ic.amplitude * (2.0 * std::f64::consts::PI * k * grid.node(i).0 / lx).cos())
                .collect();
            (phi, vec![ic.v; n])
        }
        InitialKind::File => unreachable!("file data is loaded whole"),
    };
    Ok((SurfaceField::new(grid.clone(), phi)?, SurfaceField::new(grid, v)?))
}

fn initial_bulk(cfg: &RunConfig) -> Result<BulkField> {
    let disk = cfg.disk_grid()?;
    let (u, a) = (cfg.initial.u, cfg.initial.u_perturbation);
    Ok(BulkField::from_fn(disk, |r, _| u + a * (r * r - 0.5)))
}

fn check_admissible(cfg: &RunConfig, phi: &SurfaceField) -> Result<()> {
    if cfg.params.potential.kind == PotentialName::Logarithmic && phi.max_abs() >= 1.0 {
        return Err(Error::Precondition("initial phi violates |phi| < 1".into()));
    }
    Ok(())
}

/// Full-system initial state described by `cfg`.
pub fn full_initial(cfg: &RunConfig) -> Result<FullState> {
    if cfg.initial.kind == InitialKind::File {
        return match load_initial_file(cfg)? {
            SystemState::Full(s) => Ok(s),
            SystemState::Reduced(_) => Err(Error::Precondition("snapshot holds a reduced state".into())),
        };
    }
    let (phi, v) = initial_surface(cfg)?;
    check_admissible(cfg, &phi)?;
    FullState::new(0.0, initial_bulk(cfg)?, phi, v)
}

/// Reduced initial state. On a disk the bulk data is averaged, so the
/// reduced run starts from the same total mass as the full one.
pub fn reduced_initial(cfg: &RunConfig) -> Result<ReducedState> {
    if cfg.initial.kind == InitialKind::File {
        return match load_initial_file(cfg)? {
            SystemState::Reduced(s) => Ok(s),
            SystemState::Full(s) => reduce(&s),
        };
    }
    let (phi, v) = initial_surface(cfg)?;
    check_admissible(cfg, &phi)?;
    let u = match cfg.geometry.shape {
        super::config::Geometry::Disk { .. } => bulk_mean(&initial_bulk(cfg)?),
        _ => cfg.initial.u,
    };
    ReducedState::from_initial(u, phi, v, cfg.omega_measure())
}

/// Replace the bulk field by its mean.
pub fn reduce(s: &FullState) -> Result<ReducedState> {
    let omega = s.u.grid().total_measure();
    let mut r = ReducedState::from_initial(bulk_mean(&s.u), s.phi.clone(), s.v.clone(), omega)?;
    r.t = s.t;
    Ok(r)
}

fn load_initial_file(cfg: &RunConfig) -> Result<SystemState> {
    let path = cfg
        .initial
        .path
        .as_ref()
        .ok_or_else(|| Error::Precondition("file initial data needs a path".into()))?;
    Ok(read_snapshot(std::path::Path::new(path))?.state)
}

/// Initial state for the system selected by the configuration.
pub fn initial_state(cfg: &RunConfig) -> Result<SystemState> {
    Ok(match cfg.experiment.system {
        SystemKind::Full => SystemState::Full(full_initial(cfg)?),
        SystemKind::Reduced => SystemState::Reduced(reduced_initial(cfg)?),
    })
}

pub fn total_mass(state: &SystemState) -> f64 {
    match state {
        SystemState::Full(s) => bulk_integral(&s.u) + s.v.grid().integral(s.v.values()),
        SystemState::Reduced(s) => s.total_mass,
    }
}

/// Integrate the configured system from its initial state.
pub fn simulate(cfg: &RunConfig) -> Result<Trajectory> {
    let init = initial_state(cfg)?;
    let params = cfg.model_params(total_mass(&init))?;
    run(init, &params, &cfg.stepper, &cfg.schedule)
}

struct Collect<F, T> {
    f: F,
    out: Vec<T>,
}

impl<F: FnMut(&SystemState) -> T, T> RunObserver for Collect<F, T> {
    fn checkpoint(&mut self, state: &SystemState, _step: u64) -> Result<()> {
        self.out.push((self.f)(state));
        Ok(())
    }
}

/// Run and evaluate `f` on the state at every sample (including the
/// initial one).
pub fn run_collect<T>(
    init: SystemState,
    params: &Params,
    cfg: &RunConfig,
    f: impl FnMut(&SystemState) -> T,
) -> Result<(Trajectory, Vec<T>)> {
    let schedule = Schedule {
        checkpoint_stride: cfg.schedule.sample_stride,
        ..cfg.schedule
    };
    let mut obs = Collect { f, out: Vec::new() };
    obs.out.push((obs.f)(&init));
    let traj = run_from(init, 0, params, &cfg.stepper, &schedule, &mut obs)?;
    Ok((traj, obs.out))
}

// ---------------------------------------------------------------------------
// large diffusion limit

#[derive(Debug, Clone, Serialize)]
pub struct LargeDRow {
    pub diffusivity: f64,
    /// `sup_t |⟨u_D⟩_Ω − u_reduced|` over the samples.
    pub mean_error: f64,
    /// `∫₀^T ‖∇u_D‖² dt` (right-endpoint rule over the samples).
    pub heterogeneity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LargeDReport {
    pub config: RunConfig,
    pub rows: Vec<LargeDRow>,
    pub reduced_final_u: f64,
}

pub fn large_d(cfg: &RunConfig, d_list: &[f64]) -> Result<LargeDReport> {
    if d_list.is_empty() {
        return Err(Error::Precondition("the diffusivity list is empty".into()));
    }
    let full = full_initial(cfg)?;
    let reduced = reduce(&full)?;
    let mass = reduced.total_mass;
    let mut ds = d_list.to_vec();
    ds.sort_by(f64::total_cmp);

    let jobs: Vec<Option<f64>> = std::iter::once(None).chain(ds.iter().copied().map(Some)).collect();
    let results: Vec<Result<Trajectory>> = with_pool(|| {
        jobs.par_iter()
            .map(|job| {
                let mut c = cfg.clone();
                if let Some(d) = job {
                    c.params.diffusivity = *d;
                }
                let params = c.model_params(mass)?;
                let init = match job {
                    None => SystemState::Reduced(reduced.clone()),
                    Some(_) => SystemState::Full(full.clone()),
                };
                run(init, &params, &c.stepper, &c.schedule)
            })
            .collect()
    });
    let mut results = results.into_iter();
    let red = results.next().expect("reduced job")?;
    let mut rows = Vec::with_capacity(ds.len());
    for (d, res) in ds.iter().zip(results) {
        let traj = res?;
        let mean_error = traj
            .records
            .iter()
            .zip(&red.records)
            .map(|(a, b)| (a.u_scalar - b.u_scalar).abs())
            .fold(0.0, f64::max);
        let heterogeneity = traj
            .records
            .windows(2)
            .map(|w| (w[1].t - w[0].t) * w[1].bulk_dissipation / d)
            .sum();
        rows.push(LargeDRow {
            diffusivity: *d,
            mean_error,
            heterogeneity,
        });
    }
    Ok(LargeDReport {
        config: cfg.clone(),
        rows,
        reduced_final_u: red.records.last().map_or(f64::NAN, |r| r.u_scalar),
    })
}

// ---------------------------------------------------------------------------
// κ refinement

#[derive(Debug, Clone, Serialize)]
pub struct KappaRow {
    pub kappa: f64,
    /// `‖φ_κ(T) − φ(T)‖_{L²}` against the singular run.
    pub l2_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaReport {
    pub config: RunConfig,
    pub rows: Vec<KappaRow>,
    /// `1 − max|φ(T)|` of the singular run.
    pub singular_margin: f64,
}

pub fn kappa_refinement(cfg: &RunConfig, kappa_list: &[f64]) -> Result<KappaReport> {
    if kappa_list.is_empty() {
        return Err(Error::Precondition("the kappa list is empty".into()));
    }
    let mut ks = kappa_list.to_vec();
    ks.sort_by(|a, b| b.total_cmp(a));
    let jobs: Vec<Option<f64>> = std::iter::once(None).chain(ks.iter().copied().map(Some)).collect();
    let results: Vec<Result<SurfaceField>> = with_pool(|| {
        jobs.par_iter()
            .map(|job| {
                let mut c = cfg.clone();
                match job {
                    None => {
                        c.params.potential.kind = PotentialName::Logarithmic;
                        c.params.potential.kappa = None;
                    }
                    Some(k) => {
                        c.params.potential.kind = PotentialName::Regularized;
                        c.params.potential.kappa = Some(*k);
                    }
                }
                Ok(simulate(&c)?.final_state.phi().clone())
            })
            .collect()
    });
    let mut results = results.into_iter();
    let singular = results.next().expect("singular job")?;
    let mut rows = Vec::with_capacity(ks.len());
    for (k, res) in ks.iter().zip(results) {
        let phi = res?;
        let diff: Vec<f64> = phi.values().iter().zip(singular.values()).map(|(a, b)| a - b).collect();
        rows.push(KappaRow {
            kappa: *k,
            l2_difference: singular.grid().l2_norm(&diff),
        });
    }
    Ok(KappaReport {
        config: cfg.clone(),
        rows,
        singular_margin: 1.0 - singular.max_abs(),
    })
}

// ---------------------------------------------------------------------------
// convergence to equilibrium

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumConstants {
    pub u: f64,
    pub eta: f64,
    pub mu: f64,
    pub v_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub config: RunConfig,
    /// Steady residual of `φ(T)`.
    pub final_residual: f64,
    /// `‖∇μ‖² + ‖∇η‖²` of the last sample.
    pub final_dissipation: f64,
    /// Residual of the stationary state obtained by polishing `φ(T)`.
    pub polished_residual: f64,
    pub postprocessed: EquilibriumConstants,
    /// Spatial means of the dynamic fields at `T`.
    pub dynamic: EquilibriumConstants,
    /// Sup-norm gaps between dynamic fields at `T` and the post-processed
    /// constants (`u`, `η`, `μ`, `v`).
    pub gap_u: f64,
    pub gap_eta: f64,
    pub gap_mu: f64,
    pub gap_v: f64,
    /// Defects of the stationary relations satisfied by the constants.
    pub relation_mass: f64,
    pub relation_eta: f64,
    pub relation_mu: f64,
    pub relation_volume: f64,
    /// Largest relative drift of the combined and phase masses.
    pub mass_drift: f64,
    pub phi_mass_drift: f64,
    /// Slope of `log ‖φ(t) − φ(T)‖_{(H¹)'}` against `log(1 + t)`.
    pub rate_exponent: f64,
}

fn sup_gap(values: &[f64], c: f64) -> f64 {
    values.iter().fold(0.0, |m, &x| m.max((x - c).abs()))
}

pub fn equilibrium_convergence(cfg: &RunConfig) -> Result<ConvergenceReport> {
    let init = initial_state(cfg)?;
    let mass = total_mass(&init);
    let params = cfg.model_params(mass)?;
    let phi0_mass = {
        let p = init.phi();
        p.grid().integral(p.values())
    };
    let (traj, phis) = run_collect(init, &params, cfg, |s| (s.t(), s.phi().clone()))?;
    let last = traj.final_state.clone();
    let phi_t = last.phi();
    let grid = phi_t.grid().clone();
    let gamma = grid.total_measure();
    let pot = params.potential;
    let final_residual = steady_residual(phi_t, &pot)?;

    let polished = solve_stationary_phi(&grid, &pot, phi0_mass / gamma, &restore_mean(phi_t, phi0_mass / gamma), 1e-11)?;
    let (u_field, omega): (Vec<f64>, f64) = match &last {
        SystemState::Full(s) => (s.u.values().to_vec(), s.u.grid().total_measure()),
        SystemState::Reduced(s) => (vec![s.u], s.omega_measure),
    };
    let v_t = last.v();
    let v_total = grid.integral(v_t.values());
    let data = EquilibriumData {
        total_mass: mass,
        phi_mass: phi0_mass,
        delta: params.delta,
        omega_measure: omega,
    };
    let rule = match params.exchange {
        crate::model::ExchangeLaw::Equilibrium { coefficient } if coefficient.limit_positive() => {
            VolumeRule::ExchangeEquilibrium
        }
        _ => VolumeRule::Given(v_total),
    };
    let sol = postprocess_constants(&polished, &data, &pot, rule)?;

    let eta_t = chem_eta(phi_t, v_t, params.delta);
    let mu_t = chem_mu(phi_t, &eta_t, &pot)?;
    let u_mean = match &last {
        SystemState::Full(s) => bulk_mean(&s.u),
        SystemState::Reduced(s) => s.u,
    };
    let v_gap = v_t
        .values()
        .iter()
        .zip(sol.v_inf.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let wp_mean = {
        let wp = polished
            .values()
            .iter()
            .map(|&p| pot.prime(p))
            .collect::<Result<Vec<_>>>()?;
        wp.iter().sum::<f64>() / wp.len() as f64
    };
    let d = params.delta;
    let relation_eta = sol
        .v_inf
        .values()
        .iter()
        .zip(polished.values())
        .fold(0.0f64, |m, (v, p)| m.max((sol.eta_inf - 2.0 / d * (2.0 * v - 1.0 - p)).abs()));

    let first = &traj.records[0];
    let mass_drift = traj
        .records
        .iter()
        .map(|r| (r.combined_mass - first.combined_mass).abs() / first.combined_mass.abs().max(1e-300))
        .fold(0.0, f64::max);
    let phi_mass_drift = traj
        .records
        .iter()
        .map(|r| (r.phi_mass - first.phi_mass).abs() / gamma)
        .fold(0.0, f64::max);

    let t_end = last.t();
    let fit: Vec<(f64, f64)> = phis
        .iter()
        .filter(|(t, _)| *t > 0.0 && *t < t_end)
        .filter_map(|(t, p)| {
            let diff: Vec<f64> = p.values().iter().zip(phi_t.values()).map(|(a, b)| a - b).collect();
            let dist = grid.hminus1_norm_of_fluctuation(&diff);
            (dist > 1e-12).then(|| ((1.0 + t).ln(), dist.ln()))
        })
        .collect();

    Ok(ConvergenceReport {
        config: cfg.clone(),
        final_residual,
        final_dissipation: traj
            .records
            .last()
            .map_or(f64::NAN, |r| r.mu_dissipation + r.eta_dissipation),
        polished_residual: sol.residual,
        postprocessed: EquilibriumConstants {
            u: sol.u_inf,
            eta: sol.eta_inf,
            mu: sol.mu_inf,
            v_total: sol.v_total,
        },
        dynamic: EquilibriumConstants {
            u: u_mean,
            eta: grid.mean(eta_t.values()),
            mu: grid.mean(mu_t.values()),
            v_total,
        },
        gap_u: sup_gap(&u_field, sol.u_inf),
        gap_eta: sup_gap(eta_t.values(), sol.eta_inf),
        gap_mu: sup_gap(mu_t.values(), sol.mu_inf),
        gap_v: v_gap,
        relation_mass: (omega * sol.u_inf + sol.v_total - mass).abs(),
        relation_eta,
        relation_mu: (sol.mu_inf + 0.5 * sol.eta_inf - wp_mean).abs(),
        relation_volume: (grid.integral(sol.v_inf.values()) - sol.v_total).abs(),
        mass_drift,
        phi_mass_drift,
        rate_exponent: slope(&fit),
    })
}

fn restore_mean(phi: &SurfaceField, m: f64) -> SurfaceField {
    let shift = m - phi.grid().mean(phi.values());
    phi.map(|p| p + shift)
}

/// Least-squares slope; NaN with fewer than two points.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    num / den
}

// ---------------------------------------------------------------------------
// stationary problem only

#[derive(Debug, Clone, Serialize)]
pub struct SteadyReport {
    pub config: RunConfig,
    pub residual: f64,
    pub constants: EquilibriumConstants,
    pub phi: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn steady(cfg: &RunConfig) -> Result<SteadyReport> {
    let init = initial_state(cfg)?;
    let mass = total_mass(&init);
    let params = cfg.model_params(mass)?;
    let phi0 = init.phi();
    let grid = phi0.grid().clone();
    let m = grid.mean(phi0.values());
    let phi = solve_stationary_phi(&grid, &params.potential, m, phi0, cfg.experiment.steady_tol)?;
    let omega = match &init {
        SystemState::Full(s) => s.u.grid().total_measure(),
        SystemState::Reduced(s) => s.omega_measure,
    };
    let data = EquilibriumData {
        total_mass: mass,
        phi_mass: grid.integral(phi0.values()),
        delta: params.delta,
        omega_measure: omega,
    };
    let rule = match params.exchange {
        crate::model::ExchangeLaw::Equilibrium { coefficient } if coefficient.limit_positive() => {
            VolumeRule::ExchangeEquilibrium
        }
        _ => VolumeRule::Given(grid.integral(init.v().values())),
    };
    let sol = postprocess_constants(&phi, &data, &params.potential, rule)?;
    Ok(SteadyReport {
        config: cfg.clone(),
        residual: sol.residual,
        constants: EquilibriumConstants {
            u: sol.u_inf,
            eta: sol.eta_inf,
            mu: sol.mu_inf,
            v_total: sol.v_total,
        },
        phi: sol.phi_inf.into_values(),
        v: sol.v_inf.into_values(),
    })
}

// ---------------------------------------------------------------------------
// absorbing set

#[derive(Debug, Clone, Serialize)]
pub struct AbsorbingRow {
    pub scale: f64,
    /// `(‖φ₀‖²_{H¹} + ‖v₀‖²)^{1/2}`
    pub initial_norm: f64,
    /// `sup_{t ≥ t*} ‖φ‖²_{H¹} + ‖v‖²`
    pub sup_after: f64,
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbsorbingReport {
    pub config: RunConfig,
    pub rows: Vec<AbsorbingRow>,
}

fn surface_norm_sq(phi: &SurfaceField, v: &SurfaceField) -> f64 {
    let g = phi.grid();
    g.l2_norm(phi.values()).powi(2) + g.h1_seminorm_sq(phi.values()) + g.l2_norm(v.values()).powi(2)
}

/// Each element scales the fluctuations of the configured initial data.
pub fn absorbing(cfg: &RunConfig, scales: &[f64]) -> Result<AbsorbingReport> {
    if scales.is_empty() {
        return Err(Error::Precondition("the amplitude list is empty".into()));
    }
    let mut ss = scales.to_vec();
    ss.sort_by(f64::total_cmp);
    let rows: Vec<Result<AbsorbingRow>> = with_pool(|| {
        ss.par_iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.initial.amplitude *= s;
                c.initial.v_amplitude *= s;
                let init = initial_state(&c)?;
                let initial_norm = surface_norm_sq(init.phi(), init.v()).sqrt();
                let params = c.model_params(total_mass(&init))?;
                let t_star = c.experiment.t_star;
                let (traj, norms) = run_collect(init, &params, &c, |st| (st.t(), surface_norm_sq(st.phi(), st.v())))?;
                let sup_after = norms
                    .iter()
                    .filter(|(t, _)| *t >= t_star)
                    .map(|(_, n)| *n)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (u_min, u_max) = traj
                    .records
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.u_scalar), b.max(r.u_scalar)));
                Ok(AbsorbingRow {
                    scale: s,
                    initial_norm,
                    sup_after,
                    u_min,
                    u_max,
                })
            })
            .collect()
    });
    Ok(AbsorbingReport {
        config: cfg.clone(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

// ---------------------------------------------------------------------------
// continuous dependence

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub size: f64,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub config: RunConfig,
    pub rows: Vec<ContinuityRow>,
}

/// `(‖u₁ − u₂‖² + ‖φ₁ − φ₂‖²_{(H¹)'} + δ‖v₁ − v₂‖²)^{1/2}`, with the
/// `(H¹)'` norm of a field taken as `‖f − f̄‖²_{H⁻¹} + |Γ| f̄²`.
pub fn state_distance(a: &SystemState, b: &SystemState, delta: f64) -> f64 {
    let g = a.phi().grid();
    let dphi: Vec<f64> = a.phi().values().iter().zip(b.phi().values()).map(|(x, y)| x - y).collect();
    let dv: Vec<f64> = a.v().values().iter().zip(b.v().values()).map(|(x, y)| x - y).collect();
    let m = g.mean(&dphi);
    let phi_part = g.hminus1_norm_of_fluctuation(&dphi).powi(2) + g.total_measure() * m * m;
    let u_part = match (a, b) {
        (SystemState::Full(x), SystemState::Full(y)) => {
            let du: Vec<f64> = x.u.values().iter().zip(y.u.values()).map(|(p, q)| p - q).collect();
            bulk_l2_sq(&BulkField::new(x.u.grid().clone(), du).expect("same grid"))
        }
        (SystemState::Reduced(x), SystemState::Reduced(y)) => x.omega_measure * (x.u - y.u).powi(2),
        _ => f64::NAN,
    };
    (u_part + phi_part + delta * g.l2_norm(&dv).powi(2)).sqrt()
}

/// Perturb the configured initial data along a fixed random direction of
/// each size in `sizes` and compare the states at `t_final`.
pub fn continuous_dependence(cfg: &RunConfig, sizes: &[f64]) -> Result<ContinuityReport> {
    if sizes.is_empty() {
        return Err(Error::Precondition("the perturbation list is empty".into()));
    }
    let base = initial_state(cfg)?;
    let params = cfg.model_params(total_mass(&base))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.initial.seed.unwrap_or(0).wrapping_add(1));
    let n = base.phi().grid().len();
    let dphi = noise(&mut rng, n);
    let dv = noise(&mut rng, n);
    let du: Vec<f64> = match &base {
        SystemState::Full(s) => (0..s.u.values().len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        SystemState::Reduced(_) => vec![rng.random_range(-1.0..1.0)],
    };
    let perturbed = |eps: f64| -> Result<SystemState> {
        let shift = |f: &SurfaceField, d: &[f64]| {
            SurfaceField::new(f.grid().clone(), f.values().iter().zip(d).map(|(x, y)| x + eps * y).collect())
        };
        Ok(match &base {
            SystemState::Full(s) => {
                let u: Vec<f64> = s.u.values().iter().zip(&du).map(|(x, y)| x + eps * y).collect();
                SystemState::Full(FullState::new(
                    s.t,
                    BulkField::new(s.u.grid().clone(), u)?,
                    shift(&s.phi, &dphi)?,
                    shift(&s.v, &dv)?,
                )?)
            }
            SystemState::Reduced(s) => {
                let mut r = ReducedState::from_initial(s.u + eps * du[0], shift(&s.phi, &dphi)?, shift(&s.v, &dv)?, s.omega_measure)?;
                r.t = s.t;
                SystemState::Reduced(r)
            }
        })
    };
    let mut ss = sizes.to_vec();
    ss.sort_by(|a, b| b.total_cmp(a));
    let jobs: Vec<Option<f64>> = std::iter::once(None).chain(ss.iter().copied().map(Some)).collect();
    let results: Vec<Result<(SystemState, SystemState)>> = with_pool(|| {
        jobs.par_iter()
            .map(|job| {
                let init = match job {
                    None => base.clone(),
                    Some(eps) => perturbed(*eps)?,
                };
                let fin = run(init.clone(), &params, &cfg.stepper, &cfg.schedule)?.final_state;
                Ok((init, fin))
            })
            .collect()
    });
    let mut results = results.into_iter();
    let (b0, bt) = results.next().expect("base job")?;
    let mut rows = Vec::with_capacity(ss.len());
    for (eps, res) in ss.iter().zip(results) {
        let (p0, pt) = res?;
        let d0 = state_distance(&b0, &p0, params.delta);
        let dt = state_distance(&bt, &pt, params.delta);
        rows.push(ContinuityRow {
            size: *eps,
            initial_distance: d0,
            final_distance: dt,
            ratio: dt / d0,
        });
    }
    Ok(ContinuityReport {
        config: cfg.clone(),
        rows,
    })
}
