//! Time integration of the full and reduced systems.
//!
//! Each step freezes the exchange flux `q` at the old time, advances the bulk
//! with one backward-Euler diffusion step, and solves the surface system
//!
//! ```text
//! φ' - φ = dt Δμ',   μ' = -Δφ' + F'(φ') - c φ - η'/2
//! v' - v = dt (Δη' + q),   η' = (2/δ)(2v' - 1 - φ')
//! ```
//!
//! with the convex part `F` implicit and the concave part `c = θ₀` explicit.
//! The `v` equation is linear and eliminated mode by mode, leaving a Newton
//! iteration for `φ'` alone. Its linear systems are solved by conjugate
//! gradients in Fourier space, preconditioned by the constant-coefficient
//! symbol.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bulk;
use crate::error::{Error, Result};
use crate::model::{
    diagnostics_full, diagnostics_reduced, full_exchange, reduced_exchange, DiagnosticsRecord,
    FullState, Params, ReducedState,
};
use crate::potential::PotentialSpec;
use crate::surface::{SurfaceField, SurfaceGrid};

/// Iterates are kept inside `[-1 + SEPARATION_GUARD, 1 - SEPARATION_GUARD]`
/// for singular potentials.
pub const SEPARATION_GUARD: f64 = 1e-13;
const CG_TOL: f64 = 1e-12;
const CG_MAX_ITERS: usize = 1000;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    /// Tolerance on the sup-norm of the (symbol-scaled) step residual.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Smallest substep before giving up; `None` means `dt / 1024`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    /// Backtracking factor of the line search.
    pub damping: f64,
    /// Apply the 2/3 rule to the nonlinear term.
    pub dealias: bool,
    /// Regularization used when a singular step fails at `dt_min`.
    pub kappa_fallback: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            newton_tol: 1e-10,
            newton_max_iters: 50,
            dt_min: None,
            damping: 0.5,
            dealias: false,
            kappa_fallback: 1e-5,
        }
    }
}

impl StepperConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn dt_min(&self) -> f64 {
        self.dt_min.unwrap_or(self.dt / 1024.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.newton_tol > 0.0) {
            return bad(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.newton_max_iters == 0 {
            return bad("newton_max_iters must be at least 1".into());
        }
        let dt_min = self.dt_min();
        if !(dt_min > 0.0 && dt_min <= self.dt) {
            return bad(format!("dt_min must lie in (0, dt], got {dt_min}"));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad(format!("damping must lie in (0, 1), got {}", self.damping));
        }
        if !(self.kappa_fallback > 0.0 && self.kappa_fallback < 0.5) {
            return bad(format!("kappa_fallback must lie in (0, 0.5), got {}", self.kappa_fallback));
        }
        Ok(())
    }
}

/// One implicit surface problem: find mean-preserving `φ` with
/// `φ - φ_old + dt k²[(k² + lin_k)φ + F'(φ) + h_k] = 0` for every `k ≠ 0`.
pub(crate) struct ImplicitProblem<'a> {
    pub grid: &'a SurfaceGrid,
    pub potential: PotentialSpec,
    pub dt: f64,
    pub phi_old_hat: Vec<Complex64>,
    /// Linear, diagonal part of `μ` beyond `k²` (eliminated affinity term).
    pub lin: Vec<f64>,
    /// Explicit part of `μ`.
    pub explicit: Vec<Complex64>,
    pub dealias: bool,
}

pub(crate) struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl ImplicitProblem<'_> {
    fn transformed_nonlinear(&self, values: &[f64]) -> Vec<Complex64> {
        let mut s = self.grid.forward(values);
        if self.dealias {
            self.grid.dealias(&mut s);
        }
        s
    }

    /// Residual scaled by the inverse of the linear symbol
    /// `1 + dt k²(k² + lin_k)`, in Fourier space.
    fn residual(&self, phi: &[f64]) -> Vec<Complex64> {
        let fp: Vec<f64> = phi
            .iter()
            .map(|&p| self.potential.convex_prime_unchecked(p))
            .collect();
        let fp_hat = self.transformed_nonlinear(&fp);
        let phi_hat = self.grid.forward(phi);
        let k2 = self.grid.k2();
        let mut r = Vec::with_capacity(phi.len());
        for k in 0..phi.len() {
            if k2[k] == 0.0 {
                r.push(Complex64::new(0.0, 0.0));
                continue;
            }
            let lin = k2[k] + self.lin[k];
            let mu = phi_hat[k] * lin + fp_hat[k] + self.explicit[k];
            let raw = phi_hat[k] - self.phi_old_hat[k] + mu * (self.dt * k2[k]);
            r.push(raw / (1.0 + self.dt * k2[k] * lin));
        }
        r
    }

    fn admissible(&self, phi: &[f64]) -> bool {
        if self.potential.is_singular() {
            phi.iter().all(|p| p.abs() <= 1.0 - SEPARATION_GUARD)
        } else {
            phi.iter().all(|p| p.is_finite())
        }
    }

    /// Solve the scaled Newton system `S⁻¹ J δ = -r` on mean-zero fields by
    /// preconditioned conjugate gradients, working with the symmetric form
    /// `(K⁻¹ + dt(k² + lin) + dt P) δ = -S r / k²`.
    fn newton_direction(&self, p: &[f64], r: &[Complex64]) -> Result<Vec<Complex64>> {
        let k2 = self.grid.k2();
        let n = p.len();
        let p_mean = p.iter().sum::<f64>() / n as f64;
        let dt = self.dt;
        let apply = |x: &[Complex64]| -> Vec<Complex64> {
            let xp = self.grid.inverse(x);
            let px: Vec<f64> = xp.iter().zip(p).map(|(a, b)| a * b).collect();
            let px_hat = self.transformed_nonlinear(&px);
            (0..n)
                .map(|k| {
                    if k2[k] == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        x[k] * (1.0 / k2[k] + dt * (k2[k] + self.lin[k])) + px_hat[k] * dt
                    }
                })
                .collect()
        };
        let precond: Vec<f64> = (0..n)
            .map(|k| {
                if k2[k] == 0.0 {
                    0.0
                } else {
                    1.0 / (1.0 / k2[k] + dt * (k2[k] + self.lin[k] + p_mean))
                }
            })
            .collect();
        let b: Vec<Complex64> = (0..n)
            .map(|k| {
                if k2[k] == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    -r[k] * (1.0 + dt * k2[k] * (k2[k] + self.lin[k])) / k2[k]
                }
            })
            .collect();
        conjugate_gradient(apply, &precond, &b)
    }

    /// Damped Newton from `init`; returns the solution and the iteration count.
    pub fn solve(&self, init: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, usize)> {
        if !self.admissible(init) {
            return Err(Error::Precondition(
                "Newton initial guess violates |phi| < 1".into(),
            ));
        }
        let mut phi = init.to_vec();
        let mut r = self.residual(&phi);
        let mut sup = sup_norm(self.grid, &r);
        let mut merit = l2(&r);
        let mut iters = 0;
        while !(sup <= opts.tol) {
            if iters >= opts.max_iters || !sup.is_finite() {
                return Err(Error::NewtonDivergence {
                    iters,
                    residual: sup,
                });
            }
            iters += 1;
            let p: Vec<f64> = phi
                .iter()
                .map(|&x| self.potential.convex_second_unchecked(x))
                .collect();
            let delta = self.grid.inverse(&self.newton_direction(&p, &r)?);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let trial: Vec<f64> = phi.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                if self.admissible(&trial) {
                    let rt = self.residual(&trial);
                    let mt = l2(&rt);
                    if mt <= (1.0 - 1e-4 * alpha) * merit || sup_norm(self.grid, &rt) <= opts.tol {
                        accepted = Some((trial, rt, mt));
                        break;
                    }
                }
                alpha *= opts.damping;
            }
            let Some((trial, rt, mt)) = accepted else {
                return Err(Error::NewtonDivergence {
                    iters,
                    residual: sup,
                });
            };
            phi = trial;
            sup = sup_norm(self.grid, &rt);
            r = rt;
            merit = mt;
        }
        Ok((phi, iters))
    }
}

fn l2(r: &[Complex64]) -> f64 {
    r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn sup_norm(grid: &SurfaceGrid, r: &[Complex64]) -> f64 {
    grid.inverse(r).iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn conjugate_gradient(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    precond: &[f64],
    b: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<Complex64> = r.iter().zip(precond).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..CG_MAX_ITERS {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!("Newton operator lost positivity ({pap:e})")));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += p[k] * alpha;
            r[k] -= ap[k] * alpha;
        }
        if dot(&r, &r).sqrt() <= CG_TOL * b_norm {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] * precond[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + p[k] * beta;
        }
    }
    Ok(x)
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub newton_iters: u64,
    /// Number of substeps actually taken (1 unless `dt` was halved).
    pub substeps: u64,
    /// Warnings raised during the step (e.g. regularized fallback).
    pub warnings: Vec<String>,
}

/// Surface update for given old fields and frozen flux `q`; returns `(φ', v')`.
fn surface_update(
    phi: &SurfaceField,
    v: &SurfaceField,
    q: &SurfaceField,
    params: &Params,
    potential: PotentialSpec,
    dt: f64,
    cfg: &StepperConfig,
) -> Result<(SurfaceField, SurfaceField, usize)> {
    let grid = phi.grid();
    let k2 = grid.k2();
    let n = grid.len();
    let delta = params.delta;
    let phi_hat = grid.forward(phi.values());
    let v_hat = grid.forward(v.values());
    let q_hat = grid.forward(q.values());
    let c = potential.concave_coeff();

    let mut lin = vec![0.0; n];
    let mut explicit = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let s = 1.0 + 4.0 * dt * k2[k] / delta;
        lin[k] = 1.0 / (delta * s);
        explicit[k] = -phi_hat[k] * c - (v_hat[k] + q_hat[k] * dt) * (2.0 / (delta * s));
    }
    let problem = ImplicitProblem {
        grid,
        potential,
        dt,
        phi_old_hat: phi_hat,
        lin,
        explicit,
        dealias: cfg.dealias,
    };
    let opts = NewtonOptions {
        tol: cfg.newton_tol,
        max_iters: cfg.newton_max_iters,
        damping: cfg.damping,
    };
    let (phi_new, iters) = problem.solve(phi.values(), &opts)?;

    let new_hat = grid.forward(&phi_new);
    let v_new_hat: Vec<Complex64> = (0..n)
        .map(|k| {
            let a = 4.0 * dt * k2[k] / delta;
            (v_hat[k] + q_hat[k] * dt + new_hat[k] * (0.5 * a)) / (1.0 + a)
        })
        .collect();
    let v_new = grid.inverse(&v_new_hat);
    Ok((
        SurfaceField::from_values_unchecked(grid.clone(), phi_new),
        SurfaceField::from_values_unchecked(grid.clone(), v_new),
        iters,
    ))
}

fn check_start(phi: &SurfaceField, params: &Params) -> Result<()> {
    if params.potential.is_singular() && phi.max_abs() >= 1.0 {
        return Err(Error::Precondition(format!(
            "max|phi| = {} must be < 1 for the logarithmic potential",
            phi.max_abs()
        )));
    }
    Ok(())
}

/// Run `attempt(h, potential)` over a total step `dt`, halving the substep on
/// Newton failure and falling back to the regularized potential at `dt_min`.
fn adaptive<S: Clone>(
    state: &S,
    params: &Params,
    cfg: &StepperConfig,
    t_of: impl Fn(&S) -> f64,
    attempt: impl Fn(&S, f64, PotentialSpec) -> Result<(S, usize)>,
) -> Result<(S, StepInfo)> {
    cfg.validate()?;
    let dt_min = cfg.dt_min();
    let mut info = StepInfo::default();
    let mut current = state.clone();
    let mut h = cfg.dt;
    let mut remaining = cfg.dt;
    while remaining > 0.0 {
        let take = h.min(remaining);
        match attempt(&current, take, params.potential) {
            Ok((next, iters)) => {
                current = next;
                info.newton_iters += iters as u64;
                info.substeps += 1;
                remaining -= take;
                if remaining <= 1e-12 * cfg.dt {
                    remaining = 0.0;
                }
            }
            Err(Error::NewtonDivergence { iters, residual }) => {
                if h / 2.0 >= dt_min {
                    h /= 2.0;
                    continue;
                }
                let fallback = match params.potential.into_regularized(cfg.kappa_fallback) {
                    Ok(pot) if params.potential.is_singular() => attempt(&current, take, pot).ok(),
                    _ => None,
                };
                match fallback {
                    Some((next, it)) => {
                        info.warnings.push(format!(
                            "t = {:.6e}: Newton failed at dt = {take:.3e} ({iters} iterations, residual {residual:.3e}); step taken with regularized potential (kappa = {})",
                            t_of(&current),
                            cfg.kappa_fallback
                        ));
                        current = next;
                        info.newton_iters += it as u64;
                        info.substeps += 1;
                        remaining -= take;
                        if remaining <= 1e-12 * cfg.dt {
                            remaining = 0.0;
                        }
                    }
                    None => {
                        return Err(Error::DtUnderflow {
                            step: 0,
                            time: t_of(&current),
                            dt: take,
                            snapshot: None,
                        })
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((current, info))
}

/// One step of the full bulk-surface system.
pub fn step_full(state: &FullState, params: &Params, cfg: &StepperConfig) -> Result<FullState> {
    step_full_with_info(state, params, cfg).map(|(s, _)| s)
}

pub fn step_full_with_info(
    state: &FullState,
    params: &Params,
    cfg: &StepperConfig,
) -> Result<(FullState, StepInfo)> {
    check_start(&state.phi, params)?;
    adaptive(state, params, cfg, |s| s.t, |s, h, pot| {
        let (q, _, _) = full_exchange(s, params);
        let u = bulk::diffusion_step(&s.u, params.diffusivity, h, &q)?;
        let (phi, v, iters) = surface_update(&s.phi, &s.v, &q, params, pot, h, cfg)?;
        Ok((
            FullState {
                t: s.t + h,
                u,
                phi,
                v,
            },
            iters,
        ))
    })
}

/// One step of the reduced system; `u` is rebuilt from the conserved mass.
pub fn step_reduced(
    state: &ReducedState,
    params: &Params,
    cfg: &StepperConfig,
) -> Result<ReducedState> {
    step_reduced_with_info(state, params, cfg).map(|(s, _)| s)
}

pub fn step_reduced_with_info(
    state: &ReducedState,
    params: &Params,
    cfg: &StepperConfig,
) -> Result<(ReducedState, StepInfo)> {
    check_start(&state.phi, params)?;
    adaptive(state, params, cfg, |s| s.t, |s, h, pot| {
        let (q, _) = reduced_exchange(s, params);
        let (phi, v, iters) = surface_update(&s.phi, &s.v, &q, params, pot, h, cfg)?;
        let next = ReducedState::with_mass(s.t + h, phi, v, s.total_mass, s.omega_measure)?;
        Ok((next, iters))
    })
}

/// State of either system.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemState {
    Full(FullState),
    Reduced(ReducedState),
}

impl SystemState {
    pub fn t(&self) -> f64 {
        match self {
            Self::Full(s) => s.t,
            Self::Reduced(s) => s.t,
        }
    }

    pub fn phi(&self) -> &SurfaceField {
        match self {
            Self::Full(s) => &s.phi,
            Self::Reduced(s) => &s.phi,
        }
    }

    pub fn v(&self) -> &SurfaceField {
        match self {
            Self::Full(s) => &s.v,
            Self::Reduced(s) => &s.v,
        }
    }

    pub fn step(&self, params: &Params, cfg: &StepperConfig) -> Result<(Self, StepInfo)> {
        match self {
            Self::Full(s) => step_full_with_info(s, params, cfg).map(|(s, i)| (Self::Full(s), i)),
            Self::Reduced(s) => {
                step_reduced_with_info(s, params, cfg).map(|(s, i)| (Self::Reduced(s), i))
            }
        }
    }

    pub fn diagnostics(&self, params: &Params, newton_iters: u64) -> Result<DiagnosticsRecord> {
        match self {
            Self::Full(s) => diagnostics_full(s, params, newton_iters),
            Self::Reduced(s) => diagnostics_reduced(s, params, newton_iters),
        }
    }
}

/// Sampling plan of a run. Times are absolute; the number of steps is
/// `round(t_final / dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub t_final: f64,
    /// Record diagnostics every this many steps.
    pub sample_stride: u64,
    /// Call the checkpoint hook every this many steps (0 disables).
    pub checkpoint_stride: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            sample_stride: 1,
            checkpoint_stride: 0,
        }
    }
}

impl Schedule {
    pub fn total_steps(&self, dt: f64) -> u64 {
        (self.t_final / dt).round().max(0.0) as u64
    }
}

/// Sampled output of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: SystemState,
    /// Absolute index of the last completed step.
    pub final_step: u64,
    pub warnings: Vec<String>,
}

/// Hooks for persistence during a run.
pub trait RunObserver {
    fn checkpoint(&mut self, _state: &SystemState, _step: u64) -> Result<()> {
        Ok(())
    }

    /// Called with the last good state when the run fails; may return the
    /// path of a snapshot written for diagnosis.
    fn failure(&mut self, _state: &SystemState, _step: u64) -> Option<std::path::PathBuf> {
        None
    }

    fn sample(&mut self, _record: &DiagnosticsRecord) -> Result<()> {
        Ok(())
    }
}

struct NoObserver;
impl RunObserver for NoObserver {}

/// Integrate from step 0 to the end of the schedule.
pub fn run(
    initial: SystemState,
    params: &Params,
    cfg: &StepperConfig,
    schedule: &Schedule,
) -> Result<Trajectory> {
    run_from(initial, 0, params, cfg, schedule, &mut NoObserver)
}

/// Integrate from absolute step `start_step` (e.g. after a restore).
pub fn run_from(
    initial: SystemState,
    start_step: u64,
    params: &Params,
    cfg: &StepperConfig,
    schedule: &Schedule,
    observer: &mut dyn RunObserver,
) -> Result<Trajectory> {
    cfg.validate()?;
    if schedule.sample_stride == 0 {
        return Err(Error::Precondition("sample_stride must be at least 1".into()));
    }
    let total = schedule.total_steps(cfg.dt);
    let mut state = initial;
    let first = state.diagnostics(params, 0)?;
    observer.sample(&first)?;
    let mut records = vec![first];
    let mut warnings = Vec::new();
    let mut step = start_step;
    while step < total {
        let (next, info) = match state.step(params, cfg) {
            Ok(x) => x,
            Err(Error::DtUnderflow { time, dt, .. }) => {
                let snapshot = observer.failure(&state, step);
                return Err(Error::DtUnderflow {
                    step: step + 1,
                    time,
                    dt,
                    snapshot,
                });
            }
            Err(e) => {
                observer.failure(&state, step);
                return Err(e);
            }
        };
        state = next;
        step += 1;
        warnings.extend(info.warnings);
        if step % schedule.sample_stride == 0 || step == total {
            let rec = state.diagnostics(params, info.newton_iters)?;
            observer.sample(&rec)?;
            records.push(rec);
        }
        if schedule.checkpoint_stride > 0 && step % schedule.checkpoint_stride == 0 {
            observer.checkpoint(&state, step)?;
        }
    }
    Ok(Trajectory {
        records,
        final_state: state,
        final_step: step,
        warnings,
    })
}
