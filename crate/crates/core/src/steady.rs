//! Stationary states: the mean-constrained phase equation and the equilibrium
//! constants that follow from it.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::stepper::{ImplicitProblem, NewtonOptions, SEPARATION_GUARD};
use crate::surface::{SurfaceField, SurfaceGrid};

/// Largest grid for which Newton assembles a dense Jacobian.
const DENSE_LIMIT: usize = 1024;
const NEWTON_MAX_ITERS: usize = 60;
/// Gradient-flow chunk length (steps) between Newton retries.
const FLOW_CHUNK: usize = 200;
const FLOW_MAX_CHUNKS: usize = 500;
/// Newton is only started once the residual is below this; far from a
/// solution it tends to land on the (possibly unstable) constant state.
const NEWTON_SWITCH: f64 = 1e-3;

/// `−Δφ + W'(φ) − ⟨W'(φ)⟩` as a field.
fn residual_field(phi: &SurfaceField, potential: &PotentialSpec) -> Result<Vec<f64>> {
    let grid = phi.grid();
    let lap = grid.laplacian(phi.values());
    let wp = phi
        .values()
        .iter()
        .map(|&p| potential.prime(p))
        .collect::<Result<Vec<_>>>()?;
    let mean = wp.iter().sum::<f64>() / wp.len() as f64;
    Ok(lap.iter().zip(&wp).map(|(l, w)| -l + w - mean).collect())
}

/// `‖−Δφ + W'(φ) − ⟨W'(φ)⟩‖_{L²}`.
pub fn steady_residual(phi: &SurfaceField, potential: &PotentialSpec) -> Result<f64> {
    let r = residual_field(phi, potential)?;
    Ok(phi.grid().l2_norm(&r))
}

fn admissible(phi: &[f64], potential: &PotentialSpec) -> bool {
    !potential.is_singular() || phi.iter().all(|p| p.abs() <= 1.0 - SEPARATION_GUARD)
}

/// Dense LU with partial pivoting; solves `a x = b` in place.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[i * n + j] -= f * a[col * n + j];
            }
            b[i] -= f * b[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    Some(b)
}

/// Newton on the mean-zero subspace with the constraint carried by a
/// Lagrange multiplier: `[−Δ + W''(φ), 1; 1ᵀ, 0] [δ; λ] = [−ρ; 0]`.
fn newton(
    phi: &SurfaceField,
    potential: &PotentialSpec,
    tol: f64,
    neg_laplacian: &[f64],
) -> Result<(SurfaceField, f64)> {
    let grid = phi.grid();
    let n = grid.len();
    let m = n + 1;
    let mut cur = phi.values().to_vec();
    let mut res = residual_field(phi, potential)?;
    let mut norm = grid.l2_norm(&res);
    for _ in 0..NEWTON_MAX_ITERS {
        if norm <= tol {
            break;
        }
        let mut a = vec![0.0; m * m];
        for i in 0..n {
            a[i * m..i * m + n].copy_from_slice(&neg_laplacian[i * n..(i + 1) * n]);
            a[i * m + i] += potential.second(cur[i])?;
            a[i * m + n] = 1.0;
            a[n * m + i] = 1.0;
        }
        let mut rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        rhs.push(0.0);
        let Some(sol) = dense_solve(a, rhs) else { break };
        let delta = &sol[..n];
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = cur.iter().zip(delta).map(|(c, d)| c + alpha * d).collect();
            if admissible(&trial, potential) {
                let field = SurfaceField::from_values_unchecked(grid.clone(), trial);
                let r = residual_field(&field, potential)?;
                let rn = grid.l2_norm(&r);
                if rn < (1.0 - 1e-4 * alpha) * norm {
                    cur = field.into_values();
                    res = r;
                    norm = rn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((SurfaceField::from_values_unchecked(grid.clone(), cur), norm))
}

fn dense_neg_laplacian(grid: &SurfaceGrid) -> Vec<f64> {
    let n = grid.len();
    let mut out = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = grid.laplacian(&e);
        for i in 0..n {
            out[i * n + j] = -col[i];
        }
        e[j] = 0.0;
    }
    out
}

/// Mass-conserving gradient flow (Cahn-Hilliard without coupling) using the
/// stepper's implicit solver; `dt` adapts to Newton success.
fn gradient_flow(
    phi: &SurfaceField,
    potential: &PotentialSpec,
    steps: usize,
    dt: &mut f64,
) -> Result<SurfaceField> {
    let grid = phi.grid();
    let n = grid.len();
    let c = potential.concave_coeff();
    let opts = NewtonOptions {
        tol: 1e-12,
        max_iters: 30,
        damping: 0.5,
    };
    let mut cur = phi.values().to_vec();
    let mut done = 0;
    while done < steps {
        let old_hat = grid.forward(&cur);
        let explicit: Vec<Complex64> = old_hat.iter().map(|z| -z * c).collect();
        let problem = ImplicitProblem {
            grid,
            potential: *potential,
            dt: *dt,
            phi_old_hat: old_hat,
            lin: vec![0.0; n],
            explicit,
            dealias: false,
        };
        match problem.solve(&cur, &opts) {
            Ok((next, iters)) => {
                cur = next;
                done += 1;
                if iters <= 4 {
                    *dt = (*dt * 1.5).min(1e3);
                }
            }
            Err(Error::NewtonDivergence { .. }) => {
                *dt *= 0.25;
                if *dt < 1e-10 {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SurfaceField::from_values_unchecked(grid.clone(), cur))
}

/// Solve `−Δφ + W'(φ) = ⟨W'(φ)⟩` with `⟨φ⟩ = m`, starting from `init`.
///
/// Damped Newton (on grids small enough for a dense Jacobian) is used once
/// the residual is moderate; otherwise, or when Newton stalls, the
/// Cahn-Hilliard gradient flow is run in chunks with Newton retried after
/// each, until the residual reaches `tol`.
pub fn solve_stationary_phi(
    grid: &std::sync::Arc<SurfaceGrid>,
    potential: &PotentialSpec,
    m: f64,
    init: &SurfaceField,
    tol: f64,
) -> Result<SurfaceField> {
    if !(m.abs() < 1.0) {
        return Err(Error::Precondition(format!("mean must lie in (-1, 1), got {m}")));
    }
    if **init.grid() != **grid {
        return Err(Error::Precondition("initial field is on a different grid".into()));
    }
    if potential.is_singular() && init.max_abs() >= 1.0 {
        return Err(Error::Precondition("initial field violates |phi| < 1".into()));
    }
    let mean = grid.mean(init.values());
    if (mean - m).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "initial field has mean {mean}, expected {m}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }

    let dense = (grid.len() <= DENSE_LIMIT).then(|| dense_neg_laplacian(grid));
    let mut best = init.clone();
    let mut best_res = steady_residual(init, potential)?;
    if best_res <= tol {
        return Ok(best);
    }
    let mut cur = init.clone();
    let mut cur_res = best_res;
    let mut dt = 0.1;
    for chunk in 0..=FLOW_MAX_CHUNKS {
        if let (Some(neg_lap), true) = (&dense, cur_res <= NEWTON_SWITCH || chunk == FLOW_MAX_CHUNKS) {
            let (candidate, res) = newton(&cur, potential, tol, neg_lap)?;
            if res < best_res {
                best = candidate;
                best_res = res;
            }
            if best_res <= tol {
                return Ok(restore_mean(best, m));
            }
        }
        if chunk == FLOW_MAX_CHUNKS {
            break;
        }
        cur = gradient_flow(&cur, potential, FLOW_CHUNK, &mut dt)?;
        cur_res = steady_residual(&cur, potential)?;
        if cur_res < best_res {
            best = cur.clone();
            best_res = cur_res;
        }
        if best_res <= tol {
            return Ok(restore_mean(best, m));
        }
    }
    Err(Error::NonConvergence {
        best_residual: best_res,
    })
}

/// Remove roundoff drift of the mean.
fn restore_mean(phi: SurfaceField, m: f64) -> SurfaceField {
    let shift = m - phi.grid().mean(phi.values());
    if shift == 0.0 {
        phi
    } else {
        phi.map(|p| p + shift)
    }
}

/// How the total surface cholesterol `V = ∫v_∞` is determined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VolumeRule {
    /// `lim A(t) > 0`: `u_∞ = η_∞` closes the system and fixes `V`.
    ExchangeEquilibrium,
    /// Supplied externally (e.g. from the dynamic run).
    Given(f64),
}

/// A stationary state with all its constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub phi_inf: SurfaceField,
    pub v_inf: SurfaceField,
    pub u_inf: f64,
    pub mu_inf: f64,
    pub eta_inf: f64,
    /// `V = ∫_Γ v_∞`
    pub v_total: f64,
    /// Steady residual of `φ_∞`.
    pub residual: f64,
}

/// Relative check `|a − b| ≤ tol · max(1, |a|, |b|)`.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

impl EquilibriumSolution {
    /// Validate the defining relations; see [`postprocess_constants`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        phi_inf: SurfaceField,
        v_inf: SurfaceField,
        u_inf: f64,
        mu_inf: f64,
        eta_inf: f64,
        v_total: f64,
        constants: &EquilibriumData,
        potential: &PotentialSpec,
    ) -> Result<Self> {
        let grid = phi_inf.grid().clone();
        let gamma = grid.total_measure();
        let mut problems = Vec::new();
        let mean = grid.mean(phi_inf.values());
        if (mean - constants.phi_mass / gamma).abs() > 1e-12 {
            problems.push(format!("mean of phi_inf is {mean}"));
        }
        let diff: Vec<f64> = v_inf
            .values()
            .iter()
            .zip(phi_inf.values())
            .map(|(v, p)| 2.0 * v - p)
            .collect();
        let (lo, hi) = diff
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if hi - lo > 1e-10 {
            problems.push(format!("2v - phi varies by {:e}", hi - lo));
        }
        if !close(grid.integral(v_inf.values()), v_total, 1e-10) {
            problems.push("integral of v_inf differs from V".into());
        }
        if !close(u_inf * constants.omega_measure + v_total, constants.total_mass, 1e-10) {
            problems.push("mass relation u|Omega| + V = M fails".into());
        }
        let wp = phi_inf
            .values()
            .iter()
            .map(|&p| potential.prime(p))
            .collect::<Result<Vec<_>>>()?;
        let wp_mean = wp.iter().sum::<f64>() / wp.len() as f64;
        if !close(0.5 * eta_inf + mu_inf, wp_mean, 1e-10) {
            problems.push("relation eta/2 + mu = <W'> fails".into());
        }
        let d = constants.delta;
        let rhs = 4.0 / d * v_total - 2.0 / d * (gamma + constants.phi_mass);
        if !close(eta_inf * gamma, rhs, 1e-10) {
            problems.push("relation for eta_inf |Gamma| fails".into());
        }
        if !problems.is_empty() {
            return Err(Error::Precondition(format!(
                "equilibrium invariants violated: {}",
                problems.join("; ")
            )));
        }
        let residual = steady_residual(&phi_inf, potential)?;
        Ok(Self {
            phi_inf,
            v_inf,
            u_inf,
            mu_inf,
            eta_inf,
            v_total,
            residual,
        })
    }
}

/// Scalars that pin the equilibrium constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumData {
    /// Total cholesterol `M`.
    pub total_mass: f64,
    /// `∫_Γ φ₀`
    pub phi_mass: f64,
    pub delta: f64,
    pub omega_measure: f64,
}

/// `V` from `u_∞ = η_∞` together with the mass relation:
/// `(M − V)/|Ω| = (4/(δ|Γ|))V − 2/δ − 2m/(δ|Γ|)`.
pub fn equilibrium_volume(data: &EquilibriumData, gamma_measure: f64) -> f64 {
    let d = data.delta;
    let o = data.omega_measure;
    let g = gamma_measure;
    (data.total_mass / o + 2.0 / d + 2.0 * data.phi_mass / (d * g)) / (1.0 / o + 4.0 / (d * g))
}

/// Complete a stationary `φ_∞` with `v_∞`, `u_∞`, `μ_∞`, `η_∞` and `V`.
pub fn postprocess_constants(
    phi_inf: &SurfaceField,
    data: &EquilibriumData,
    potential: &PotentialSpec,
    rule: VolumeRule,
) -> Result<EquilibriumSolution> {
    let grid = phi_inf.grid();
    let gamma = grid.total_measure();
    let d = data.delta;
    let v_total = match rule {
        VolumeRule::ExchangeEquilibrium => equilibrium_volume(data, gamma),
        VolumeRule::Given(v) => v,
    };
    let u_inf = (data.total_mass - v_total) / data.omega_measure;
    let eta_inf = (4.0 / d * v_total - 2.0 / d * (gamma + data.phi_mass)) / gamma;
    let c = (2.0 * v_total - grid.integral(phi_inf.values())) / gamma;
    let v_inf = phi_inf.map(|p| 0.5 * (p + c));
    let wp = phi_inf
        .values()
        .iter()
        .map(|&p| potential.prime(p))
        .collect::<Result<Vec<_>>>()?;
    let wp_mean = wp.iter().sum::<f64>() / wp.len() as f64;
    let mu_inf = wp_mean - 0.5 * eta_inf;
    EquilibriumSolution::new(
        phi_inf.clone(),
        v_inf,
        u_inf,
        mu_inf,
        eta_inf,
        v_total,
        data,
        potential,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn circle(n: usize) -> Arc<SurfaceGrid> {
        SurfaceGrid::circle(n).unwrap()
    }

    #[test]
    fn constant_init_is_returned() {
        let g = circle(32);
        let pot = PotentialSpec::logarithmic(1.0, 2.0).unwrap();
        let init = SurfaceField::constant(g.clone(), 0.3);
        let phi = solve_stationary_phi(&g, &pot, 0.3, &init, 1e-10).unwrap();
        assert_eq!(phi, init);
        assert!(steady_residual(&phi, &pot).unwrap() <= 1e-14);
    }

    #[test]
    fn nonconstant_solution_when_unstable() {
        let g = circle(64);
        let pot = PotentialSpec::logarithmic(1.0, 2.5).unwrap();
        let init = SurfaceField::from_fn(g.clone(), |t, _| 0.3 * t.cos());
        let tol = 1e-9;
        let phi = solve_stationary_phi(&g, &pot, 0.0, &init, tol).unwrap();
        assert!(steady_residual(&phi, &pot).unwrap() <= tol);
        assert!(g.mean(phi.values()).abs() <= 1e-12);
        let spread = phi.values().iter().fold(0.0f64, |m, &p| m.max(p))
            - phi.values().iter().fold(0.0f64, |m, &p| m.min(p));
        assert!(spread > 0.1, "{spread}");
        assert!(phi.max_abs() < 1.0);
    }

    #[test]
    fn gradient_flow_fallback_on_torus() {
        // too large for the dense Newton path
        let g = SurfaceGrid::torus(32, 48, 12.0, 12.0).unwrap();
        let pot = PotentialSpec::logarithmic(1.0, 2.0).unwrap();
        let init = SurfaceField::from_fn(g.clone(), |x, y| {
            0.2 * (2.0 * PI * x / 12.0).cos() + 0.1 * (2.0 * PI * y / 12.0).sin()
        });
        let phi = solve_stationary_phi(&g, &pot, 0.0, &init, 1e-6).unwrap();
        assert!(steady_residual(&phi, &pot).unwrap() <= 1e-6);
    }

    #[test]
    fn random_field_is_not_stationary() {
        let g = circle(32);
        let pot = PotentialSpec::default();
        let f = SurfaceField::from_fn(g, |t, _| 0.4 * (3.0 * t).sin() + 0.2 * (7.0 * t).cos());
        assert!(steady_residual(&f, &pot).unwrap() > 1e-3);
    }

    #[test]
    fn preconditions() {
        let g = circle(16);
        let pot = PotentialSpec::default();
        let init = SurfaceField::constant(g.clone(), 0.0);
        assert!(solve_stationary_phi(&g, &pot, 1.0, &init, 1e-8).is_err());
        assert!(solve_stationary_phi(&g, &pot, 0.2, &init, 1e-8).is_err());
        assert!(solve_stationary_phi(&circle(32), &pot, 0.0, &init, 1e-8).is_err());
    }

    #[test]
    fn hand_derived_constants() {
        let g = circle(32);
        let pot = PotentialSpec::logarithmic(1.0, 2.0).unwrap();
        let data = EquilibriumData {
            total_mass: PI,
            phi_mass: 0.0,
            delta: 1.0,
            omega_measure: PI,
        };
        let phi = SurfaceField::constant(g, 0.0);
        let eq = postprocess_constants(&phi, &data, &pot, VolumeRule::ExchangeEquilibrium).unwrap();
        assert!((eq.v_total - PI).abs() < 1e-14);
        assert!(eq.u_inf.abs() < 1e-14);
        assert!(eq.eta_inf.abs() < 1e-14);
        assert!(eq.v_inf.values().iter().all(|v| (v - 0.5).abs() < 1e-14));
    }

    #[test]
    fn given_volume_and_constant_phi() {
        let g = circle(32);
        let pot = PotentialSpec::logarithmic(1.0, 2.0).unwrap();
        let data = EquilibriumData {
            total_mass: 5.0,
            phi_mass: 0.0,
            delta: 0.7,
            omega_measure: PI,
        };
        let eq = postprocess_constants(&SurfaceField::constant(g, 0.0), &data, &pot, VolumeRule::Given(2.0))
            .unwrap();
        let vbar = 2.0 / (2.0 * PI);
        assert!(eq.v_inf.values().iter().all(|v| (v - vbar).abs() < 1e-14));
        assert!(((5.0 - 2.0) / PI - eq.u_inf).abs() < 1e-14);

        let m = 0.25;
        let g = circle(16);
        let data = EquilibriumData {
            phi_mass: m * 2.0 * PI,
            ..data
        };
        let eq = postprocess_constants(&SurfaceField::constant(g, m), &data, &pot, VolumeRule::Given(1.0))
            .unwrap();
        assert!((eq.mu_inf - (pot.prime(m).unwrap() - 0.5 * eq.eta_inf)).abs() < 1e-14);
    }

    #[test]
    fn postprocess_nonconstant_state() {
        let g = circle(64);
        let pot = PotentialSpec::logarithmic(1.0, 2.5).unwrap();
        let init = SurfaceField::from_fn(g.clone(), |t, _| 0.2 + 0.3 * t.cos());
        let phi = solve_stationary_phi(&g, &pot, 0.2, &init, 1e-10).unwrap();
        let data = EquilibriumData {
            total_mass: 4.0,
            phi_mass: 0.2 * 2.0 * PI,
            delta: 2.0,
            omega_measure: PI,
        };
        let eq = postprocess_constants(&phi, &data, &pot, VolumeRule::ExchangeEquilibrium).unwrap();
        // u_∞ = η_∞ on this branch
        assert!((eq.u_inf - eq.eta_inf).abs() < 1e-12);
        assert!(eq.phi_inf.max_abs() < 1.0);
    }
}
