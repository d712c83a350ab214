//! States, parameters, exchange laws, chemical potentials, energies and the
//! diagnostic functionals of the full and reduced systems.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bulk::{self, BulkField};
use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::surface::{SurfaceField, SurfaceGrid};

/// Interface-width parameter; fixed to 1.
pub const EPSILON: f64 = 1.0;

/// Time dependence of the equilibrium exchange coefficient `A(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ACoefficient {
    Constant { a0: f64 },
    /// `A(t) = c (1 + t)^{-alpha}`
    Power { c: f64, alpha: f64 },
}

impl ACoefficient {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { a0 } => a0,
            Self::Power { c, alpha } => c * (1.0 + t).powf(-alpha),
        }
    }

    /// `lim_{t→∞} A(t) > 0`
    pub fn limit_positive(&self) -> bool {
        matches!(*self, Self::Constant { a0 } if a0 > 0.0)
    }
}

/// Constitutive law for the bulk-surface mass exchange `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExchangeLaw {
    /// `q = -A(t)(η - u)`
    Equilibrium { coefficient: ACoefficient },
    /// `q = B₁u(1 - v) - B₂v`
    Reaction { b1: f64, b2: f64 },
    /// `q = B₁u - B₁h̃(u)v - B₂v` with `h̃` a bounded C¹ cutoff equal to the
    /// identity on `[-h0, h0]`.
    CutoffReaction { b1: f64, b2: f64, h0: f64 },
}

impl ExchangeLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Equilibrium { coefficient } => match coefficient {
                ACoefficient::Constant { a0 } if a0 >= 0.0 => Ok(()),
                ACoefficient::Power { c, alpha } if c >= 0.0 && alpha > 0.0 => Ok(()),
                _ => Err(Error::Domain(format!(
                    "equilibrium coefficient must be nonnegative: {coefficient:?}"
                ))),
            },
            Self::Reaction { b1, b2 } if b1 > 0.0 && b2 > 0.0 => Ok(()),
            Self::CutoffReaction { b1, b2, h0 } if b1 > 0.0 && b2 > 0.0 && h0 > 0.0 => Ok(()),
            _ => Err(Error::Domain(format!(
                "reaction rates and cutoff must be positive: {self:?}"
            ))),
        }
    }
}

/// Bounded C¹ cutoff: identity on `[-h0, h0]`, saturating at `±(h0 + ½)`
/// through a quadratic blend on `h0 ≤ |r| ≤ h0 + 1`.
pub fn cutoff(h0: f64, r: f64) -> f64 {
    let s = r.abs() - h0;
    if s <= 0.0 {
        r
    } else if s < 1.0 {
        r.signum() * (h0 + s - 0.5 * s * s)
    } else {
        r.signum() * (h0 + 0.5)
    }
}

/// Structural parameters of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    /// Bulk diffusivity `D`.
    pub diffusivity: f64,
    /// Affinity strength `δ`.
    pub delta: f64,
    pub potential: PotentialSpec,
    pub exchange: ExchangeLaw,
}

impl Params {
    pub fn new(
        diffusivity: f64,
        delta: f64,
        potential: PotentialSpec,
        exchange: ExchangeLaw,
    ) -> Result<Self> {
        if !(diffusivity > 0.0 && diffusivity.is_finite()) {
            return Err(Error::Domain(format!("D must be positive, got {diffusivity}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("delta must be positive, got {delta}")));
        }
        exchange.validate()?;
        Ok(Self {
            diffusivity,
            delta,
            potential,
            exchange,
        })
    }
}

/// State of the full bulk-surface system.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub t: f64,
    pub u: BulkField,
    pub phi: SurfaceField,
    pub v: SurfaceField,
}

impl FullState {
    pub fn new(t: f64, u: BulkField, phi: SurfaceField, v: SurfaceField) -> Result<Self> {
        let boundary = u.grid().boundary();
        if **boundary != **phi.grid() || **phi.grid() != **v.grid() {
            return Err(Error::Domain(
                "u, phi and v must live on compatible grids".into(),
            ));
        }
        Ok(Self { t, u, phi, v })
    }

    pub fn surface_grid(&self) -> &Arc<SurfaceGrid> {
        self.phi.grid()
    }
}

/// State of the reduced (large-diffusion) system; `u` is a spatial constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub t: f64,
    pub u: f64,
    pub phi: SurfaceField,
    pub v: SurfaceField,
    /// Conserved total cholesterol mass `M = |Ω|u + ∫v`.
    pub total_mass: f64,
    /// |Ω|
    pub omega_measure: f64,
}

impl ReducedState {
    /// Build a state from `(φ, v)` and the scalar `u₀`; `M` is derived.
    pub fn from_initial(
        u: f64,
        phi: SurfaceField,
        v: SurfaceField,
        omega_measure: f64,
    ) -> Result<Self> {
        if **phi.grid() != **v.grid() {
            return Err(Error::Domain("phi and v must share a grid".into()));
        }
        if !(omega_measure > 0.0) {
            return Err(Error::Domain(format!("|Omega| must be positive, got {omega_measure}")));
        }
        let total_mass = omega_measure * u + crate::surface::surface_integral(&v);
        Ok(Self {
            t: 0.0,
            u,
            phi,
            v,
            total_mass,
            omega_measure,
        })
    }

    /// Build a state with prescribed `M`; `u` is reconstructed from the
    /// mass identity.
    pub fn with_mass(
        t: f64,
        phi: SurfaceField,
        v: SurfaceField,
        total_mass: f64,
        omega_measure: f64,
    ) -> Result<Self> {
        if **phi.grid() != **v.grid() {
            return Err(Error::Domain("phi and v must share a grid".into()));
        }
        let u = reduced_u_from_mass(total_mass, &v, omega_measure);
        Ok(Self {
            t,
            u,
            phi,
            v,
            total_mass,
            omega_measure,
        })
    }

    /// `| |Ω|u + ∫v − M |`
    pub fn mass_defect(&self) -> f64 {
        (self.omega_measure * self.u + crate::surface::surface_integral(&self.v) - self.total_mass)
            .abs()
    }
}

/// `η = (2/δ)(2v − 1 − φ)`
pub fn chem_eta(phi: &SurfaceField, v: &SurfaceField, delta: f64) -> SurfaceField {
    let c = 2.0 / delta;
    v.zip_with(phi, |v, p| c * (2.0 * v - 1.0 - p))
}

/// `μ = −Δ_Γφ + W'(φ) − η/2`
pub fn chem_mu(
    phi: &SurfaceField,
    eta: &SurfaceField,
    potential: &PotentialSpec,
) -> Result<SurfaceField> {
    let grid = phi.grid();
    let lap = grid.laplacian(phi.values());
    let values = phi
        .values()
        .iter()
        .zip(&lap)
        .zip(eta.values())
        .map(|((&p, &l), &e)| Ok(-l + potential.prime(p)? - 0.5 * e))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceField::from_values_unchecked(grid.clone(), values))
}

/// Bulk concentration as seen by the exchange law.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryU<'a> {
    Trace(&'a SurfaceField),
    Scalar(f64),
}

impl BoundaryU<'_> {
    fn at(&self, i: usize) -> f64 {
        match self {
            BoundaryU::Trace(f) => f.values()[i],
            BoundaryU::Scalar(u) => *u,
        }
    }
}

/// Evaluate the exchange law pointwise on the surface.
pub fn exchange_q(
    law: &ExchangeLaw,
    u: BoundaryU<'_>,
    eta: &SurfaceField,
    v: &SurfaceField,
    t: f64,
) -> SurfaceField {
    let grid = v.grid().clone();
    let n = grid.len();
    let values: Vec<f64> = match *law {
        ExchangeLaw::Equilibrium { coefficient } => {
            let a = coefficient.at(t);
            (0..n).map(|i| -a * (eta.values()[i] - u.at(i))).collect()
        }
        ExchangeLaw::Reaction { b1, b2 } => (0..n)
            .map(|i| {
                let vi = v.values()[i];
                b1 * u.at(i) * (1.0 - vi) - b2 * vi
            })
            .collect(),
        ExchangeLaw::CutoffReaction { b1, b2, h0 } => (0..n)
            .map(|i| {
                let (ui, vi) = (u.at(i), v.values()[i]);
                b1 * ui - b1 * cutoff(h0, ui) * vi - b2 * vi
            })
            .collect(),
    };
    SurfaceField::from_values_unchecked(grid, values)
}

fn potential_integral(phi: &SurfaceField, potential: &PotentialSpec) -> Result<f64> {
    let mut total = 0.0;
    for &p in phi.values() {
        total += potential.value(p)?;
    }
    Ok(total * phi.grid().cell_measure())
}

/// `F(φ, v) = ∫ ½|∇φ|² + W(φ) + (2/δ)(v − (1+φ)/2)²`
pub fn surface_energy(phi: &SurfaceField, v: &SurfaceField, params: &Params) -> Result<f64> {
    let grid = phi.grid();
    let gradient = 0.5 * grid.h1_seminorm_sq(phi.values());
    let bulk_w = potential_integral(phi, &params.potential)?;
    let affinity: f64 = phi
        .values()
        .iter()
        .zip(v.values())
        .map(|(&p, &v)| (v - 0.5 * (1.0 + p)).powi(2))
        .sum::<f64>()
        * grid.cell_measure()
        * 2.0
        / params.delta;
    Ok(gradient + bulk_w + affinity)
}

/// `E = ½∫_Ω u² + F(φ, v)`
pub fn total_energy(state: &FullState, params: &Params) -> Result<f64> {
    Ok(0.5 * bulk::bulk_l2_sq(&state.u) + surface_energy(&state.phi, &state.v, params)?)
}

/// `E = ½|Ω|u² + F(φ, v)` for the reduced system.
pub fn reduced_total_energy(state: &ReducedState, params: &Params) -> Result<f64> {
    Ok(0.5 * state.omega_measure * state.u * state.u
        + surface_energy(&state.phi, &state.v, params)?)
}

/// `(∫_Ω u + ∫_Γ v, ∫_Γ φ)`
pub fn masses(state: &FullState) -> (f64, f64) {
    (
        bulk::bulk_integral(&state.u) + crate::surface::surface_integral(&state.v),
        crate::surface::surface_integral(&state.phi),
    )
}

/// `(|Ω|u + ∫_Γ v, ∫_Γ φ)`
pub fn reduced_masses(state: &ReducedState) -> (f64, f64) {
    (
        state.omega_measure * state.u + crate::surface::surface_integral(&state.v),
        crate::surface::surface_integral(&state.phi),
    )
}

/// Lyapunov functional of the reduced reaction system:
/// `G = ½‖∇φ‖² + ∫W(φ) + (2/δ)‖v‖² − (2/δ)∫φv + (1/2δ)‖φ‖² + ½‖φ − ⟨φ⟩‖²_{(H¹)'}`.
pub fn lyapunov_g(phi: &SurfaceField, v: &SurfaceField, params: &Params) -> Result<f64> {
    let grid = phi.grid();
    let d = params.delta;
    let p = phi.values();
    let vv = v.values();
    Ok(0.5 * grid.h1_seminorm_sq(p)
        + potential_integral(phi, &params.potential)?
        + 2.0 / d * grid.inner(vv, vv)
        - 2.0 / d * grid.inner(p, vv)
        + 0.5 / d * grid.inner(p, p)
        + 0.5 * grid.hminus1_norm_of_fluctuation(p).powi(2))
}

/// `u = (M − ∫v)/|Ω|`
pub fn reduced_u_from_mass(total_mass: f64, v: &SurfaceField, omega_measure: f64) -> f64 {
    (total_mass - crate::surface::surface_integral(v)) / omega_measure
}

/// Nonlocal reaction term `q(v) = (B₁/|Ω|)(M − ∫v)(1 − v) − B₂v`.
pub fn reduced_q_of_v(
    b1: f64,
    b2: f64,
    total_mass: f64,
    v: &SurfaceField,
    omega_measure: f64,
) -> SurfaceField {
    let u = reduced_u_from_mass(total_mass, v, omega_measure);
    v.map(|vi| b1 * u * (1.0 - vi) - b2 * vi)
}

/// One sample of a trajectory. Column order of the CSV series follows
/// [`DiagnosticsRecord::COLUMNS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub total_energy: f64,
    pub surface_energy: f64,
    pub lyapunov_g: f64,
    pub combined_mass: f64,
    pub phi_mass: f64,
    /// `1 − max|φ|`
    pub separation_margin: f64,
    /// `D‖∇u‖²`
    pub bulk_dissipation: f64,
    /// `‖∇_Γμ‖²`
    pub mu_dissipation: f64,
    /// `‖∇_Γη‖²`
    pub eta_dissipation: f64,
    /// `∫_Γ q`
    pub q_integral: f64,
    /// `∫_Γ q(η − u)`
    pub q_work: f64,
    pub newton_iters: u64,
    /// Reduced `u`, or the bulk mean for full runs.
    pub u_scalar: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 14] = [
        "t",
        "total_energy",
        "surface_energy",
        "lyapunov_g",
        "combined_mass",
        "phi_mass",
        "separation_margin",
        "bulk_dissipation",
        "mu_dissipation",
        "eta_dissipation",
        "q_integral",
        "q_work",
        "newton_iters",
        "u_scalar",
    ];

    pub fn to_row(&self) -> [f64; 14] {
        [
            self.t,
            self.total_energy,
            self.surface_energy,
            self.lyapunov_g,
            self.combined_mass,
            self.phi_mass,
            self.separation_margin,
            self.bulk_dissipation,
            self.mu_dissipation,
            self.eta_dissipation,
            self.q_integral,
            self.q_work,
            self.newton_iters as f64,
            self.u_scalar,
        ]
    }

    pub fn from_row(row: &[f64; 14]) -> Self {
        Self {
            t: row[0],
            total_energy: row[1],
            surface_energy: row[2],
            lyapunov_g: row[3],
            combined_mass: row[4],
            phi_mass: row[5],
            separation_margin: row[6],
            bulk_dissipation: row[7],
            mu_dissipation: row[8],
            eta_dissipation: row[9],
            q_integral: row[10],
            q_work: row[11],
            newton_iters: row[12] as u64,
            u_scalar: row[13],
        }
    }
}

/// Exchange flux of a full state at its own time, using the boundary trace.
pub fn full_exchange(state: &FullState, params: &Params) -> (SurfaceField, SurfaceField, SurfaceField) {
    let eta = chem_eta(&state.phi, &state.v, params.delta);
    let trace = bulk::trace_boundary(&state.u);
    let q = exchange_q(&params.exchange, BoundaryU::Trace(&trace), &eta, &state.v, state.t);
    (q, eta, trace)
}

/// Exchange flux of a reduced state.
pub fn reduced_exchange(state: &ReducedState, params: &Params) -> (SurfaceField, SurfaceField) {
    let eta = chem_eta(&state.phi, &state.v, params.delta);
    let q = match params.exchange {
        ExchangeLaw::Reaction { b1, b2 } => {
            reduced_q_of_v(b1, b2, state.total_mass, &state.v, state.omega_measure)
        }
        law => exchange_q(&law, BoundaryU::Scalar(state.u), &eta, &state.v, state.t),
    };
    (q, eta)
}

fn surface_diagnostics(
    phi: &SurfaceField,
    v: &SurfaceField,
    eta: &SurfaceField,
    params: &Params,
) -> Result<(f64, f64, f64, f64, f64)> {
    let grid = phi.grid();
    let mu = chem_mu(phi, eta, &params.potential)?;
    Ok((
        surface_energy(phi, v, params)?,
        lyapunov_g(phi, v, params)?,
        grid.h1_seminorm_sq(mu.values()),
        grid.h1_seminorm_sq(eta.values()),
        1.0 - phi.max_abs(),
    ))
}

pub fn diagnostics_full(state: &FullState, params: &Params, newton_iters: u64) -> Result<DiagnosticsRecord> {
    let (q, eta, trace) = full_exchange(state, params);
    let grid = state.surface_grid();
    let (surface, g, mu_d, eta_d, margin) = surface_diagnostics(&state.phi, &state.v, &eta, params)?;
    let (combined, phi_mass) = masses(state);
    let work: Vec<f64> = eta
        .values()
        .iter()
        .zip(trace.values())
        .map(|(e, u)| e - u)
        .collect();
    Ok(DiagnosticsRecord {
        t: state.t,
        total_energy: 0.5 * bulk::bulk_l2_sq(&state.u) + surface,
        surface_energy: surface,
        lyapunov_g: g,
        combined_mass: combined,
        phi_mass,
        separation_margin: margin,
        bulk_dissipation: params.diffusivity * bulk::bulk_grad_norm_sq(&state.u),
        mu_dissipation: mu_d,
        eta_dissipation: eta_d,
        q_integral: grid.integral(q.values()),
        q_work: grid.inner(q.values(), &work),
        newton_iters,
        u_scalar: bulk::bulk_mean(&state.u),
    })
}

pub fn diagnostics_reduced(
    state: &ReducedState,
    params: &Params,
    newton_iters: u64,
) -> Result<DiagnosticsRecord> {
    let (q, eta) = reduced_exchange(state, params);
    let grid = state.phi.grid();
    let (surface, g, mu_d, eta_d, margin) = surface_diagnostics(&state.phi, &state.v, &eta, params)?;
    let (combined, phi_mass) = reduced_masses(state);
    let work: Vec<f64> = eta.values().iter().map(|e| e - state.u).collect();
    Ok(DiagnosticsRecord {
        t: state.t,
        total_energy: 0.5 * state.omega_measure * state.u * state.u + surface,
        surface_energy: surface,
        lyapunov_g: g,
        combined_mass: combined,
        phi_mass,
        separation_margin: margin,
        bulk_dissipation: 0.0,
        mu_dissipation: mu_d,
        eta_dissipation: eta_d,
        q_integral: grid.integral(q.values()),
        q_work: grid.inner(q.values(), &work),
        newton_iters,
        u_scalar: state.u,
    })
}

/// Defect of the integrated energy balance over a stored segment:
/// `|E(t₂) − E(t₁) + ∫(D‖∇u‖² + ‖∇μ‖² + ‖∇η‖²) − ∫∫q(η − u)|`,
/// time integrals by the left-endpoint rule over consecutive records.
pub fn energy_identity_residual(segment: &[DiagnosticsRecord]) -> f64 {
    let (Some(first), Some(last)) = (segment.first(), segment.last()) else {
        return 0.0;
    };
    let integral: f64 = segment
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            dt * (w[0].bulk_dissipation + w[0].mu_dissipation + w[0].eta_dissipation - w[0].q_work)
        })
        .sum();
    (last.total_energy - first.total_energy + integral).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bulk::DiskGrid;
    use crate::surface::surface_integral;
    use std::f64::consts::PI;

    fn circle() -> Arc<SurfaceGrid> {
        SurfaceGrid::circle(32).unwrap()
    }

    fn params(delta: f64) -> Params {
        Params::new(
            1.0,
            delta,
            PotentialSpec::logarithmic(1.0, 2.0).unwrap(),
            ExchangeLaw::Equilibrium {
                coefficient: ACoefficient::Constant { a0: 1.0 },
            },
        )
        .unwrap()
    }

    fn c(v: f64) -> SurfaceField {
        SurfaceField::constant(circle(), v)
    }

    #[test]
    fn eta_examples() {
        assert!(chem_eta(&c(1.0), &c(1.0), 0.3).max_abs() == 0.0);
        assert!(chem_eta(&c(-1.0), &c(0.0), 0.3).max_abs() == 0.0);
        assert!(chem_eta(&c(0.0), &c(1.0), 2.0).values().iter().all(|&e| e == 1.0));
    }

    #[test]
    fn mu_examples() {
        let pot = PotentialSpec::logarithmic(1.0, 3.3).unwrap();
        let eta = chem_eta(&c(0.0), &c(0.5), 1.0);
        assert!(chem_mu(&c(0.0), &eta, &pot).unwrap().max_abs() == 0.0);
        let m = 0.4;
        let eta = chem_eta(&c(m), &c(0.5 * (1.0 + m)), 1.0);
        let mu = chem_mu(&c(m), &eta, &pot).unwrap();
        let w = pot.prime(m).unwrap();
        assert!(mu.values().iter().all(|&x| (x - w).abs() < 1e-14));

        // φ = a cos θ, v = ½: μ = a cos θ + W'(a cos θ) + (1/δ) a cos θ
        let delta = 0.8;
        let a = 1e-3;
        let phi = SurfaceField::from_fn(circle(), |t, _| a * t.cos());
        let eta = chem_eta(&phi, &c(0.5), delta);
        let mu = chem_mu(&phi, &eta, &pot).unwrap();
        for i in [0, 5, 11] {
            let p = phi.values()[i];
            let direct = p + pot.prime(p).unwrap() + p / delta;
            assert!((mu.values()[i] - direct).abs() < 1e-13);
            let linear = p * (1.0 + pot.second(0.0).unwrap() + 1.0 / delta);
            assert!((mu.values()[i] - linear).abs() < 10.0 * a * a * a);
        }
    }

    #[test]
    fn singular_mu_propagates_error() {
        let pot = PotentialSpec::logarithmic(1.0, 2.0).unwrap();
        assert!(chem_mu(&c(1.0), &c(0.0), &pot).is_err());
    }

    #[test]
    fn exchange_examples() {
        let zero = ExchangeLaw::Equilibrium {
            coefficient: ACoefficient::Constant { a0: 0.0 },
        };
        let eta = c(0.3);
        assert!(exchange_q(&zero, BoundaryU::Scalar(2.0), &eta, &c(0.1), 0.0).max_abs() == 0.0);
        let r = ExchangeLaw::Reaction { b1: 1.7, b2: 0.4 };
        let q = exchange_q(&r, BoundaryU::Scalar(1.0), &eta, &c(0.0), 0.0);
        assert!(q.values().iter().all(|&x| x == 1.7));
        let cut = ExchangeLaw::CutoffReaction { b1: 1.7, b2: 0.4, h0: 2.0 };
        for u in [-2.0, -0.3, 0.0, 1.1, 2.0] {
            let v = SurfaceField::from_fn(circle(), |t, _| 0.5 + 0.3 * t.sin());
            let a = exchange_q(&r, BoundaryU::Scalar(u), &eta, &v, 0.0);
            let b = exchange_q(&cut, BoundaryU::Scalar(u), &eta, &v, 0.0);
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cutoff_is_bounded_c1() {
        let h0 = 1.5;
        let h = 1e-6;
        for i in 0..2000 {
            let r = -6.0 + 0.006 * i as f64;
            let v = cutoff(h0, r);
            assert!(v.abs() <= h0 + 0.5);
            let d = (cutoff(h0, r + h) - cutoff(h0, r - h)) / (2.0 * h);
            assert!((-1e-6..=1.0 + 1e-6).contains(&d));
        }
        assert_eq!(cutoff(h0, 10.0), h0 + 0.5);
        assert_eq!(cutoff(h0, -1.2), -1.2);
    }

    #[test]
    fn equilibrium_exchange_is_dissipative() {
        let g = circle();
        let law = ExchangeLaw::Equilibrium {
            coefficient: ACoefficient::Power { c: 2.0, alpha: 2.0 },
        };
        for k in 0..5 {
            let eta = SurfaceField::from_fn(g.clone(), |t, _| (k as f64 * t).sin() + 0.2 * k as f64);
            let u = SurfaceField::from_fn(g.clone(), |t, _| t.cos() * 0.7);
            let q = exchange_q(&law, BoundaryU::Trace(&u), &eta, &eta, 0.5);
            let diff: Vec<f64> = eta.values().iter().zip(u.values()).map(|(e, u)| e - u).collect();
            let work = g.inner(q.values(), &diff);
            let a = 2.0 * 1.5f64.powi(-2);
            assert!(work <= 0.0);
            assert!((work + a * g.inner(&diff, &diff)).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_energy_examples() {
        let p = params(1.0);
        let m = 0.3;
        let e = surface_energy(&c(m), &c(0.5 * (1.0 + m)), &p).unwrap();
        assert!((e - 2.0 * PI * p.potential.value(m).unwrap()).abs() < 1e-13);
        let e0 = surface_energy(&c(0.0), &c(0.0), &p).unwrap();
        assert!((e0 - 2.0 * PI * 0.5).abs() < 1e-13);
    }

    #[test]
    fn surface_energy_affinity_identity() {
        let g = circle();
        for (k, delta) in [(1, 0.3), (2, 1.0), (5, 4.0)] {
            let p = params(delta);
            let phi = SurfaceField::from_fn(g.clone(), |t, _| 0.6 * (k as f64 * t).cos());
            let v = SurfaceField::from_fn(g.clone(), |t, _| 0.4 + 0.3 * (t + k as f64).sin());
            let eta = chem_eta(&phi, &v, delta);
            let alt = 0.5 * g.h1_seminorm_sq(phi.values())
                + potential_integral(&phi, &p.potential).unwrap()
                + delta / 8.0 * g.inner(eta.values(), eta.values());
            let direct = surface_energy(&phi, &v, &p).unwrap();
            assert!((alt - direct).abs() <= 1e-12 * direct.abs());
        }
    }

    fn full_state(u: f64, phi: f64, v: f64) -> FullState {
        let g = circle();
        let disk = DiskGrid::new(16, g.clone()).unwrap();
        FullState::new(
            0.0,
            BulkField::constant(disk, u),
            SurfaceField::constant(g.clone(), phi),
            SurfaceField::constant(g, v),
        )
        .unwrap()
    }

    #[test]
    fn total_energy_examples() {
        let p = params(1.0);
        let w0 = 2.0 * PI * p.potential.value(0.0).unwrap();
        assert!((total_energy(&full_state(0.0, 0.0, 0.5), &p).unwrap() - w0).abs() < 1e-13);
        assert!(
            (total_energy(&full_state(1.0, 0.0, 0.5), &p).unwrap() - (PI / 2.0 + w0)).abs() < 1e-12
        );
        let e1 = total_energy(&full_state(0.7, 0.1, 0.3), &p).unwrap();
        let e2 = total_energy(&full_state(1.4, 0.1, 0.3), &p).unwrap();
        let surf = surface_energy(&c(0.1), &c(0.3), &p).unwrap();
        assert!(((e2 - surf) - 4.0 * (e1 - surf)).abs() < 1e-12);
    }

    #[test]
    fn mass_examples() {
        let (combined, _) = masses(&full_state(1.0, 0.0, 0.0));
        assert!((combined - PI).abs() < 1e-12);
        let r = ReducedState::from_initial(0.0, c(0.2), c(0.5), PI).unwrap();
        let (combined, phi_mass) = reduced_masses(&r);
        assert!((combined - PI).abs() < 1e-14);
        assert!((phi_mass - 2.0 * PI * 0.2).abs() < 1e-14);
        assert!(r.mass_defect() < 1e-14);
    }

    #[test]
    fn lyapunov_examples() {
        let p = params(1.0);
        let w0 = 2.0 * PI * p.potential.value(0.0).unwrap();
        assert!((lyapunov_g(&c(0.0), &c(0.0), &p).unwrap() - w0).abs() < 1e-13);
        assert!((lyapunov_g(&c(0.0), &c(1.0), &p).unwrap() - (w0 + 4.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_bounded_below_by_norms() {
        // G ≥ ½‖∇φ‖² + (1/δ)‖v‖² + |Γ| min W − |Γ|/(2δ) for |φ| ≤ 1
        let g = circle();
        for delta in [0.2, 1.0, 3.0] {
            let p = params(delta);
            let c10 = 0.5f64.min(1.0 / delta);
            let min_w = (0..=2000)
                .map(|i| p.potential.value(-1.0 + 1e-3 * i as f64).unwrap())
                .fold(f64::INFINITY, f64::min);
            let c11 = c10 * 2.0 * PI + PI / delta - 2.0 * PI * min_w;
            for k in 1..6 {
                for scale in [0.1, 1.0, 10.0, 100.0] {
                    let phi = SurfaceField::from_fn(g.clone(), |t, _| 0.95 * (k as f64 * t).sin());
                    let v = SurfaceField::from_fn(g.clone(), |t, _| scale * (1.0 + (t * k as f64).cos()));
                    let h1 = g.h1_seminorm_sq(phi.values()) + g.inner(phi.values(), phi.values());
                    let gv = lyapunov_g(&phi, &v, &p).unwrap();
                    let bound = c10 * (h1 + g.inner(v.values(), v.values())) - c11;
                    assert!(gv >= bound, "delta={delta} k={k} scale={scale}");
                }
            }
        }
    }

    #[test]
    fn reduced_examples() {
        let g = circle();
        assert!((reduced_u_from_mass(PI, &c(0.0), PI) - 1.0).abs() < 1e-15);
        let v = SurfaceField::from_fn(g.clone(), |t, _| 0.5 + 0.2 * t.cos());
        let m = surface_integral(&v);
        assert!(reduced_u_from_mass(m, &v, PI).abs() < 1e-15);
        let q = reduced_q_of_v(1.3, 0.7, m, &v, PI);
        for (qi, vi) in q.values().iter().zip(v.values()) {
            assert!((qi + 0.7 * vi).abs() < 1e-14);
        }
        let q = reduced_q_of_v(1.0, 1.0, 2.0 * PI, &c(0.5), PI);
        assert!(q.max_abs() < 1e-15);
    }

    #[test]
    fn energy_residual_edge_cases() {
        assert_eq!(energy_identity_residual(&[]), 0.0);
        let p = params(1.0);
        let s = full_state(0.0, 0.0, 0.5);
        let r = diagnostics_full(&s, &p, 0).unwrap();
        assert_eq!(energy_identity_residual(&[r]), 0.0);
        let mut r2 = r;
        r2.t = 1.0;
        assert!(energy_identity_residual(&[r, r2]) < 1e-15);
    }

    #[test]
    fn params_validation() {
        let pot = PotentialSpec::default();
        let law = ExchangeLaw::Reaction { b1: 1.0, b2: 1.0 };
        assert!(Params::new(0.0, 1.0, pot, law).is_err());
        assert!(Params::new(1.0, -1.0, pot, law).is_err());
        assert!(Params::new(1.0, 1.0, pot, ExchangeLaw::Reaction { b1: 0.0, b2: 1.0 }).is_err());
        let neg = ExchangeLaw::Equilibrium {
            coefficient: ACoefficient::Constant { a0: -1.0 },
        };
        assert!(Params::new(1.0, 1.0, pot, neg).is_err());
    }
}
