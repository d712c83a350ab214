//! Double-well potentials `W(r) = F(r) - (θ₀/2) r²`.
//!
//! Three variants are supported:
//!
//! * the logarithmic (Flory-Huggins) potential
//!   `F(r) = θ/2 [(1-r) ln(1-r) + (1+r) ln(1+r)]`, defined on `[-1, 1]`,
//! * the quartic polynomial `W(r) = (1 - r²)² / 4`, split as
//!   `F(r) = (1 + r⁴)/4` with concave coefficient 1,
//! * the κ-regularized logarithmic potential, where `F'` is continued linearly
//!   outside `[-1+κ, 1-κ]` so that `F_κ` is finite and convex on all of ℝ.
//!
//! The convex part `F` is what the time stepper treats implicitly; the
//! quadratic concave part is treated explicitly.

use crate::error::{Error, Result};

/// Variant of the double-well potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    Logarithmic,
    Polynomial,
    /// Logarithmic base with `F'` linearly extended beyond `|r| = 1 - kappa`.
    Regularized { kappa: f64 },
}

/// Immutable description of a double-well potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    kind: PotentialKind,
    theta: f64,
    theta0: f64,
    r0: f64,
}

pub const DEFAULT_THETA: f64 = 1.0;
pub const DEFAULT_THETA0: f64 = 2.0;
pub const DEFAULT_R0: f64 = 0.5;

impl Default for PotentialSpec {
    fn default() -> Self {
        Self {
            kind: PotentialKind::Logarithmic,
            theta: DEFAULT_THETA,
            theta0: DEFAULT_THETA0,
            r0: DEFAULT_R0,
        }
    }
}

impl PotentialSpec {
    /// Logarithmic potential; requires `0 < theta < theta0`.
    pub fn logarithmic(theta: f64, theta0: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < theta0 && theta0.is_finite()) {
            return Err(Error::Domain(format!(
                "logarithmic potential requires 0 < theta < theta0 (got theta = {theta}, theta0 = {theta0})"
            )));
        }
        Ok(Self {
            kind: PotentialKind::Logarithmic,
            theta,
            theta0,
            r0: DEFAULT_R0,
        })
    }

    /// `W(r) = (1 - r²)² / 4`.
    pub fn polynomial() -> Self {
        Self {
            kind: PotentialKind::Polynomial,
            theta: DEFAULT_THETA,
            theta0: 1.0,
            r0: DEFAULT_R0,
        }
    }

    /// κ-regularized logarithmic potential; requires `0 < kappa < r0`.
    pub fn regularized(theta: f64, theta0: f64, kappa: f64) -> Result<Self> {
        Self::logarithmic(theta, theta0)?.into_regularized(kappa)
    }

    /// Override the monotonicity threshold `r0` (must lie in `(0, 1)`).
    pub fn with_r0(mut self, r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 1.0) {
            return Err(Error::Domain(format!("r0 must lie in (0, 1), got {r0}")));
        }
        if let PotentialKind::Regularized { kappa } = self.kind {
            if kappa >= r0 {
                return Err(Error::Domain(format!(
                    "kappa = {kappa} must be smaller than r0 = {r0}"
                )));
            }
        }
        self.r0 = r0;
        Ok(self)
    }

    /// The regularized counterpart of a logarithmic potential.
    pub fn into_regularized(self, kappa: f64) -> Result<Self> {
        match self.kind {
            PotentialKind::Logarithmic | PotentialKind::Regularized { .. } => {}
            PotentialKind::Polynomial => {
                return Err(Error::Domain(
                    "only the logarithmic potential can be regularized".into(),
                ))
            }
        }
        if !(kappa > 0.0 && kappa < self.r0) {
            return Err(Error::Domain(format!(
                "kappa must lie in (0, r0 = {}), got {kappa}",
                self.r0
            )));
        }
        Ok(Self {
            kind: PotentialKind::Regularized { kappa },
            ..self
        })
    }

    /// The singular potential underlying a regularized one (identity otherwise).
    pub fn singular_base(self) -> Self {
        match self.kind {
            PotentialKind::Regularized { .. } => Self {
                kind: PotentialKind::Logarithmic,
                ..self
            },
            _ => self,
        }
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn kappa(&self) -> Option<f64> {
        match self.kind {
            PotentialKind::Regularized { kappa } => Some(kappa),
            _ => None,
        }
    }

    /// True when `W'` blows up at `±1` and iterates must stay inside `(-1, 1)`.
    pub fn is_singular(&self) -> bool {
        matches!(self.kind, PotentialKind::Logarithmic)
    }

    /// Coefficient `c` of the explicit concave part `-(c/2) r²`.
    pub fn concave_coeff(&self) -> f64 {
        match self.kind {
            PotentialKind::Polynomial => 1.0,
            _ => self.theta0,
        }
    }

    /// `W(r)`.
    pub fn value(&self, r: f64) -> Result<f64> {
        Ok(self.convex_value(r)? - 0.5 * self.concave_coeff() * r * r)
    }

    /// `W'(r)`.
    pub fn prime(&self, r: f64) -> Result<f64> {
        Ok(self.convex_prime(r)? - self.concave_coeff() * r)
    }

    /// `W''(r)`.
    pub fn second(&self, r: f64) -> Result<f64> {
        Ok(self.convex_second(r)? - self.concave_coeff())
    }

    /// Convex part `F(r)` (or `F_κ(r)`), with `F(0) = 0` for the logarithmic family.
    pub fn convex_value(&self, r: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::Logarithmic => {
                if r.abs() > 1.0 || r.is_nan() {
                    return Err(Error::Domain(format!(
                        "logarithmic potential undefined at r = {r}"
                    )));
                }
                Ok(log_f(self.theta, r))
            }
            PotentialKind::Polynomial => Ok(0.25 * (1.0 + r * r * r * r)),
            PotentialKind::Regularized { kappa } => {
                let edge = 1.0 - kappa;
                if r.abs() <= edge {
                    Ok(log_f(self.theta, r))
                } else {
                    let s = r.signum() * edge;
                    let d = r - s;
                    Ok(log_f(self.theta, s)
                        + log_fp(self.theta, s) * d
                        + 0.5 * log_fpp(self.theta, s) * d * d)
                }
            }
        }
    }

    /// `F'(r)` (or `F'_κ(r)`).
    pub fn convex_prime(&self, r: f64) -> Result<f64> {
        if self.is_singular() && !(r.abs() < 1.0) {
            return Err(Error::Singularity(r));
        }
        Ok(self.convex_prime_unchecked(r))
    }

    /// `F''(r)` (or `F''_κ(r)`).
    pub fn convex_second(&self, r: f64) -> Result<f64> {
        if self.is_singular() && !(r.abs() < 1.0) {
            return Err(Error::Singularity(r));
        }
        Ok(self.convex_second_unchecked(r))
    }

    /// `F'` without the domain check; non-finite outside `(-1, 1)` for the
    /// logarithmic kind.
    #[inline]
    pub fn convex_prime_unchecked(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => log_fp(self.theta, r),
            PotentialKind::Polynomial => r * r * r,
            PotentialKind::Regularized { kappa } => {
                let edge = 1.0 - kappa;
                if r.abs() <= edge {
                    log_fp(self.theta, r)
                } else {
                    let s = r.signum() * edge;
                    log_fp(self.theta, s) + log_fpp(self.theta, s) * (r - s)
                }
            }
        }
    }

    #[inline]
    pub fn convex_second_unchecked(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => log_fpp(self.theta, r),
            PotentialKind::Polynomial => 3.0 * r * r,
            PotentialKind::Regularized { kappa } => {
                let edge = 1.0 - kappa;
                log_fpp(self.theta, r.clamp(-edge, edge))
            }
        }
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[inline]
fn log_f(theta: f64, r: f64) -> f64 {
    0.5 * theta * (xlogx(1.0 - r) + xlogx(1.0 + r))
}

#[inline]
fn log_fp(theta: f64, r: f64) -> f64 {
    theta * r.atanh()
}

#[inline]
fn log_fpp(theta: f64, r: f64) -> f64 {
    theta / (1.0 - r * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log12() -> PotentialSpec {
        PotentialSpec::logarithmic(1.0, 2.0).unwrap()
    }

    #[test]
    fn value_examples() {
        assert_eq!(log12().value(0.0).unwrap(), 0.0);
        assert_eq!(PotentialSpec::polynomial().value(0.0).unwrap(), 0.25);
        let f_half = 0.5 * (0.5 * 0.5f64.ln() + 1.5 * 1.5f64.ln());
        assert!((log12().value(0.5).unwrap() - (f_half - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn value_at_pure_states_is_finite_limit() {
        let w = log12().value(1.0).unwrap();
        assert!((w - (2f64.ln() - 1.0)).abs() < 1e-15);
        assert_eq!(log12().value(-1.0).unwrap(), w);
        assert!(matches!(log12().value(1.0 + 1e-12), Err(Error::Domain(_))));
    }

    #[test]
    fn prime_examples() {
        let p = PotentialSpec::logarithmic(0.7, 3.1).unwrap();
        assert_eq!(p.prime(0.0).unwrap(), 0.0);
        let reg = PotentialSpec::regularized(1.0, 2.0, 0.1).unwrap();
        assert_eq!(reg.prime(0.5).unwrap(), log12().prime(0.5).unwrap());
        // F'_κ(1) = F'(0.9) + 0.1 F''(0.9) = ½ ln 19 + 0.1/0.19
        let expected = 0.5 * 19f64.ln() + 0.1 / (1.0 - 0.81);
        assert!((reg.convex_prime(1.0).unwrap() - expected).abs() < 1e-13);
        assert!((expected - 1.99854).abs() < 1e-5);
    }

    #[test]
    fn prime_errors_at_singularity() {
        assert!(matches!(log12().prime(1.0), Err(Error::Singularity(_))));
        assert!(matches!(log12().second(-1.0), Err(Error::Singularity(_))));
        assert!(PotentialSpec::regularized(1.0, 2.0, 0.1)
            .unwrap()
            .prime(3.0)
            .is_ok());
    }

    #[test]
    fn second_examples() {
        assert_eq!(log12().second(0.0).unwrap(), -1.0);
        assert_eq!(log12().convex_second(0.0).unwrap(), 1.0);
        let reg = PotentialSpec::regularized(1.0, 2.0, 0.1).unwrap();
        assert!((reg.convex_second(0.99).unwrap() - 1.0 / 0.19).abs() < 1e-12);
    }

    #[test]
    fn construction_checks() {
        assert!(PotentialSpec::logarithmic(2.0, 1.0).is_err());
        assert!(PotentialSpec::logarithmic(0.0, 1.0).is_err());
        assert!(PotentialSpec::regularized(1.0, 2.0, 0.6).is_err());
        assert!(PotentialSpec::regularized(1.0, 2.0, 0.0).is_err());
        assert!(PotentialSpec::polynomial().into_regularized(0.1).is_err());
        assert!(log12().with_r0(1.5).is_err());
    }

    #[test]
    fn finite_differences_match_derivatives() {
        let p = PotentialSpec::logarithmic(1.0, 2.5).unwrap();
        for i in 0..=36 {
            let r = -0.9 + 0.05 * i as f64;
            for h in [1e-3, 1e-4] {
                let fd1 = (p.value(r + h).unwrap() - p.value(r - h).unwrap()) / (2.0 * h);
                let fd2 = (p.prime(r + h).unwrap() - p.prime(r - h).unwrap()) / (2.0 * h);
                // third derivative of W is bounded by ~ 2r/(1-r²)² ≤ 500 on |r| ≤ 0.9
                assert!((fd1 - p.prime(r).unwrap()).abs() < 100.0 * h * h, "r={r} h={h}");
                assert!((fd2 - p.second(r).unwrap()).abs() < 2000.0 * h * h, "r={r} h={h}");
            }
        }
    }

    #[test]
    fn regularization_properties() {
        let theta = 1.3;
        let base = PotentialSpec::logarithmic(theta, 2.0).unwrap();
        for kappa in [0.3, 0.1, 1e-2, 1e-3, 1e-5] {
            let reg = base.into_regularized(kappa).unwrap();
            for i in 0..=4000 {
                let r = -1.0 + i as f64 * 5e-4;
                if r.abs() <= 1.0 - kappa {
                    assert_eq!(reg.convex_prime(r).unwrap(), base.convex_prime(r).unwrap());
                }
                // F_κ ≤ F on [-1, 1]
                assert!(reg.convex_value(r).unwrap() <= base.convex_value(r).unwrap() + 1e-14);
            }
            for i in 0..=400 {
                let r = -4.0 + 0.02 * i as f64;
                assert!(reg.convex_second(r).unwrap() >= theta);
                // bounded below by the minimum of F (attained at 0)
                assert!(reg.convex_value(r).unwrap() >= -1e-14);
            }
        }
    }

    #[test]
    fn regularized_value_is_antiderivative_of_prime() {
        let reg = PotentialSpec::regularized(1.0, 2.0, 0.05).unwrap();
        for r in [-2.0, -1.2, -0.97, 0.96, 1.0, 1.7] {
            let h = 1e-5;
            let fd = (reg.value(r + h).unwrap() - reg.value(r - h).unwrap()) / (2.0 * h);
            assert!((fd - reg.prime(r).unwrap()).abs() < 1e-6, "r={r}");
        }
    }
}
