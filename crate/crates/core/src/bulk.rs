//! Bulk domain: the unit disk on a cell-centered polar grid.
//!
//! Both directions use second-order finite volumes; the angular stencil is
//! diagonalized with the FFT of the boundary circle, so each step reduces to
//! one radial tridiagonal solve per angular mode. Cell `i` covers
//! `[iΔr, (i+1)Δr]` with center `r_i = (i + ½)Δr`, so no unknown sits at the
//! pole. Values are stored ring-major: `values[i * ntheta + j]`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::surface::{SurfaceField, SurfaceGrid, SurfaceKind};

pub const MIN_RADIAL_CELLS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DiskGrid {
    nr: usize,
    ntheta: usize,
    dr: f64,
    radii: Vec<f64>,
    /// Eigenvalues `4 sin²(mΔθ/2)/Δθ²` of the periodic angular stencil, in
    /// the FFT ordering of the boundary grid.
    angular: Vec<f64>,
    boundary: Arc<SurfaceGrid>,
}

impl DiskGrid {
    /// Disk grid whose outermost ring matches the nodes of `boundary`, which
    /// must be a circle.
    pub fn new(nr: usize, boundary: Arc<SurfaceGrid>) -> Result<Arc<Self>> {
        let ntheta = match boundary.kind() {
            SurfaceKind::Circle { n } => n,
            SurfaceKind::Torus { .. } => {
                return Err(Error::Domain(
                    "the bulk disk requires a circle as its boundary grid".into(),
                ))
            }
        };
        if nr < MIN_RADIAL_CELLS {
            return Err(Error::Domain(format!(
                "radial cell count must be >= {MIN_RADIAL_CELLS}, got {nr}"
            )));
        }
        let dr = 1.0 / nr as f64;
        let radii = (0..nr).map(|i| (i as f64 + 0.5) * dr).collect();
        let dth = 2.0 * PI / ntheta as f64;
        let angular = boundary
            .k2()
            .iter()
            .map(|&m2| (2.0 * (0.5 * m2.sqrt() * dth).sin() / dth).powi(2))
            .collect();
        Ok(Arc::new(Self {
            nr,
            ntheta,
            dr,
            radii,
            angular,
            boundary,
        }))
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn ntheta(&self) -> usize {
        self.ntheta
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.ntheta as f64
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn boundary(&self) -> &Arc<SurfaceGrid> {
        &self.boundary
    }

    pub fn len(&self) -> usize {
        self.nr * self.ntheta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// |Ω| = π
    pub fn total_measure(&self) -> f64 {
        PI
    }

    /// `(r, θ)` of a cell center.
    pub fn cell_center(&self, index: usize) -> (f64, f64) {
        let i = index / self.ntheta;
        let j = index % self.ntheta;
        (self.radii[i], j as f64 * self.dtheta())
    }

    fn ring<'a>(&self, values: &'a [f64], i: usize) -> &'a [f64] {
        &values[i * self.ntheta..(i + 1) * self.ntheta]
    }
}

/// Cell-centered scalar field on a [`DiskGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BulkField {
    grid: Arc<DiskGrid>,
    values: Vec<f64>,
}

impl BulkField {
    pub fn new(grid: Arc<DiskGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "bulk field has {} values but grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bulk field"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<DiskGrid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    /// Sample `f(r, θ)` at cell centers.
    pub fn from_fn(grid: Arc<DiskGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (r, t) = grid.cell_center(k);
                f(r, t)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<DiskGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Midpoint quadrature `Σ f(r_i, θ_j) r_i Δr Δθ`.
pub fn bulk_integral(f: &BulkField) -> f64 {
    let g = &f.grid;
    let mut total = 0.0;
    for (i, &r) in g.radii.iter().enumerate() {
        total += r * g.ring(&f.values, i).iter().sum::<f64>();
    }
    total * g.dr * g.dtheta()
}

pub fn bulk_mean(f: &BulkField) -> f64 {
    bulk_integral(f) / f.grid.total_measure()
}

/// `∫_Ω f²`.
pub fn bulk_l2_sq(f: &BulkField) -> f64 {
    let g = &f.grid;
    let mut total = 0.0;
    for (i, &r) in g.radii.iter().enumerate() {
        total += r * g.ring(&f.values, i).iter().map(|v| v * v).sum::<f64>();
    }
    total * g.dr * g.dtheta()
}

/// Boundary values by linear extrapolation from the two outermost cells,
/// `u(1) ≈ (3 u_{N-1} - u_{N-2}) / 2`.
pub fn trace_boundary(f: &BulkField) -> SurfaceField {
    let g = &f.grid;
    let outer = g.ring(&f.values, g.nr - 1);
    let inner = g.ring(&f.values, g.nr - 2);
    let values = outer
        .iter()
        .zip(inner)
        .map(|(&a, &b)| 1.5 * a - 0.5 * b)
        .collect();
    SurfaceField::from_values_unchecked(g.boundary.clone(), values)
}

/// `∫_Ω |∇f|²`, consistent with the finite-volume diffusion operator.
///
/// Radial differences live on interior faces and angular differences use the
/// same periodic stencil as [`diffusion_step`]; the outer half cell adds the
/// one-sided difference to the boundary trace.
pub fn bulk_grad_norm_sq(f: &BulkField) -> f64 {
    let g = &f.grid;
    let (nr, dr) = (g.nr, g.dr);
    let mut radial = 0.0;
    for i in 0..nr - 1 {
        let a = g.ring(&f.values, i);
        let b = g.ring(&f.values, i + 1);
        radial += (i + 1) as f64 * a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum::<f64>();
    }
    let trace = trace_boundary(f);
    let outer = g.ring(&f.values, nr - 1);
    radial += 2.0 / dr
        * trace
            .values()
            .iter()
            .zip(outer)
            .map(|(t, u)| (t - u).powi(2))
            .sum::<f64>();
    radial *= g.dtheta();

    let circle = &g.boundary;
    let mut angular = 0.0;
    for i in 0..nr {
        let s = circle.forward(g.ring(&f.values, i));
        let ksum: f64 = s
            .iter()
            .zip(&g.angular)
            .map(|(c, &k2)| k2 * c.norm_sqr())
            .sum();
        angular += dr / g.radii[i] * 2.0 * PI * ksum;
    }
    radial + angular
}

/// One backward-Euler step of `∂ₜu = DΔu` with `D∂ₙu = -q` on the circle.
///
/// The boundary flux enters the outermost cell balance, so
/// `∫u' = ∫u - dt ∫_Γ q` holds to roundoff.
pub fn diffusion_step(
    u: &BulkField,
    diffusivity: f64,
    dt: f64,
    q: &SurfaceField,
) -> Result<BulkField> {
    diffusion_step_with_source(u, diffusivity, dt, q, None)
}

/// [`diffusion_step`] with an optional volumetric source rate `s` added as
/// `dt · s` (used for manufactured-solution checks).
pub fn diffusion_step_with_source(
    u: &BulkField,
    diffusivity: f64,
    dt: f64,
    q: &SurfaceField,
    source: Option<&BulkField>,
) -> Result<BulkField> {
    if !(dt > 0.0 && diffusivity > 0.0) {
        return Err(Error::Precondition(format!(
            "diffusion step needs dt > 0 and D > 0 (dt = {dt}, D = {diffusivity})"
        )));
    }
    let g = &u.grid;
    if **q.grid() != *g.boundary {
        return Err(Error::Precondition(
            "flux field is not defined on the disk's boundary circle".into(),
        ));
    }
    let (nr, nt, dr) = (g.nr, g.ntheta, g.dr);
    let circle = &g.boundary;

    let mut modes: Vec<Vec<Complex64>> = (0..nr).map(|i| circle.forward(g.ring(&u.values, i))).collect();
    let src_modes: Option<Vec<Vec<Complex64>>> =
        source.map(|s| (0..nr).map(|i| circle.forward(g.ring(&s.values, i))).collect());
    let q_hat = circle.forward(q.values());

    let volume: Vec<f64> = g.radii.iter().map(|r| r * dr).collect();
    // transmissibility of face i+½
    let face: Vec<f64> = (0..nr - 1)
        .map(|i| dt * diffusivity * (i + 1) as f64)
        .collect();

    let mut lower = vec![0.0; nr];
    let mut diag = vec![0.0; nr];
    let mut upper = vec![0.0; nr];
    let mut rhs = vec![Complex64::new(0.0, 0.0); nr];
    for (k, &m2) in g.angular.iter().enumerate() {
        for i in 0..nr {
            let west = if i > 0 { face[i - 1] } else { 0.0 };
            let east = if i + 1 < nr { face[i] } else { 0.0 };
            lower[i] = -west;
            upper[i] = -east;
            diag[i] = volume[i] + west + east + dt * diffusivity * m2 * dr / g.radii[i];
            rhs[i] = modes[i][k] * volume[i];
            if let Some(s) = &src_modes {
                rhs[i] += s[i][k] * (dt * volume[i]);
            }
        }
        rhs[nr - 1] -= q_hat[k] * dt;
        let sol = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
        for i in 0..nr {
            modes[i][k] = sol[i];
        }
    }

    let mut values = Vec::with_capacity(nr * nt);
    for m in &modes {
        values.extend(circle.inverse(m));
    }
    Ok(BulkField {
        grid: g.clone(),
        values,
    })
}

/// Thomas algorithm for a real tridiagonal matrix and complex right-hand side.
fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![Complex64::new(0.0, 0.0); n];
    let mut pivot = diag[0];
    if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
        return Err(Error::Solver(format!("zero pivot in row 0 ({pivot})")));
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
            return Err(Error::Solver(format!("zero pivot in row {i} ({pivot})")));
        }
        c[i] = upper[i] / pivot;
        d[i] = (rhs[i] - d[i - 1] * lower[i]) / pivot;
    }
    for i in (0..n - 1).rev() {
        let next = d[i + 1];
        d[i] -= next * c[i];
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::surface_integral;

    fn disk(nr: usize, nt: usize) -> Arc<DiskGrid> {
        DiskGrid::new(nr, SurfaceGrid::circle(nt).unwrap()).unwrap()
    }

    #[test]
    fn integrals() {
        let g = disk(32, 32);
        assert!((bulk_integral(&BulkField::constant(g.clone(), 1.0)) - PI).abs() <= 1e-10 * PI);
        let x = BulkField::from_fn(g.clone(), |r, t| r * t.cos());
        assert!(bulk_integral(&x).abs() < 1e-10);
        // midpoint rule on r³: error ∝ Δr²
        let r2 = BulkField::from_fn(g, |r, _| r * r);
        assert!((bulk_integral(&r2) - PI / 2.0).abs() < 2.0 * PI * (1.0 / 32.0f64).powi(2));
        assert!((bulk_mean(&r2) - 0.5).abs() < 2e-3);
    }

    #[test]
    fn trace_examples() {
        let g = disk(64, 32);
        let c = trace_boundary(&BulkField::constant(g.clone(), 2.5));
        assert!(c.values().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        let dr2 = (1.0 / 64.0f64).powi(2);
        let t = trace_boundary(&BulkField::from_fn(g.clone(), |r, _| r * r));
        assert!(t.values().iter().all(|&v| (v - 1.0).abs() <= dr2));
        let t = trace_boundary(&BulkField::from_fn(g.clone(), |r, th| r * th.cos()));
        for (j, &v) in t.values().iter().enumerate() {
            let th = j as f64 * g.dtheta();
            assert!((v - th.cos()).abs() <= dr2);
        }
    }

    #[test]
    fn gradient_norm_examples() {
        let g = disk(128, 128);
        assert_eq!(bulk_grad_norm_sq(&BulkField::constant(g.clone(), 3.0)), 0.0);
        let x = bulk_grad_norm_sq(&BulkField::from_fn(g.clone(), |r, t| r * t.cos()));
        assert!((x - PI).abs() < 1e-3, "{x}");
        let r2 = bulk_grad_norm_sq(&BulkField::from_fn(g, |r, _| r * r));
        assert!((r2 - 2.0 * PI).abs() < 2e-3, "{r2}");
        // second order in Δr
        let err = |nr: usize| {
            let g = disk(nr, 16);
            (bulk_grad_norm_sq(&BulkField::from_fn(g, |r, _| r * r)) - 2.0 * PI).abs()
        };
        let ratio = err(32) / err(64);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn constants_are_steady_without_flux() {
        let g = disk(16, 16);
        let u = BulkField::constant(g.clone(), 0.7);
        let q = SurfaceField::constant(g.boundary().clone(), 0.0);
        let next = diffusion_step(&u, 2.0, 0.1, &q).unwrap();
        assert!(next.values().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn discrete_conservation_with_flux() {
        let g = disk(24, 32);
        let u = BulkField::from_fn(g.clone(), |r, t| 1.0 + r * r * (3.0 * t).sin() + 0.2 * r.powi(4));
        let q = SurfaceField::from_fn(g.boundary().clone(), |t, _| 0.3 + (2.0 * t).cos() + 0.1 * t.sin());
        for (d, dt) in [(1.0, 0.01), (100.0, 0.5), (1e-3, 1e-4)] {
            let next = diffusion_step(&u, d, dt, &q).unwrap();
            let before = bulk_integral(&u);
            let balance = bulk_integral(&next) - before + dt * surface_integral(&q);
            assert!(balance.abs() <= 1e-12 * before.abs(), "D={d} dt={dt}: {balance:e}");
        }
    }

    #[test]
    fn maximum_principle_and_gradient_decay() {
        let g = disk(16, 32);
        let mut u = BulkField::from_fn(g.clone(), |r, t| if (r * t.cos()) > 0.2 { 1.0 } else { -0.5 });
        let q = SurfaceField::constant(g.boundary().clone(), 0.0);
        let mut grad = bulk_grad_norm_sq(&u);
        for _ in 0..50 {
            u = diffusion_step(&u, 0.5, 0.01, &q).unwrap();
            assert!(u.values().iter().all(|&v| (-0.5 - 1e-10..=1.0 + 1e-10).contains(&v)));
            let g2 = bulk_grad_norm_sq(&u);
            assert!(g2 <= grad * (1.0 + 1e-12));
            grad = g2;
        }
    }

    #[test]
    fn rejects_invalid_input() {
        let g = disk(8, 16);
        let u = BulkField::constant(g.clone(), 0.0);
        let q = SurfaceField::constant(g.boundary().clone(), 0.0);
        assert!(diffusion_step(&u, 1.0, 0.0, &q).is_err());
        let other = SurfaceField::constant(SurfaceGrid::circle(32).unwrap(), 0.0);
        assert!(diffusion_step(&u, 1.0, 0.1, &other).is_err());
        assert!(DiskGrid::new(2, SurfaceGrid::circle(16).unwrap()).is_err());
        assert!(DiskGrid::new(8, SurfaceGrid::torus(8, 8, 1.0, 1.0).unwrap()).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn random_data_respects_bounds_and_decay(
            vals in proptest::collection::vec(-1.0f64..2.0, 8 * 16),
            d in 0.01f64..50.0,
            dt in 1e-4f64..1.0,
        ) {
            let g = disk(8, 16);
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let mut u = BulkField::new(g.clone(), vals).unwrap();
            let q = SurfaceField::constant(g.boundary().clone(), 0.0);
            let mut grad = bulk_grad_norm_sq(&u);
            for _ in 0..5 {
                u = diffusion_step(&u, d, dt, &q).unwrap();
                proptest::prop_assert!(u.values().iter().all(|&v| v >= lo - 1e-10 && v <= hi + 1e-10));
                let g2 = bulk_grad_norm_sq(&u);
                proptest::prop_assert!(g2 <= grad * (1.0 + 1e-12) + 1e-14);
                grad = g2;
            }
        }
    }
}
