//! Fourier discretization of the closed surface: the unit circle or a flat
//! periodic torus.
//!
//! Fourier modes are the Laplace-Beltrami eigenfunctions on both geometries, so
//! the spectral truncation is a Galerkin scheme in the eigenbasis. Fields are
//! stored at uniformly spaced nodes, row-major (`iy * nx + ix`); the circle is
//! the special case `ny = 1`, `Lx = 2π`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Geometry of a discretized closed surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    /// Unit circle with `n` nodes.
    Circle { n: usize },
    /// Flat torus `[0, lx) × [0, ly)` with `nx × ny` nodes.
    Torus { nx: usize, ny: usize, lx: f64, ly: f64 },
}

pub const MIN_NODES: usize = 8;

/// Spectral grid on a closed surface. Owns its FFT plans; immutable and
/// shareable between threads.
pub struct SurfaceGrid {
    kind: SurfaceKind,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    total_measure: f64,
    k2: Vec<f64>,
    dealias_mask: Vec<bool>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl fmt::Debug for SurfaceGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SurfaceGrid")
            .field("kind", &self.kind)
            .field("total_measure", &self.total_measure)
            .finish()
    }
}

impl PartialEq for SurfaceGrid {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

fn check_count(name: &str, n: usize) -> Result<()> {
    if n < MIN_NODES || n % 2 != 0 {
        return Err(Error::Domain(format!(
            "{name} must be an even node count >= {MIN_NODES}, got {n}"
        )));
    }
    Ok(())
}

fn signed_mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl SurfaceGrid {
    pub fn circle(n: usize) -> Result<Arc<Self>> {
        check_count("circle node count", n)?;
        Ok(Arc::new(Self::build(SurfaceKind::Circle { n }, n, 1, 2.0 * PI, 1.0)))
    }

    pub fn torus(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Arc<Self>> {
        check_count("torus nx", nx)?;
        check_count("torus ny", ny)?;
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Domain(format!(
                "torus side lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Arc::new(Self::build(
            SurfaceKind::Torus { nx, ny, lx, ly },
            nx,
            ny,
            lx,
            ly,
        )))
    }

    pub fn from_kind(kind: SurfaceKind) -> Result<Arc<Self>> {
        match kind {
            SurfaceKind::Circle { n } => Self::circle(n),
            SurfaceKind::Torus { nx, ny, lx, ly } => Self::torus(nx, ny, lx, ly),
        }
    }

    fn build(kind: SurfaceKind, nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fft_x = planner.plan_fft_forward(nx);
        let ifft_x = planner.plan_fft_inverse(nx);
        let fft_y = (ny > 1).then(|| (planner.plan_fft_forward(ny), planner.plan_fft_inverse(ny)));
        let total_measure = match kind {
            SurfaceKind::Circle { .. } => 2.0 * PI,
            SurfaceKind::Torus { .. } => lx * ly,
        };
        let mut k2 = vec![0.0; nx * ny];
        let mut dealias_mask = vec![true; nx * ny];
        for iy in 0..ny {
            let my = signed_mode(iy, ny);
            let ky = 2.0 * PI * my as f64 / ly;
            for ix in 0..nx {
                let mx = signed_mode(ix, nx);
                let kx = 2.0 * PI * mx as f64 / lx;
                k2[iy * nx + ix] = kx * kx + ky * ky;
                let keep_x = 3 * mx.unsigned_abs() as usize <= nx;
                let keep_y = ny == 1 || 3 * my.unsigned_abs() as usize <= ny;
                dealias_mask[iy * nx + ix] = keep_x && keep_y;
            }
        }
        Self {
            kind,
            nx,
            ny,
            lx,
            ly,
            total_measure,
            k2,
            dealias_mask,
            fft_x,
            ifft_x,
            fft_y,
        }
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// |Γ|
    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    /// Quadrature weight of a single node.
    pub fn cell_measure(&self) -> f64 {
        self.total_measure / self.len() as f64
    }

    /// `|k|²` for every Fourier coefficient, in storage order.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// Node coordinates `(x, y)`; for the circle `x` is the angle and `y = 0`.
    pub fn node(&self, index: usize) -> (f64, f64) {
        let ix = index % self.nx;
        let iy = index / self.nx;
        (
            self.lx * ix as f64 / self.nx as f64,
            if self.ny == 1 { 0.0 } else { self.ly * iy as f64 / self.ny as f64 },
        )
    }

    /// Normalized forward transform: `f = Σ f̂_k e^{ik·x}`.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.len());
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    /// Inverse of [`forward`](Self::forward); returns the real part.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.len());
        let mut buf = spectrum.to_vec();
        self.transform(&mut buf, false);
        buf.iter().map(|c| c.re).collect()
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let (fx, fy) = if forward {
            (&self.fft_x, self.fft_y.as_ref().map(|p| &p.0))
        } else {
            (&self.ifft_x, self.fft_y.as_ref().map(|p| &p.1))
        };
        fx.process(buf);
        if let Some(fy) = fy {
            let (nx, ny) = (self.nx, self.ny);
            let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
            for iy in 0..ny {
                for ix in 0..nx {
                    t[ix * ny + iy] = buf[iy * nx + ix];
                }
            }
            fy.process(&mut t);
            for ix in 0..nx {
                for iy in 0..ny {
                    buf[iy * nx + ix] = t[ix * ny + iy];
                }
            }
        }
    }

    /// Zero the modes removed by the 2/3 rule.
    pub fn dealias(&self, spectrum: &mut [Complex64]) {
        for (c, &keep) in spectrum.iter_mut().zip(&self.dealias_mask) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// `Δ_Γ f` on raw nodal values.
    pub fn laplacian(&self, values: &[f64]) -> Vec<f64> {
        let mut s = self.forward(values);
        for (c, &k2) in s.iter_mut().zip(&self.k2) {
            *c *= -k2;
        }
        self.inverse(&s)
    }

    pub fn integral(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_measure()
    }

    pub fn mean(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        (values.iter().map(|v| v * v).sum::<f64>() * self.cell_measure()).sqrt()
    }

    /// `∫ f g dS`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.cell_measure()
    }

    /// `‖∇_Γ f‖²` as the spectral sum `|Γ| Σ |k|² |f̂_k|²`.
    pub fn h1_seminorm_sq(&self, values: &[f64]) -> f64 {
        let s = self.forward(values);
        self.total_measure
            * s.iter()
                .zip(&self.k2)
                .map(|(c, &k2)| k2 * c.norm_sqr())
                .sum::<f64>()
    }

    fn check_mean_zero(&self, values: &[f64]) -> Result<()> {
        let mean = self.mean(values);
        let scale = self.l2_norm(values);
        if mean.abs() > 1e-10 * scale {
            return Err(Error::Precondition(format!(
                "field must have zero mean (mean = {mean:.3e}, norm = {scale:.3e})"
            )));
        }
        Ok(())
    }

    /// `‖f‖_{(H¹)'} = ‖∇_Γ (-Δ_Γ)⁻¹ f‖` for mean-zero `f`.
    pub fn hminus1_norm(&self, values: &[f64]) -> Result<f64> {
        self.check_mean_zero(values)?;
        Ok(self.hminus1_norm_of_fluctuation(values))
    }

    /// `(H¹)'` norm of `f - ⟨f⟩` (never fails).
    pub fn hminus1_norm_of_fluctuation(&self, values: &[f64]) -> f64 {
        let s = self.forward(values);
        (self.total_measure
            * s.iter()
                .zip(&self.k2)
                .filter(|(_, &k2)| k2 > 0.0)
                .map(|(c, &k2)| c.norm_sqr() / k2)
                .sum::<f64>())
        .sqrt()
    }

    /// Mean-zero solution `g` of `Δ_Γ g = f`.
    pub fn inverse_laplacian(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_mean_zero(values)?;
        let mut s = self.forward(values);
        for (c, &k2) in s.iter_mut().zip(&self.k2) {
            *c = if k2 > 0.0 { *c / -k2 } else { Complex64::new(0.0, 0.0) };
        }
        Ok(self.inverse(&s))
    }
}

/// Nodal scalar field on a [`SurfaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceField {
    grid: Arc<SurfaceGrid>,
    values: Vec<f64>,
}

impl SurfaceField {
    pub fn new(grid: Arc<SurfaceGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surface field"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<SurfaceGrid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    /// Sample `f(x, y)` at the grid nodes.
    pub fn from_fn(grid: Arc<SurfaceGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.node(i);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub(crate) fn from_values_unchecked(grid: Arc<SurfaceGrid>, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid);
        Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

fn ensure_finite(f: &SurfaceField) -> Result<()> {
    if f.values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("surface field"))
    }
}

/// `Δ_Γ f` by spectral multiplication with `-|k|²`.
pub fn laplace_beltrami(f: &SurfaceField) -> Result<SurfaceField> {
    ensure_finite(f)?;
    Ok(SurfaceField::from_values_unchecked(
        f.grid.clone(),
        f.grid.laplacian(&f.values),
    ))
}

/// The mean-zero `g` with `Δ_Γ g = f`; `f` must have zero mean.
pub fn inv_laplace_beltrami(f: &SurfaceField) -> Result<SurfaceField> {
    ensure_finite(f)?;
    Ok(SurfaceField::from_values_unchecked(
        f.grid.clone(),
        f.grid.inverse_laplacian(&f.values)?,
    ))
}

pub fn surface_integral(f: &SurfaceField) -> f64 {
    f.grid.integral(&f.values)
}

pub fn mean(f: &SurfaceField) -> f64 {
    f.grid.mean(&f.values)
}

pub fn h1_seminorm_sq(f: &SurfaceField) -> f64 {
    f.grid.h1_seminorm_sq(&f.values)
}

pub fn hminus1_norm(f: &SurfaceField) -> Result<f64> {
    f.grid.hminus1_norm(&f.values)
}

pub fn l2_norm(f: &SurfaceField) -> f64 {
    f.grid.l2_norm(&f.values)
}
