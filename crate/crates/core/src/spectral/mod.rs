//! Divergence-free spectral basis on a rectangle.
//!
//! Velocity fields are expanded in the curl of the sine stream functions
//! `psi_{k,m} = sin(k pi x / Lx) sin(m pi y / Ly)`, `k, m >= 1`. Each basis
//! field is divergence free, satisfies the impermeable free-slip wall
//! conditions, and is an eigenfunction of the Stokes operator with
//! eigenvalue `lambda_{k,m} = pi^2 (k^2/Lx^2 + m^2/Ly^2)`. The basis is
//! orthonormal in L^2, so every Sobolev-scale norm used by the experiments
//! is a diagonal coefficient sum.

pub mod grid;
pub mod nonlinear;
pub mod norms;

pub use grid::{GridField, Quadrature};
pub use nonlinear::{
    bilinear_form, check_advection_bounds, estimate_universal_constants, sample_field,
    trilinear_form, UniversalConstants,
};
pub use norms::{norm, NormKind};

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Rectangle, spectral cutoff and viscosity shared by every operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub nu: f64,
}

impl DomainSpec {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize, nu: f64) -> Result<Self> {
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "side lengths must be positive, got {lx} x {ly}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidConfig("cutoff must be at least 1".into()));
        }
        if !(nu > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "viscosity must be positive, got {nu}"
            )));
        }
        Ok(Self { lx, ly, nx, ny, nu })
    }

    /// Unit square with viscosity `nu`, the default experiment domain.
    pub fn unit_square(n: usize, nu: f64) -> Result<Self> {
        Self::new(1.0, 1.0, n, n, nu)
    }

    pub fn n_modes(&self) -> usize {
        self.nx * self.ny
    }

    /// Stokes eigenvalue of mode `(k, m)`.
    pub fn lambda(&self, k: usize, m: usize) -> f64 {
        debug_assert!(k >= 1 && m >= 1);
        PI * PI * ((k * k) as f64 / (self.lx * self.lx) + (m * m) as f64 / (self.ly * self.ly))
    }

    /// Smallest eigenvalue; attained by mode (1, 1).
    pub fn lambda_1(&self) -> f64 {
        self.lambda(1, 1)
    }

    /// Largest retained eigenvalue; attained by mode (nx, ny).
    pub fn lambda_max(&self) -> f64 {
        self.lambda(self.nx, self.ny)
    }

    /// Half the slowest viscous decay rate, `nu * lambda_1 / 2`.
    pub fn beta(&self) -> f64 {
        0.5 * self.nu * self.lambda_1()
    }

    /// Dense storage index of mode `(k, m)`; `k` is the major axis.
    pub fn mode_index(&self, k: usize, m: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.nx && m >= 1 && m <= self.ny);
        (k - 1) * self.ny + (m - 1)
    }

    /// All retained modes in storage order.
    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (1..=self.nx).flat_map(move |k| (1..=self.ny).map(move |m| Mode { k, m }))
    }

    /// Eigenvalues in storage order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes().map(|md| self.lambda(md.k, md.m)).collect()
    }
}

/// Wavenumber pair of a basis field; both components start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mode {
    pub k: usize,
    pub m: usize,
}

/// Spectral velocity field: dense coefficients over the retained modes in
/// the L^2-orthonormal basis, `k`-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub nx: usize,
    pub ny: usize,
    pub coeffs: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(d: &DomainSpec) -> Self {
        Self {
            nx: d.nx,
            ny: d.ny,
            coeffs: vec![0.0; d.n_modes()],
        }
    }

    pub fn from_coeffs(d: &DomainSpec, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != d.n_modes() {
            return Err(Error::InvalidConfig(format!(
                "coefficient vector has length {}, domain retains {} modes",
                coeffs.len(),
                d.n_modes()
            )));
        }
        Ok(Self {
            nx: d.nx,
            ny: d.ny,
            coeffs,
        })
    }

    /// A single basis field scaled by `amp`.
    pub fn single_mode(d: &DomainSpec, k: usize, m: usize, amp: f64) -> Result<Self> {
        if k < 1 || k > d.nx || m < 1 || m > d.ny {
            return Err(Error::InvalidConfig(format!(
                "mode ({k}, {m}) outside retained range {}x{}",
                d.nx, d.ny
            )));
        }
        let mut f = Self::zeros(d);
        f.coeffs[d.mode_index(k, m)] = amp;
        Ok(f)
    }

    pub fn check_domain(&self, d: &DomainSpec) -> Result<()> {
        if self.nx != d.nx || self.ny != d.ny {
            return Err(Error::CutoffMismatch {
                found_nx: self.nx,
                found_ny: self.ny,
                want_nx: d.nx,
                want_ny: d.ny,
            });
        }
        Ok(())
    }

    /// L^2 inner product; the basis is orthonormal so this is the plain dot.
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.coeffs.len(), x.coeffs.len());
        for (c, xc) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *c += a * xc;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Multiplies each coefficient by `f(lambda_{k,m})`.
    pub fn map_eigen(&self, d: &DomainSpec, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for (md, c) in d.modes().zip(out.coeffs.iter_mut()) {
            *c *= f(d.lambda(md.k, md.m));
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |a, c| a.max(c.abs()))
    }
}

/// Stokes operator: multiplies each coefficient by its eigenvalue.
pub fn apply_a(d: &DomainSpec, u: &VelocityField) -> Result<VelocityField> {
    u.check_domain(d)?;
    Ok(u.map_eigen(d, |l| l))
}

/// Fractional power of the damped Stokes operator: coefficients are scaled
/// by `(nu * lambda + alpha)^s`. With `nu = 1`, `alpha = 0` this is the plain
/// fractional Stokes power used by the noise-space norms.
pub fn apply_frac_power(d: &DomainSpec, u: &VelocityField, s: f64, alpha: f64) -> Result<VelocityField> {
    u.check_domain(d)?;
    if alpha < 0.0 {
        return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(u.map_eigen(d, |l| (d.nu * l + alpha).powf(s)))
}
