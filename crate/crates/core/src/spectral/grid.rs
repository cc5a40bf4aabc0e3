//! Tensor quadrature grid and the spectral/physical transforms.
//!
//! Nodes are midpoints `x_i = (i + 1/2) Lx / Qx`, so the rule integrates
//! `cos(j pi x / Lx)` exactly for `0 <= j <= 2 Qx - 1`. Every integrand the
//! crate quadrates (triple advection products, analysis pairs, quartic
//! norms) reduces to cosine series of bounded frequency by the parity of the
//! sine/cosine basis factors, so with the default `Q = 2N + 1` all grid
//! integrals are exact up to rounding and no aliasing is possible.

use super::{DomainSpec, VelocityField};
use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Velocity components sampled on the quadrature grid, row-major in `x`.
#[derive(Debug, Clone)]
pub struct GridField {
    pub qx: usize,
    pub qy: usize,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

/// All four partial derivatives of a velocity field on the grid.
#[derive(Debug, Clone)]
pub struct GradGrid {
    pub d1u1: Vec<f64>,
    pub d2u1: Vec<f64>,
    pub d1u2: Vec<f64>,
    pub d2u2: Vec<f64>,
}

/// Precomputed trigonometric tables for one domain and grid size.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub d: DomainSpec,
    pub qx: usize,
    pub qy: usize,
    /// Cell weight `Lx Ly / (Qx Qy)` of the midpoint rule.
    pub wcell: f64,
    sin_x: Vec<f64>,
    cos_x: Vec<f64>,
    sin_y: Vec<f64>,
    cos_y: Vec<f64>,
    /// Wavenumbers `k pi / Lx`.
    pub ax: Vec<f64>,
    /// Wavenumbers `m pi / Ly`.
    pub by: Vec<f64>,
    /// L^2 normalisation of each basis field, `2 / sqrt(lambda Lx Ly)`.
    pub anorm: Vec<f64>,
}

impl Quadrature {
    /// Grid sized for exact quartic integrands (`Q = 2N + 1` per direction).
    pub fn default_for(d: &DomainSpec) -> Self {
        Self::new(d, 2 * d.nx + 1, 2 * d.ny + 1).expect("default grid is always admissible")
    }

    pub fn new(d: &DomainSpec, qx: usize, qy: usize) -> Result<Self> {
        let floor_x = (3 * d.nx).div_ceil(2) + 1;
        let floor_y = (3 * d.ny).div_ceil(2) + 1;
        if qx < floor_x || qy < floor_y {
            return Err(Error::InvalidConfig(format!(
                "quadrature {qx}x{qy} below dealiasing floor {floor_x}x{floor_y}"
            )));
        }
        let mut sin_x = vec![0.0; d.nx * qx];
        let mut cos_x = vec![0.0; d.nx * qx];
        for k in 1..=d.nx {
            for i in 0..qx {
                let t = k as f64 * PI * (i as f64 + 0.5) / qx as f64;
                sin_x[(k - 1) * qx + i] = t.sin();
                cos_x[(k - 1) * qx + i] = t.cos();
            }
        }
        let mut sin_y = vec![0.0; d.ny * qy];
        let mut cos_y = vec![0.0; d.ny * qy];
        for m in 1..=d.ny {
            for j in 0..qy {
                let t = m as f64 * PI * (j as f64 + 0.5) / qy as f64;
                sin_y[(m - 1) * qy + j] = t.sin();
                cos_y[(m - 1) * qy + j] = t.cos();
            }
        }
        let ax = (1..=d.nx).map(|k| k as f64 * PI / d.lx).collect();
        let by = (1..=d.ny).map(|m| m as f64 * PI / d.ly).collect();
        let anorm = d
            .modes()
            .map(|md| 2.0 / (d.lambda(md.k, md.m) * d.lx * d.ly).sqrt())
            .collect();
        Ok(Self {
            d: *d,
            qx,
            qy,
            wcell: d.lx * d.ly / (qx * qy) as f64,
            sin_x,
            cos_x,
            sin_y,
            cos_y,
            ax,
            by,
            anorm,
        })
    }

    fn xtable(&self, sin: bool) -> &[f64] {
        if sin {
            &self.sin_x
        } else {
            &self.cos_x
        }
    }

    fn ytable(&self, sin: bool) -> &[f64] {
        if sin {
            &self.sin_y
        } else {
            &self.cos_y
        }
    }

    /// Separable synthesis of `sum_{k,m} coef[k,m] X_k(x) Y_m(y)` onto the grid.
    fn synth(&self, coef: &[f64], x_sin: bool, y_sin: bool, out: &mut [f64]) {
        let (nx, ny, qx, qy) = (self.d.nx, self.d.ny, self.qx, self.qy);
        let ytab = self.ytable(y_sin);
        // stage 1: contract the y index
        let mut t = vec![0.0; nx * qy];
        for k in 0..nx {
            let row = &coef[k * ny..(k + 1) * ny];
            let trow = &mut t[k * qy..(k + 1) * qy];
            for (m, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let ytab_m = &ytab[m * qy..(m + 1) * qy];
                for (tj, yj) in trow.iter_mut().zip(ytab_m) {
                    *tj += c * yj;
                }
            }
        }
        // stage 2: contract the k index
        let xtab = self.xtable(x_sin);
        out.fill(0.0);
        for k in 0..nx {
            let trow = &t[k * qy..(k + 1) * qy];
            let xtab_k = &xtab[k * qx..(k + 1) * qx];
            for (i, &xv) in xtab_k.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let orow = &mut out[i * qy..(i + 1) * qy];
                for (oj, tj) in orow.iter_mut().zip(trow) {
                    *oj += xv * tj;
                }
            }
        }
    }

    /// Separable analysis: `coef[k,m] = wcell * sum_{i,j} grid[i,j] X_k(x_i) Y_m(y_j)`.
    fn analyze(&self, grid: &[f64], x_sin: bool, y_sin: bool) -> Vec<f64> {
        let (nx, ny, qx, qy) = (self.d.nx, self.d.ny, self.qx, self.qy);
        let xtab = self.xtable(x_sin);
        let mut r = vec![0.0; nx * qy];
        for k in 0..nx {
            let xtab_k = &xtab[k * qx..(k + 1) * qx];
            let rrow = &mut r[k * qy..(k + 1) * qy];
            for (i, &xv) in xtab_k.iter().enumerate() {
                let grow = &grid[i * qy..(i + 1) * qy];
                for (rj, gj) in rrow.iter_mut().zip(grow) {
                    *rj += xv * gj;
                }
            }
        }
        let ytab = self.ytable(y_sin);
        let mut coef = vec![0.0; nx * ny];
        for k in 0..nx {
            let rrow = &r[k * qy..(k + 1) * qy];
            for m in 0..ny {
                let ytab_m = &ytab[m * qy..(m + 1) * qy];
                let s: f64 = rrow.iter().zip(ytab_m).map(|(a, b)| a * b).sum();
                coef[k * ny + m] = s * self.wcell;
            }
        }
        coef
    }

    /// Midpoint-rule integral of scalar grid samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.qx * self.qy);
        values.iter().sum::<f64>() * self.wcell
    }

    /// Physical coordinates of node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) * self.d.lx / self.qx as f64,
            (j as f64 + 0.5) * self.d.ly / self.qy as f64,
        )
    }
}

/// Velocity samples of the spectral field on the quadrature grid.
pub fn to_grid(u: &VelocityField, q: &Quadrature) -> Result<GridField> {
    u.check_domain(&q.d)?;
    let (nx, ny) = (q.d.nx, q.d.ny);
    let mut c1 = vec![0.0; nx * ny];
    let mut c2 = vec![0.0; nx * ny];
    for k in 0..nx {
        for m in 0..ny {
            let idx = k * ny + m;
            let ca = u.coeffs[idx] * q.anorm[idx];
            // stream-function curl: u = (d psi / dy, -d psi / dx)
            c1[idx] = ca * q.by[m];
            c2[idx] = -ca * q.ax[k];
        }
    }
    let mut u1 = vec![0.0; q.qx * q.qy];
    let mut u2 = vec![0.0; q.qx * q.qy];
    q.synth(&c1, true, false, &mut u1);
    q.synth(&c2, false, true, &mut u2);
    Ok(GridField {
        qx: q.qx,
        qy: q.qy,
        u1,
        u2,
    })
}

/// All four velocity gradients on the grid.
pub fn grad_grid(u: &VelocityField, q: &Quadrature) -> Result<GradGrid> {
    u.check_domain(&q.d)?;
    let (nx, ny) = (q.d.nx, q.d.ny);
    let n = nx * ny;
    let (mut c11, mut c21, mut c12, mut c22) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..nx {
        for m in 0..ny {
            let idx = k * ny + m;
            let ca = u.coeffs[idx] * q.anorm[idx];
            let (a, b) = (q.ax[k], q.by[m]);
            c11[idx] = ca * b * a; // d/dx of u1: cos cos
            c21[idx] = -ca * b * b; // d/dy of u1: sin sin
            c12[idx] = ca * a * a; // d/dx of u2: sin sin
            c22[idx] = -ca * a * b; // d/dy of u2: cos cos
        }
    }
    let sz = q.qx * q.qy;
    let (mut d1u1, mut d2u1, mut d1u2, mut d2u2) =
        (vec![0.0; sz], vec![0.0; sz], vec![0.0; sz], vec![0.0; sz]);
    q.synth(&c11, false, false, &mut d1u1);
    q.synth(&c21, true, true, &mut d2u1);
    q.synth(&c12, true, true, &mut d1u2);
    q.synth(&c22, false, false, &mut d2u2);
    Ok(GradGrid {
        d1u1,
        d2u1,
        d1u2,
        d2u2,
    })
}

/// Projects grid velocity samples back onto the spectral basis. Exact (up to
/// rounding) whenever the samples come from a retained-mode field, because
/// the pair products stay below the quadrature's exact frequency band.
pub fn from_grid(g: &GridField, q: &Quadrature) -> Result<VelocityField> {
    if g.qx != q.qx || g.qy != q.qy {
        return Err(Error::InvalidConfig(format!(
            "grid {}x{} does not match quadrature {}x{}",
            g.qx, g.qy, q.qx, q.qy
        )));
    }
    let s1 = q.analyze(&g.u1, true, false);
    let s2 = q.analyze(&g.u2, false, true);
    let (nx, ny) = (q.d.nx, q.d.ny);
    let mut coeffs = vec![0.0; nx * ny];
    for k in 0..nx {
        for m in 0..ny {
            let idx = k * ny + m;
            coeffs[idx] = q.anorm[idx] * (q.by[m] * s1[idx] - q.ax[k] * s2[idx]);
        }
    }
    Ok(VelocityField {
        nx,
        ny,
        coeffs,
    })
}

/// Pointwise advection `(u . grad) v` from grid samples.
pub fn advect(u: &GridField, gv: &GradGrid) -> (Vec<f64>, Vec<f64>) {
    let n = u.u1.len();
    let mut p1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    for i in 0..n {
        p1[i] = u.u1[i] * gv.d1u1[i] + u.u2[i] * gv.d2u1[i];
        p2[i] = u.u1[i] * gv.d1u2[i] + u.u2[i] * gv.d2u2[i];
    }
    (p1, p2)
}
