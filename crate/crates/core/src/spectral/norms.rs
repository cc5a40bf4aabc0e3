//! Norms on spectral velocity fields.
//!
//! All Sobolev-scale norms are diagonal coefficient sums; only the L^4 norm
//! (and the norms built on it) needs a pass through the quadrature grid.

use super::grid::{to_grid, Quadrature};
use super::{DomainSpec, VelocityField};
use crate::error::Result;

/// Norm selector. `E { delta }` is the noise-space norm: the maximum of the
/// L^2 and L^4 norms after damping by the fractional Stokes power
/// `lambda^(-delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    H,
    V,
    VDual,
    L4,
    Bracket,
    E { delta: f64 },
}

/// L^2 norm: `sqrt(sum c^2)`.
pub fn h_norm(u: &VelocityField) -> f64 {
    u.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Norm of `A^s u`: `sqrt(sum lambda^(2s) c^2)`.
pub fn frac_norm(d: &DomainSpec, u: &VelocityField, s: f64) -> f64 {
    d.modes()
        .zip(&u.coeffs)
        .map(|(md, c)| d.lambda(md.k, md.m).powf(2.0 * s) * c * c)
        .sum::<f64>()
        .sqrt()
}

/// Energy (H^1) norm `|grad u|`, equal to `|A^(1/2) u|` on this basis.
pub fn v_norm(d: &DomainSpec, u: &VelocityField) -> f64 {
    frac_norm(d, u, 0.5)
}

/// Dual norm `|A^(-1/2) u|`.
pub fn vdual_norm(d: &DomainSpec, u: &VelocityField) -> f64 {
    frac_norm(d, u, -0.5)
}

/// Graph norm `|A u|`.
pub fn a_norm(d: &DomainSpec, u: &VelocityField) -> f64 {
    frac_norm(d, u, 1.0)
}

/// L^4 norm by exact grid quadrature of `(|u|^2)^2`.
pub fn l4_norm(u: &VelocityField, q: &Quadrature) -> Result<f64> {
    let g = to_grid(u, q)?;
    let mut s = 0.0;
    for (a, b) in g.u1.iter().zip(&g.u2) {
        let e = a * a + b * b;
        s += e * e;
    }
    Ok((s * q.wcell).powf(0.25))
}

/// Combined viscous norm: `sqrt(nu |grad u|^2 - (nu lambda_1 / 2) |u|^2)`.
/// Nonnegative because `lambda_1 |u|^2 <= |grad u|^2`; in fact the square is
/// at least `(nu / 2) |grad u|^2`.
pub fn bracket_norm(d: &DomainSpec, u: &VelocityField) -> f64 {
    let h2 = u.dot(u);
    let v2 = v_norm(d, u).powi(2);
    let sq = d.nu * v2 - 0.5 * d.nu * d.lambda_1() * h2;
    sq.max(0.0).sqrt()
}

/// Intersection norm `max(|u|_{L^2}, |u|_{L^4})`.
pub fn x_norm(u: &VelocityField, q: &Quadrature) -> Result<f64> {
    Ok(h_norm(u).max(l4_norm(u, q)?))
}

/// Noise-space norm: intersection norm of `A^(-delta) u`.
pub fn e_norm(d: &DomainSpec, u: &VelocityField, delta: f64, q: &Quadrature) -> Result<f64> {
    let damped = u.map_eigen(d, |l| l.powf(-delta));
    x_norm(&damped, q)
}

/// Uniform entry point used by the CLI and the validators.
pub fn norm(d: &DomainSpec, u: &VelocityField, kind: NormKind) -> Result<f64> {
    u.check_domain(d)?;
    match kind {
        NormKind::H => Ok(h_norm(u)),
        NormKind::V => Ok(v_norm(d, u)),
        NormKind::VDual => Ok(vdual_norm(d, u)),
        NormKind::Bracket => Ok(bracket_norm(d, u)),
        NormKind::L4 => l4_norm(u, &Quadrature::default_for(d)),
        NormKind::E { delta } => e_norm(d, u, delta, &Quadrature::default_for(d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_field(d: &DomainSpec, seed: u64) -> VelocityField {
        let mut f = VelocityField::zeros(d);
        for (j, c) in f.coeffs.iter_mut().enumerate() {
            *c = rng::standard_normal(seed, rng::stream_id(rng::TAG_FIELD, 8, 0), j as u64, 0);
        }
        f
    }

    #[test]
    fn single_mode_norms_closed_form() {
        let d = DomainSpec::unit_square(4, 1.0).unwrap();
        let u = VelocityField::single_mode(&d, 1, 1, 1.0).unwrap();
        assert!((h_norm(&u) - 1.0).abs() < 1e-14);
        // V norm of the lowest mode is sqrt(2 pi^2)
        assert!((v_norm(&d, &u) - d.lambda_1().sqrt()).abs() < 1e-13);
        assert!((vdual_norm(&d, &u) - 1.0 / d.lambda_1().sqrt()).abs() < 1e-14);
        assert!((a_norm(&d, &u) - d.lambda_1()).abs() < 1e-12);
    }

    #[test]
    fn lowest_mode_l4_closed_form() {
        // |u|^4_{L4} = 5/4 for the normalised (1,1) field on the unit square:
        // expand (2 s^2 c'^2 + 2 c^2 s'^2)^2 and use the sine-power integrals
        // int sin^4 = 3/8, int sin^2 cos^2 = 1/8 on [0, 1].
        let d = DomainSpec::unit_square(4, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let u = VelocityField::single_mode(&d, 1, 1, 1.0).unwrap();
        let got = l4_norm(&u, &q).unwrap();
        assert!((got - (5.0_f64 / 4.0).powf(0.25)).abs() < 1e-13, "{got}");
    }

    #[test]
    fn l4_agrees_with_refined_grid() {
        let d = DomainSpec::unit_square(8, 1.0).unwrap();
        let u = random_field(&d, 21);
        let coarse = l4_norm(&u, &Quadrature::default_for(&d)).unwrap();
        let fine = l4_norm(&u, &Quadrature::new(&d, 4 * d.nx + 5, 4 * d.ny + 5).unwrap()).unwrap();
        assert!((coarse - fine).abs() <= 1e-8 * fine.abs());
    }

    #[test]
    fn poincare_inequality_holds() {
        let d = DomainSpec::new(1.2, 0.9, 6, 6, 1.0).unwrap();
        for seed in 0..20 {
            let u = random_field(&d, 100 + seed);
            let h = h_norm(&u);
            let v = v_norm(&d, &u);
            assert!(d.lambda_1() * h * h <= v * v * (1.0 + 1e-12));
            // dual norm is controlled the other way
            assert!(vdual_norm(&d, &u) * d.lambda_1().sqrt() <= h * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bracket_dominates_half_energy_norm() {
        let d = DomainSpec::new(1.0, 1.3, 5, 5, 0.37).unwrap();
        for seed in 0..20 {
            let u = random_field(&d, 300 + seed);
            let br2 = bracket_norm(&d, &u).powi(2);
            let v2 = v_norm(&d, &u).powi(2);
            assert!(br2 >= 0.5 * d.nu * v2 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn bracket_lowest_mode_closed_form() {
        // on the lowest mode: nu lambda_1 - nu lambda_1 / 2 = nu lambda_1 / 2
        let d = DomainSpec::unit_square(4, 0.7).unwrap();
        let u = VelocityField::single_mode(&d, 1, 1, 1.0).unwrap();
        let want = (0.5 * d.nu * d.lambda_1()).sqrt();
        assert!((bracket_norm(&d, &u) - want).abs() < 1e-13);
    }

    #[test]
    fn e_norm_zero_damping_is_intersection_norm() {
        let d = DomainSpec::unit_square(6, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let u = random_field(&d, 77);
        let e0 = e_norm(&d, &u, 0.0, &q).unwrap();
        assert!((e0 - x_norm(&u, &q).unwrap()).abs() < 1e-13);
        // damping strictly reduces the norm for nontrivial fields
        let e1 = e_norm(&d, &u, 0.25, &q).unwrap();
        assert!(e1 < e0);
    }

    #[test]
    fn norm_entry_point_consistent() {
        let d = DomainSpec::unit_square(5, 1.0).unwrap();
        let u = random_field(&d, 9);
        assert_eq!(norm(&d, &u, NormKind::H).unwrap(), h_norm(&u));
        assert_eq!(norm(&d, &u, NormKind::V).unwrap(), v_norm(&d, &u));
    }
}
