//! Advection trilinear form, its Galerkin projection, and the empirical
//! interpolation constants used by the energy estimates.
//!
//! `trilinear_form(u, v, w)` is `sum_{i,j} int u_i (d_i v_j) w_j dx`. On the
//! exact quadrature grid the two algebraic identities hold to rounding:
//! the form vanishes when the last two arguments coincide, and it is
//! antisymmetric in them.

use super::grid::{advect, from_grid, grad_grid, to_grid, Quadrature};
use super::norms::{a_norm, h_norm, l4_norm, v_norm, vdual_norm};
use super::{DomainSpec, VelocityField};
use crate::error::Result;
use crate::rng;

/// Empirical constants for the advection bounds. `c` is the interpolation
/// (Ladyzhenskaya) constant in `|u|^2_{L4} <= c |u| |grad u|`; `c1` bounds
/// `|(u . grad) u|_{V'} / |u|^2_{L4}`; `c2` bounds `|(u . grad) u|_{V'} /
/// |grad u|^2`, the quadratic form constant of the same chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniversalConstants {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

/// `sum_{i,j} int u_i (d_i v_j) w_j`, evaluated by exact grid quadrature.
pub fn trilinear_form(
    u: &VelocityField,
    v: &VelocityField,
    w: &VelocityField,
    q: &Quadrature,
) -> Result<f64> {
    let ug = to_grid(u, q)?;
    let gv = grad_grid(v, q)?;
    let wg = to_grid(w, q)?;
    let (p1, p2) = advect(&ug, &gv);
    let mut s = 0.0;
    for i in 0..p1.len() {
        s += p1[i] * wg.u1[i] + p2[i] * wg.u2[i];
    }
    Ok(s * q.wcell)
}

/// Galerkin coefficients of the advection term `(u . grad) v`: component `j`
/// is the trilinear form against basis field `j`. One synthesis, one
/// pointwise product and one analysis; exact for retained-mode inputs.
pub fn bilinear_form(u: &VelocityField, v: &VelocityField, q: &Quadrature) -> Result<VelocityField> {
    let ug = to_grid(u, q)?;
    let gv = grad_grid(v, q)?;
    let (p1, p2) = advect(&ug, &gv);
    from_grid(
        &super::grid::GridField {
            qx: q.qx,
            qy: q.qy,
            u1: p1,
            u2: p2,
        },
        q,
    )
}

/// Largest coefficient gap between the fused advection `((v+z) . grad)(v+z)`
/// and its four-term bilinear expansion; rounding-level on exact grids.
pub fn fused_split_defect(v: &VelocityField, z: &VelocityField, q: &Quadrature) -> Result<f64> {
    let vz = v.add(z);
    let fused = bilinear_form(&vz, &vz, q)?;
    let mut split = bilinear_form(v, v, q)?;
    split.axpy(1.0, &bilinear_form(v, z, q)?);
    split.axpy(1.0, &bilinear_form(z, v, q)?);
    split.axpy(1.0, &bilinear_form(z, z, q)?);
    Ok(fused.sub(&split).max_abs_coeff())
}

/// Fixed catalog of two-mode near-extremisers of the form-bound ratio
/// `|B(u)|_{V'} / |u|^2_{L4}`: a low anchor mode plus a band mode one or
/// three rows inside the cutoff. Gaussian maxima of that ratio drift across
/// seeds; these pairs sit above every observed Gaussian sample, so including
/// them pins the estimated constant.
fn extremiser_catalog(d: &DomainSpec) -> Vec<[usize; 4]> {
    let mut partners: Vec<(usize, usize)> = Vec::new();
    let push = |partners: &mut Vec<(usize, usize)>, k: isize, m: isize| {
        if k >= 1 && m >= 1 && k <= d.nx as isize && m <= d.ny as isize {
            let p = (k as usize, m as usize);
            if !partners.contains(&p) {
                partners.push(p);
            }
        }
    };
    for gap in [1_isize, 3] {
        for low in [1_isize, 3] {
            push(&mut partners, d.nx as isize - gap, low);
            push(&mut partners, low, d.ny as isize - gap);
        }
    }
    let mut out = Vec::new();
    for &(pk, pm) in &partners {
        for (ak, am) in [(1, 2), (2, 1), (1, 1), (2, 2)] {
            if ak <= d.nx && am <= d.ny && (ak, am) != (pk, pm) {
                out.push([ak, am, pk, pm]);
            }
        }
    }
    out
}

/// Random coefficient field used for constant estimation and validation
/// sweeps. Index 0 is the lowest basis mode (the known near-extremiser of
/// the interpolation ratio); the next indices walk the deterministic
/// two-mode catalog; later indices are Gaussian fields cycling through
/// spectral slopes so both rough and smooth fields appear.
pub fn sample_field(d: &DomainSpec, seed: u64, index: u64) -> VelocityField {
    let mut f = VelocityField::zeros(d);
    if index == 0 {
        f.coeffs[0] = 1.0;
        return f;
    }
    let catalog = extremiser_catalog(d);
    if index as usize <= catalog.len() {
        let [ak, am, pk, pm] = catalog[index as usize - 1];
        f.coeffs[d.mode_index(ak, am)] = 1.0;
        f.coeffs[d.mode_index(pk, pm)] = 1.0;
        return f;
    }
    const SLOPES: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
    let gi = index as usize - 1 - catalog.len();
    let p = SLOPES[gi % SLOPES.len()];
    let n = d.n_modes() as u64;
    for (j, (md, c)) in d.modes().zip(f.coeffs.iter_mut()).enumerate() {
        let g = rng::standard_normal(
            seed,
            rng::stream_id(rng::TAG_FIELD, 0, 0),
            index * n + j as u64,
            0,
        );
        *c = g * d.lambda(md.k, md.m).powf(-0.5 * p);
    }
    f
}

/// Estimates the interpolation constants as inflated maxima of the exact
/// ratios over `samples` fields from `sample_field`. The deterministic
/// catalog prefix keeps the maxima stable across seeds; the 10% headroom
/// absorbs sampling error when fresh fields are tested against the returned
/// constants.
pub fn estimate_universal_constants(
    d: &DomainSpec,
    samples: usize,
    seed: u64,
) -> Result<UniversalConstants> {
    let q = Quadrature::default_for(d);
    let (mut rc, mut rc1, mut rc2) = (0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..samples.max(1) {
        let u = sample_field(d, seed, i as u64);
        let h = h_norm(&u);
        let v = v_norm(d, &u);
        let l4 = l4_norm(&u, &q)?;
        if h == 0.0 || v == 0.0 {
            continue;
        }
        rc = rc.max(l4 * l4 / (h * v));
        let bdual = vdual_norm(d, &bilinear_form(&u, &u, &q)?);
        rc1 = rc1.max(bdual / (l4 * l4));
        rc2 = rc2.max(bdual / (v * v));
    }
    Ok(UniversalConstants {
        c: 1.1 * rc,
        c1: 1.1 * rc1,
        c2: 1.1 * rc2,
    })
}

/// Ratios of `|trilinear_form(u, v, w)|` to the four interpolation bounds
/// built from `consts.c`:
///
/// 1. `c |u|^1/2 |grad u|^1/2 |grad v|^1/2 |Av|^1/2 |w|`
/// 2. `c |u|^1/2 |Au|^1/2 |grad v| |w|`
/// 3. `c |u| |grad v| |w|^1/2 |Aw|^1/2`
/// 4. `c |u|^1/2 |grad u|^1/2 |grad v| |w|^1/2 |grad w|^1/2`
///
/// All four stay at or below 1 when `consts.c` is a valid constant.
pub fn check_advection_bounds(
    d: &DomainSpec,
    consts: &UniversalConstants,
    u: &VelocityField,
    v: &VelocityField,
    w: &VelocityField,
    q: &Quadrature,
) -> Result<[f64; 4]> {
    let b = trilinear_form(u, v, w, q)?.abs();
    let (hu, vu, au) = (h_norm(u), v_norm(d, u), a_norm(d, u));
    let (vv, av) = (v_norm(d, v), a_norm(d, v));
    let (hw, vw, aw) = (h_norm(w), v_norm(d, w), a_norm(d, w));
    let c = consts.c;
    let bounds = [
        c * hu.sqrt() * vu.sqrt() * vv.sqrt() * av.sqrt() * hw,
        c * hu.sqrt() * au.sqrt() * vv * hw,
        c * hu * vv * hw.sqrt() * aw.sqrt(),
        c * hu.sqrt() * vu.sqrt() * vv * hw.sqrt() * vw.sqrt(),
    ];
    Ok(bounds.map(|bd| if bd == 0.0 { 0.0 } else { b / bd }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Independent oracle: direct pointwise basis evaluation on a fine
    // midpoint grid, no shared transform code.
    fn naive_uv(d: &DomainSpec, u: &VelocityField, x: f64, y: f64) -> (f64, f64) {
        let mut out = (0.0, 0.0);
        for md in d.modes() {
            let c = u.coeffs[d.mode_index(md.k, md.m)];
            let a = md.k as f64 * PI / d.lx;
            let b = md.m as f64 * PI / d.ly;
            let an = 2.0 / (d.lambda(md.k, md.m) * d.lx * d.ly).sqrt();
            out.0 += c * an * b * (a * x).sin() * (b * y).cos();
            out.1 -= c * an * a * (a * x).cos() * (b * y).sin();
        }
        out
    }

    fn naive_grad(d: &DomainSpec, v: &VelocityField, x: f64, y: f64) -> [f64; 4] {
        let mut g = [0.0; 4];
        for md in d.modes() {
            let c = v.coeffs[d.mode_index(md.k, md.m)];
            let a = md.k as f64 * PI / d.lx;
            let b = md.m as f64 * PI / d.ly;
            let an = 2.0 / (d.lambda(md.k, md.m) * d.lx * d.ly).sqrt();
            let (sa, ca) = ((a * x).sin(), (a * x).cos());
            let (sb, cb) = ((b * y).sin(), (b * y).cos());
            g[0] += c * an * b * a * ca * cb; // d1 v1
            g[1] -= c * an * b * b * sa * sb; // d2 v1
            g[2] += c * an * a * a * sa * sb; // d1 v2
            g[3] -= c * an * a * b * ca * cb; // d2 v2
        }
        g
    }

    fn naive_trilinear(
        d: &DomainSpec,
        u: &VelocityField,
        v: &VelocityField,
        w: &VelocityField,
        qpts: usize,
    ) -> f64 {
        let mut s = 0.0;
        for i in 0..qpts {
            let x = (i as f64 + 0.5) * d.lx / qpts as f64;
            for j in 0..qpts {
                let y = (j as f64 + 0.5) * d.ly / qpts as f64;
                let (u1, u2) = naive_uv(d, u, x, y);
                let g = naive_grad(d, v, x, y);
                let (w1, w2) = naive_uv(d, w, x, y);
                s += (u1 * g[0] + u2 * g[1]) * w1 + (u1 * g[2] + u2 * g[3]) * w2;
            }
        }
        s * d.lx * d.ly / (qpts * qpts) as f64
    }

    fn random_field(d: &DomainSpec, tag: u64) -> VelocityField {
        let mut f = VelocityField::zeros(d);
        for (j, c) in f.coeffs.iter_mut().enumerate() {
            *c = rng::standard_normal(tag, rng::stream_id(rng::TAG_FIELD, 1, 0), j as u64, 0);
        }
        f
    }

    #[test]
    fn trilinear_matches_naive_quadrature_oracle() {
        let d = DomainSpec::new(1.0, 1.0, 6, 6, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        for seed in 0..5 {
            let u = random_field(&d, 1000 + seed);
            let v = random_field(&d, 2000 + seed);
            let w = random_field(&d, 3000 + seed);
            let fast = trilinear_form(&u, &v, &w, &q).unwrap();
            let slow = naive_trilinear(&d, &u, &v, &w, 4 * d.nx + 3);
            let scale = h_norm(&u) * v_norm(&d, &v) * h_norm(&w);
            assert!(
                (fast - slow).abs() <= 1e-10 * scale.max(1.0),
                "seed {seed}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn trilinear_identities() {
        let d = DomainSpec::new(1.3, 0.9, 8, 8, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        for seed in 0..10 {
            let u = random_field(&d, 100 + seed);
            let v = random_field(&d, 200 + seed);
            let w = random_field(&d, 300 + seed);
            let scale =
                h_norm(&u) * (v_norm(&d, &v) * h_norm(&w) + v_norm(&d, &w) * h_norm(&v)) + 1.0;
            let self_cancel = trilinear_form(&u, &v, &v, &q).unwrap();
            assert!(self_cancel.abs() <= 1e-12 * scale, "{self_cancel}");
            let anti = trilinear_form(&u, &v, &w, &q).unwrap()
                + trilinear_form(&u, &w, &v, &q).unwrap();
            assert!(anti.abs() <= 1e-12 * scale, "{anti}");
        }
    }

    #[test]
    fn bilinear_matches_trilinear_against_basis() {
        let d = DomainSpec::unit_square(5, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let u = random_field(&d, 41);
        let v = random_field(&d, 42);
        let proj = bilinear_form(&u, &v, &q).unwrap();
        for md in d.modes() {
            let e = VelocityField::single_mode(&d, md.k, md.m, 1.0).unwrap();
            let want = trilinear_form(&u, &v, &e, &q).unwrap();
            let got = proj.coeffs[d.mode_index(md.k, md.m)];
            assert!((want - got).abs() <= 1e-11, "mode {md:?}");
        }
    }

    #[test]
    fn fused_equals_split_expansion() {
        let d = DomainSpec::unit_square(8, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let v = random_field(&d, 7);
        let z = random_field(&d, 8).scaled(0.3);
        let defect = fused_split_defect(&v, &z, &q).unwrap();
        assert!(defect <= 1e-12 * (1.0 + v.max_abs_coeff().powi(2)) * d.lambda_max());
    }

    #[test]
    fn single_eigenmode_self_advection_projects_to_zero() {
        // an eigen stream function has vorticity proportional to itself, so
        // its self-advection is a pressure gradient: the projection vanishes
        let d = DomainSpec::unit_square(6, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        for (k, m) in [(1, 1), (2, 3), (4, 1)] {
            let u = VelocityField::single_mode(&d, k, m, 1.7).unwrap();
            let b = bilinear_form(&u, &u, &q).unwrap();
            assert!(b.max_abs_coeff() < 1e-12, "mode ({k},{m})");
        }
    }

    #[test]
    fn lowest_mode_interpolation_ratio_closed_form() {
        // |u|^2_{L4} / (|u| |grad u|) = (sqrt 5 / 2) / sqrt(2 pi^2) for the
        // normalised lowest mode on the unit square
        let d = DomainSpec::unit_square(4, 1.0).unwrap();
        let consts = estimate_universal_constants(&d, 1, 0).unwrap();
        let want = 1.1 * (5.0_f64.sqrt() / 2.0) / (2.0 * PI * PI).sqrt();
        assert!((consts.c - want).abs() < 1e-12, "{} vs {want}", consts.c);
    }

    #[test]
    fn estimated_constants_hold_on_fresh_fields() {
        let d = DomainSpec::unit_square(8, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let consts = estimate_universal_constants(&d, 300, 1).unwrap();
        for i in 0..300 {
            let u = sample_field(&d, 999, i);
            let h = h_norm(&u);
            let v = v_norm(&d, &u);
            let l4 = l4_norm(&u, &q).unwrap();
            assert!(l4 * l4 <= consts.c * h * v * (1.0 + 1e-12), "sample {i}");
            let bdual = vdual_norm(&d, &bilinear_form(&u, &u, &q).unwrap());
            assert!(bdual <= consts.c1 * l4 * l4 * (1.0 + 1e-12));
            assert!(bdual <= consts.c2 * v * v * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dual_norm_chain_is_ordered() {
        // |B(u)|_{V'} <= c1 |u|^2_{L4} <= sqrt(2) c1 |u| |grad u| <= c2 |grad u|^2
        // holds with the estimated constants on fresh samples
        let d = DomainSpec::unit_square(8, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let consts = estimate_universal_constants(&d, 200, 3).unwrap();
        for i in 0..50 {
            let u = sample_field(&d, 555, i);
            let l4 = l4_norm(&u, &q).unwrap();
            let h = h_norm(&u);
            let v = v_norm(&d, &u);
            assert!(l4 * l4 <= consts.c * h * v * (1.0 + 1e-12));
            // Poincare turns |u| |grad u| into |grad u|^2 / sqrt(lambda_1)
            assert!(h * v <= v * v / d.lambda_1().sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn advection_bounds_hold_with_estimated_constant() {
        let d = DomainSpec::unit_square(8, 1.0).unwrap();
        let q = Quadrature::default_for(&d);
        let consts = estimate_universal_constants(&d, 400, 5).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..100 {
            let u = sample_field(&d, 71, 3 * i + 1);
            let v = sample_field(&d, 72, 3 * i + 2);
            let w = sample_field(&d, 73, 3 * i + 3);
            let ratios = check_advection_bounds(&d, &consts, &u, &v, &w, &q).unwrap();
            for r in ratios {
                worst = worst.max(r);
            }
        }
        assert!(worst <= 1.0, "worst ratio {worst}");
    }
}
