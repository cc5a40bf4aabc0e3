//! Time integration of the transformed velocity equation
//! `dv/dt = -nu A v - B(v+z, v+z) + alpha z + f` against a fixed noise
//! realisation, plus energy-balance validators over recorded trajectories.

use crate::error::{Error, Result};
use crate::ou::OUTrajectory;
use crate::spectral::nonlinear::{bilinear_form, trilinear_form, UniversalConstants};
use crate::spectral::norms::{bracket_norm, h_norm, l4_norm, v_norm, vdual_norm};
use crate::spectral::{DomainSpec, Quadrature, VelocityField};

/// H-norm level that aborts a run as a numerical blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Time-stepping scheme for the transformed equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Exponential Euler: exact viscous factor, nonlinearity frozen per step.
    Etd1,
    /// Crank-Nicolson viscosity with Adams-Bashforth-2 nonlinearity.
    ImexCnab,
    /// Classical explicit RK4; reference scheme with a stability bound on dt.
    Rk4Reference,
}

/// Solver parameters; `f` is the deterministic forcing in H.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub f: VelocityField,
    /// Record every this many steps; must divide the step count.
    pub record_every: usize,
}

/// Scalar diagnostics of one recorded state.
#[derive(Clone, Copy, Debug)]
pub struct StateDiag {
    pub h: f64,
    pub v_norm: f64,
    pub bracket: f64,
    pub l4: f64,
}

/// Recorded solution of one solve: `v` states, companion `z` snapshots and
/// per-state diagnostics on a uniform recorded grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t0: f64,
    /// Spacing of recorded points (solver dt times the record stride).
    pub dt: f64,
    pub n_points: usize,
    pub n_modes: usize,
    pub alpha: f64,
    pub f: VelocityField,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub diag: Vec<StateDiag>,
}

impl Trajectory {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.v[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn z_state(&self, i: usize) -> &[f64] {
        &self.z[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn v_field(&self, d: &DomainSpec, i: usize) -> Result<VelocityField> {
        VelocityField::from_coeffs(d, self.state(i).to_vec())
    }

    pub fn z_field(&self, d: &DomainSpec, i: usize) -> Result<VelocityField> {
        VelocityField::from_coeffs(d, self.z_state(i).to_vec())
    }

    pub fn final_v(&self, d: &DomainSpec) -> Result<VelocityField> {
        self.v_field(d, self.n_points - 1)
    }
}

/// Largest stable RK4 step `1 / (nu lambda_max)` for the retained modes.
pub fn rk4_stability_limit(d: &DomainSpec) -> f64 {
    1.0 / (d.nu * d.lambda_max())
}

/// `phi_1(x) = (e^x - 1) / x`, continuously extended to 1 at zero.
fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.exp_m1() / x
    }
}

/// `-B(v+z, v+z) + alpha z + f` with the advection evaluated fused.
fn nonlinear_rhs(
    q: &Quadrature,
    v: &VelocityField,
    zf: &VelocityField,
    alpha: f64,
    f: &VelocityField,
) -> Result<VelocityField> {
    let s = v.add(zf);
    let mut n = bilinear_form(&s, &s, q)?;
    n.scale(-1.0);
    n.axpy(alpha, zf);
    n.axpy(1.0, f);
    Ok(n)
}

/// Full right-hand side `-nu A v + N(v, z)` for the explicit reference scheme.
fn full_rhs(
    d: &DomainSpec,
    q: &Quadrature,
    lam: &[f64],
    v: &VelocityField,
    zf: &VelocityField,
    alpha: f64,
    f: &VelocityField,
) -> Result<VelocityField> {
    let mut n = nonlinear_rhs(q, v, zf, alpha, f)?;
    for j in 0..lam.len() {
        n.coeffs[j] -= d.nu * lam[j] * v.coeffs[j];
    }
    Ok(n)
}

/// Integrate the transformed equation from `v0` over `[t_start, t_end]`
/// against the noise snapshots in `z`. The solver step must be an integer
/// multiple of the trajectory grid step (an even multiple for the reference
/// scheme, which samples `z` at half steps), and the window must lie inside
/// the trajectory. Exceeding the blow-up threshold aborts with the last good
/// time.
pub fn solve_v(
    d: &DomainSpec,
    v0: &VelocityField,
    z: &OUTrajectory,
    cfg: &SolverConfig,
    t_start: f64,
    t_end: f64,
) -> Result<Trajectory> {
    v0.check_domain(d)?;
    cfg.f.check_domain(d)?;
    if !(cfg.dt > 0.0) || cfg.record_every == 0 {
        return Err(Error::InvalidConfig(
            "solver needs dt > 0 and record_every >= 1".into(),
        ));
    }
    if z.n_modes != d.n_modes() {
        return Err(Error::CutoffMismatch {
            found_nx: 0,
            found_ny: z.n_modes,
            want_nx: d.nx,
            want_ny: d.ny,
        });
    }
    let ratio = (cfg.dt / z.dt).round();
    if ratio < 1.0 || (cfg.dt - ratio * z.dt).abs() > crate::noise::GRID_TOL * cfg.dt {
        return Err(Error::OffGrid {
            value: cfg.dt,
            dt: z.dt,
            tol: crate::noise::GRID_TOL,
        });
    }
    let r = ratio as usize;
    if cfg.scheme == Scheme::Rk4Reference {
        if r % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "reference scheme samples z at half steps: dt / z.dt = {r} must be even"
            )));
        }
        let limit = rk4_stability_limit(d);
        if cfg.dt > limit {
            return Err(Error::InvalidConfig(format!(
                "stability violation: reference scheme needs dt <= 1/(nu lambda_max) = {limit:.6e}, got {:.6e}",
                cfg.dt
            )));
        }
    }
    if t_end < t_start {
        return Err(Error::InvalidConfig("t_end must be >= t_start".into()));
    }
    let span_steps = ((t_end - t_start) / cfg.dt).round();
    if ((t_end - t_start) - span_steps * cfg.dt).abs() > crate::noise::GRID_TOL * cfg.dt {
        return Err(Error::OffGrid {
            value: t_end - t_start,
            dt: cfg.dt,
            tol: crate::noise::GRID_TOL,
        });
    }
    let n_steps = span_steps as usize;
    if n_steps % cfg.record_every != 0 {
        return Err(Error::InvalidConfig(format!(
            "record_every = {} must divide the step count {n_steps}",
            cfg.record_every
        )));
    }
    let iz0 = z.grid_index(t_start)?;
    if iz0 + n_steps * r >= z.n_points {
        return Err(Error::WindowExceeded {
            want_lo: t_start,
            want_hi: t_end,
            have_lo: z.t_past(),
            have_hi: z.t_future(),
        });
    }

    let q = Quadrature::default_for(d);
    let lam = d.eigenvalues();
    let n_modes = d.n_modes();
    let alpha = z.alpha;
    let n_rec = n_steps / cfg.record_every + 1;

    let etd: Vec<(f64, f64)> = lam
        .iter()
        .map(|&l| {
            let x = -d.nu * l * cfg.dt;
            (x.exp(), cfg.dt * phi1(x))
        })
        .collect();
    let cnab: Vec<(f64, f64)> = lam
        .iter()
        .map(|&l| {
            let a = d.nu * l * cfg.dt / 2.0;
            ((1.0 - a) / (1.0 + a), cfg.dt / (1.0 + a))
        })
        .collect();

    let z_at = |idx: usize| VelocityField::from_coeffs(d, z.snapshot(idx).to_vec());

    let mut traj = Trajectory {
        t0: t_start,
        dt: cfg.dt * cfg.record_every as f64,
        n_points: n_rec,
        n_modes,
        alpha,
        f: cfg.f.clone(),
        v: Vec::with_capacity(n_rec * n_modes),
        z: Vec::with_capacity(n_rec * n_modes),
        diag: Vec::with_capacity(n_rec),
    };
    let mut record = |v: &VelocityField, z_snap: &[f64]| -> Result<()> {
        traj.v.extend_from_slice(&v.coeffs);
        traj.z.extend_from_slice(z_snap);
        traj.diag.push(StateDiag {
            h: h_norm(v),
            v_norm: v_norm(d, v),
            bracket: bracket_norm(d, v),
            l4: l4_norm(v, &q)?,
        });
        Ok(())
    };

    let mut v = v0.clone();
    record(&v, z.snapshot(iz0))?;
    let mut n_prev: Option<VelocityField> = None;
    for i in 0..n_steps {
        let z_now = z_at(iz0 + i * r)?;
        match cfg.scheme {
            Scheme::Etd1 => {
                let nl = nonlinear_rhs(&q, &v, &z_now, alpha, &cfg.f)?;
                for j in 0..n_modes {
                    let (decay, w) = etd[j];
                    v.coeffs[j] = decay * v.coeffs[j] + w * nl.coeffs[j];
                }
            }
            Scheme::ImexCnab => {
                let nl = nonlinear_rhs(&q, &v, &z_now, alpha, &cfg.f)?;
                let prev = n_prev.as_ref().unwrap_or(&nl);
                for j in 0..n_modes {
                    let (shrink, w) = cnab[j];
                    v.coeffs[j] =
                        shrink * v.coeffs[j] + w * (1.5 * nl.coeffs[j] - 0.5 * prev.coeffs[j]);
                }
                n_prev = Some(nl);
            }
            Scheme::Rk4Reference => {
                let z_half = z_at(iz0 + i * r + r / 2)?;
                let z_next = z_at(iz0 + (i + 1) * r)?;
                let h = cfg.dt;
                let k1 = full_rhs(d, &q, &lam, &v, &z_now, alpha, &cfg.f)?;
                let mut s = v.clone();
                s.axpy(h / 2.0, &k1);
                let k2 = full_rhs(d, &q, &lam, &s, &z_half, alpha, &cfg.f)?;
                let mut s = v.clone();
                s.axpy(h / 2.0, &k2);
                let k3 = full_rhs(d, &q, &lam, &s, &z_half, alpha, &cfg.f)?;
                let mut s = v.clone();
                s.axpy(h, &k3);
                let k4 = full_rhs(d, &q, &lam, &s, &z_next, alpha, &cfg.f)?;
                v.axpy(h / 6.0, &k1);
                v.axpy(h / 3.0, &k2);
                v.axpy(h / 3.0, &k3);
                v.axpy(h / 6.0, &k4);
            }
        }
        let h = h_norm(&v);
        if !h.is_finite() || h > BLOWUP_THRESHOLD {
            return Err(Error::BlowUp {
                last_good: t_start + i as f64 * cfg.dt,
                threshold: BLOWUP_THRESHOLD,
            });
        }
        if (i + 1) % cfg.record_every == 0 {
            record(&v, z.snapshot(iz0 + (i + 1) * r))?;
        }
    }
    Ok(traj)
}

/// Signed midpoint residuals of the weak form
/// `d/dt (v, phi) = -nu <<v, phi>> + b(v+z, phi, v+z) + (alpha z + f, phi)`
/// on the recorded grid; one entry per interior midpoint.
pub fn weak_residual_series(
    d: &DomainSpec,
    traj: &Trajectory,
    probe: &VelocityField,
) -> Result<Vec<f64>> {
    probe.check_domain(d)?;
    if traj.n_points < 3 {
        return Err(Error::InvalidConfig(
            "weak residual needs at least 3 recorded states".into(),
        ));
    }
    let q = Quadrature::default_for(d);
    let lam = d.eigenvalues();
    let n = traj.n_modes;
    let mut out = Vec::with_capacity(traj.n_points - 1);
    for i in 0..traj.n_points - 1 {
        let v0 = traj.state(i);
        let v1 = traj.state(i + 1);
        let z0 = traj.z_state(i);
        let z1 = traj.z_state(i + 1);
        let mut lhs = 0.0;
        let mut visc = 0.0;
        let mut force = 0.0;
        let mut mid = vec![0.0; n];
        for j in 0..n {
            let vb = 0.5 * (v0[j] + v1[j]);
            let zb = 0.5 * (z0[j] + z1[j]);
            lhs += (v1[j] - v0[j]) / traj.dt * probe.coeffs[j];
            visc += d.nu * lam[j] * vb * probe.coeffs[j];
            force += (traj.alpha * zb + traj.f.coeffs[j]) * probe.coeffs[j];
            mid[j] = vb + zb;
        }
        let m = VelocityField::from_coeffs(d, mid)?;
        let tri = trilinear_form(&m, probe, &m, &q)?;
        out.push(lhs - (-visc + tri + force));
    }
    Ok(out)
}

/// Largest absolute midpoint residual of the weak form.
pub fn weak_residual(d: &DomainSpec, traj: &Trajectory, probe: &VelocityField) -> Result<f64> {
    Ok(weak_residual_series(d, traj, probe)?
        .iter()
        .fold(0.0, |a, r| a.max(r.abs())))
}

/// Per-state ingredients shared by the energy validators.
struct EnergySeries {
    h2: Vec<f64>,
    /// `2(-b(v,z,v) + (g,v) + (f,v) - [v]^2)` with `g = alpha z - B(z,z)`.
    psi: Vec<f64>,
    /// `|z|^2_{L4}` on the recorded grid.
    l4sq_z: Vec<f64>,
    /// `(3/nu) (|g|^2_{V'} + |f|^2_{V'})`.
    src: Vec<f64>,
}

fn energy_series(d: &DomainSpec, traj: &Trajectory) -> Result<EnergySeries> {
    let q = Quadrature::default_for(d);
    let fdual2 = vdual_norm(d, &traj.f).powi(2);
    let n = traj.n_points;
    let mut s = EnergySeries {
        h2: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
        l4sq_z: Vec::with_capacity(n),
        src: Vec::with_capacity(n),
    };
    for i in 0..n {
        let v = traj.v_field(d, i)?;
        let z = traj.z_field(d, i)?;
        let h2 = v.dot(&v);
        let mut g = bilinear_form(&z, &z, &q)?;
        g.scale(-1.0);
        g.axpy(traj.alpha, &z);
        let br2 = bracket_norm(d, &v).powi(2);
        let psi = 2.0 * (-trilinear_form(&v, &z, &v, &q)? + g.dot(&v) + traj.f.dot(&v) - br2);
        s.h2.push(h2);
        s.psi.push(psi);
        s.l4sq_z.push(l4_norm(&z, &q)?.powi(2));
        s.src
            .push(3.0 / d.nu * (vdual_norm(d, &g).powi(2) + fdual2));
    }
    Ok(s)
}

/// Largest defect of the pathwise energy identity
/// `|v(t)|^2 = |v(tau)|^2 e^{-nu lambda_1 (t - tau)} + int_tau^t e^{-nu
/// lambda_1 (t - s)} psi(s) ds` over all recorded pairs `tau <= t`,
/// normalised by the running supremum of `|v|^2`. Integrals use trapezoid
/// quadrature on the recorded grid, updated incrementally per pair.
pub fn energy_equality_check(d: &DomainSpec, traj: &Trajectory) -> Result<f64> {
    let s = energy_series(d, traj)?;
    let n = traj.n_points;
    let dt = traj.dt;
    let decay_step = (-d.nu * d.lambda_1() * dt).exp();
    let scale = s.h2.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut decay = 1.0;
        let mut integral = 0.0;
        for j in i + 1..n {
            decay *= decay_step;
            integral = integral * decay_step + dt / 2.0 * (decay_step * s.psi[j - 1] + s.psi[j]);
            let defect = (s.h2[j] - (s.h2[i] * decay + integral)).abs();
            worst = worst.max(defect);
        }
    }
    Ok(worst / scale)
}

/// Worst margin `rhs - |v(t)|^2` of the pathwise energy inequality
/// `|v(t)|^2 <= |v(tau)|^2 E(tau, t) + (3/nu) int_tau^t (|g|^2_{V'} +
/// |f|^2_{V'}) E(s, t) ds` with `E(s, t) = e^{-nu lambda_1 (t - s) +
/// (3 C^2 / nu) int_s^t |z|^2_{L4}}`, over all recorded pairs, normalised
/// per pair by `max(|v(tau)|^2, 1)`-free floor on the start level.
pub fn energy_inequality_check(
    d: &DomainSpec,
    traj: &Trajectory,
    consts: &UniversalConstants,
) -> Result<f64> {
    let s = energy_series(d, traj)?;
    let n = traj.n_points;
    let dt = traj.dt;
    let c3 = 3.0 * consts.c * consts.c / d.nu;
    let factor: Vec<f64> = (1..n)
        .map(|j| {
            (-d.nu * d.lambda_1() * dt + c3 * dt / 2.0 * (s.l4sq_z[j - 1] + s.l4sq_z[j])).exp()
        })
        .collect();
    let mut worst = f64::INFINITY;
    for i in 0..n {
        let floor = s.h2[i].max(1e-30);
        let mut decay = 1.0;
        let mut integral = 0.0;
        for j in i + 1..n {
            let fct = factor[j - 1];
            decay *= fct;
            integral = integral * fct + dt / 2.0 * (fct * s.src[j - 1] + s.src[j]);
            let margin = (s.h2[i] * decay + integral - s.h2[j]) / floor;
            worst = worst.min(margin);
        }
    }
    if worst == f64::INFINITY {
        worst = 0.0;
    }
    Ok(worst)
}

/// Weighted tail diagnostics of a noise trajectory over `[-horizon, 0]`.
/// Times ascend toward zero; `partial[i]` integrates over `[t[i], 0]`.
#[derive(Clone, Debug)]
pub struct TailDecayReport {
    pub t: Vec<f64>,
    /// `|z(t)|^2_H e^{nu lambda_1 t + (3 C^2/nu) int_t^0 |z|^2_{L4}}`.
    pub pointwise: Vec<f64>,
    /// Partial integrals of `(1 + |z|^2_{L4} + |z|^4_{L4})` times the weight.
    pub partial: Vec<f64>,
    /// Pointwise quantity stays below 1e-8 across the far 10% of the window.
    pub pointwise_ok: bool,
    /// Successive partial-integral increments in the far 10% stay below 1e-8.
    pub integral_ok: bool,
}

/// Tail-decay check of the weighted noise functionals entering the absorbing
/// radii: the weighted `|z|^2_H` must vanish into the past and the weighted
/// moment integral must converge. The weight equals 1 at time zero.
pub fn tail_decay_check(
    d: &DomainSpec,
    z: &OUTrajectory,
    consts: &UniversalConstants,
    horizon: f64,
) -> Result<TailDecayReport> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidConfig("tail horizon must be positive".into()));
    }
    let i0 = z.grid_index(-horizon)?;
    let i1 = z.grid_index(0.0)?;
    let n = i1 - i0 + 1;
    if n < 3 {
        return Err(Error::InvalidConfig(
            "tail check needs at least 3 grid points".into(),
        ));
    }
    let q = Quadrature::default_for(d);
    let c3 = 3.0 * consts.c * consts.c / d.nu;
    let dt = z.dt;
    let mut h2 = vec![0.0; n];
    let mut l4sq = vec![0.0; n];
    for k in 0..n {
        let zf = z.field(d, i0 + k)?;
        h2[k] = zf.dot(&zf);
        l4sq[k] = l4_norm(&zf, &q)?.powi(2);
    }
    // Suffix trapezoid of |z|^2_{L4} over [t_k, 0].
    let mut suffix = vec![0.0; n];
    for k in (0..n - 1).rev() {
        suffix[k] = suffix[k + 1] + dt / 2.0 * (l4sq[k] + l4sq[k + 1]);
    }
    let mut t = vec![0.0; n];
    let mut weight = vec![0.0; n];
    for k in 0..n {
        t[k] = z.time(i0 + k);
        weight[k] = (d.nu * d.lambda_1() * t[k] + c3 * suffix[k]).exp();
    }
    let pointwise: Vec<f64> = (0..n).map(|k| h2[k] * weight[k]).collect();
    let integrand: Vec<f64> = (0..n)
        .map(|k| (1.0 + l4sq[k] + l4sq[k] * l4sq[k]) * weight[k])
        .collect();
    let mut partial = vec![0.0; n];
    for k in (0..n - 1).rev() {
        partial[k] = partial[k + 1] + dt / 2.0 * (integrand[k] + integrand[k + 1]);
    }
    let far = (n / 10).max(1);
    let pointwise_ok = pointwise[..far].iter().all(|&v| v < 1e-8);
    let integral_ok = (1..=far).all(|k| partial[k - 1] - partial[k] < 1e-8);
    Ok(TailDecayReport {
        t,
        pointwise,
        partial,
        pointwise_ok,
        integral_ok,
    })
}
