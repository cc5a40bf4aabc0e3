//! Stationary Ornstein-Uhlenbeck transform of the noise path.
//!
//! Per retained mode `j` with damping `theta_j = nu lambda_j + alpha`, the
//! trajectory obeys the recursion `z(t+dt) = e^(-theta dt) z(t) + w *
//! dbeta(t)` with the variance-exact weight `w = sqrt((1 - e^(-2 theta
//! dt))/(2 theta dt))`, so the per-mode law is exactly `N(0, sigma^2/(2
//! theta))` at every grid point regardless of `dt`. Initial values at the
//! window start are stationary draws keyed by the absolute start index,
//! which makes the shift covariance `z(shifted path)(t) = z(path)(t + s)`
//! bit-exact rather than merely transient-small.

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::rng;
use crate::spectral::nonlinear::{bilinear_form, UniversalConstants};
use crate::spectral::norms::{l4_norm, vdual_norm, NormKind};
use crate::spectral::{DomainSpec, Quadrature, VelocityField};

/// Parameters of the OU transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OUConfig {
    /// Extra damping `alpha >= 0` added to the Stokes dissipation.
    pub alpha: f64,
}

impl OUConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be nonnegative, got {alpha}"
            )));
        }
        Ok(OUConfig { alpha })
    }
}

/// Dense OU trajectory on the path grid, time-major values.
#[derive(Debug, Clone)]
pub struct OUTrajectory {
    pub dt: f64,
    pub start_step: i64,
    pub n_points: usize,
    pub n_modes: usize,
    pub alpha: f64,
    pub theta: Vec<f64>,
    pub values: Vec<f64>,
}

impl OUTrajectory {
    pub fn time(&self, i: usize) -> f64 {
        (self.start_step + i as i64) as f64 * self.dt
    }

    pub fn t_past(&self) -> f64 {
        self.start_step as f64 * self.dt
    }

    pub fn t_future(&self) -> f64 {
        self.time(self.n_points - 1)
    }

    /// Grid index of time `t`; errors off-grid or outside the window.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let s = (t / self.dt).round();
        if (t - s * self.dt).abs() > crate::noise::GRID_TOL * t.abs().max(1.0) {
            return Err(Error::OffGrid {
                value: t,
                dt: self.dt,
                tol: crate::noise::GRID_TOL,
            });
        }
        let i = s as i64 - self.start_step;
        if i < 0 || i >= self.n_points as i64 {
            return Err(Error::WindowExceeded {
                want_lo: t,
                want_hi: t,
                have_lo: self.t_past(),
                have_hi: self.t_future(),
            });
        }
        Ok(i as usize)
    }

    pub fn snapshot(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn field(&self, d: &DomainSpec, i: usize) -> Result<VelocityField> {
        VelocityField::from_coeffs(d, self.snapshot(i).to_vec())
    }

    /// All-zero trajectory on the grid covering `[t_past, t_future]`; the
    /// degenerate stand-in for switched-off noise.
    pub fn zeros(
        d: &DomainSpec,
        t_past: f64,
        t_future: f64,
        dt: f64,
        alpha: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) || t_future < t_past {
            return Err(Error::InvalidConfig(
                "zero trajectory needs dt > 0 and t_past <= t_future".into(),
            ));
        }
        let start_step = crate::noise::snap_to_grid(t_past, dt)?;
        let end_step = crate::noise::snap_to_grid(t_future, dt)?;
        let n_points = (end_step - start_step) as usize + 1;
        let n_modes = d.n_modes();
        Ok(OUTrajectory {
            dt,
            start_step,
            n_points,
            n_modes,
            alpha,
            theta: thetas(d, alpha),
            values: vec![0.0; n_points * n_modes],
        })
    }
}

fn thetas(d: &DomainSpec, alpha: f64) -> Vec<f64> {
    d.eigenvalues().iter().map(|l| d.nu * l + alpha).collect()
}

/// Variance-exact within-step weight `sqrt((1 - e^(-2 x)) / (2 x))` at
/// `x = theta dt`; tends to 1 as `x -> 0`.
fn step_weight(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (-(-2.0 * x).exp_m1() / (2.0 * x)).sqrt()
    }
}

/// Stationary initial draw for the window starting at absolute raw step
/// `start_raw`.
fn stationary_init(w: &NoisePath, theta: &[f64], start_raw: i64) -> Vec<f64> {
    let idx = rng::signed_index(start_raw);
    theta
        .iter()
        .enumerate()
        .map(|(j, th)| {
            let sd = (w.sigma[j] * w.sigma[j] / (2.0 * th)).sqrt();
            sd * rng::standard_normal(
                w.seed,
                rng::stream_id(rng::TAG_OU_INIT, j as u64, 0),
                idx,
                0,
            )
        })
        .collect()
}

/// Runs the OU recursion over the full path window from an explicit initial
/// value at `t_past`.
pub fn ou_evolve_from(
    d: &DomainSpec,
    w: &NoisePath,
    cfg: &OUConfig,
    init: Vec<f64>,
) -> Result<OUTrajectory> {
    w.check_domain(d)?;
    let n = w.n_modes();
    if init.len() != n {
        return Err(Error::InvalidConfig(format!(
            "initial value has {} modes, path has {n}",
            init.len()
        )));
    }
    let theta = thetas(d, cfg.alpha);
    let decay: Vec<f64> = theta.iter().map(|th| (-th * w.dt).exp()).collect();
    let weight: Vec<f64> = theta.iter().map(|th| step_weight(th * w.dt)).collect();
    let n_points = w.n_steps + 1;
    let mut values = vec![0.0_f64; n_points * n];
    values[..n].copy_from_slice(&init);
    let mut inc = vec![0.0_f64; n];
    for i in 0..w.n_steps {
        w.increment_into(i, &mut inc);
        let (prev, rest) = values.split_at_mut((i + 1) * n);
        let prev = &prev[i * n..];
        for j in 0..n {
            rest[j] = decay[j] * prev[j] + weight[j] * inc[j];
        }
    }
    Ok(OUTrajectory {
        dt: w.dt,
        start_step: w.start_step,
        n_points,
        n_modes: n,
        alpha: cfg.alpha,
        theta,
        values,
    })
}

/// Runs the OU recursion with the stationary initialization at the window
/// start.
pub fn ou_evolve(d: &DomainSpec, w: &NoisePath, cfg: &OUConfig) -> Result<OUTrajectory> {
    let theta = thetas(d, cfg.alpha);
    let init = stationary_init(w, &theta, w.start_step + w.raw_offset);
    ou_evolve_from(d, w, cfg, init)
}

/// Max mode-wise discrepancy between the OU of the shifted path and the
/// reindexed OU of the base path over the full shifted window. The shifted
/// window start maps to the same absolute raw step, so both runs share the
/// initial draw and the increments and the discrepancy is exactly zero.
pub fn ou_shift_covariance_check(
    d: &DomainSpec,
    w: &NoisePath,
    cfg: &OUConfig,
    s: f64,
) -> Result<f64> {
    let base = ou_evolve(d, w, cfg)?;
    let shifted = ou_evolve(d, &w.shift_path(s)?, cfg)?;
    let offset = (s / w.dt).round() as i64;
    let mut worst = 0.0_f64;
    for i in 0..shifted.n_points {
        let bi = i as i64 + (shifted.start_step + offset - base.start_step);
        debug_assert!(bi >= 0 && (bi as usize) < base.n_points);
        let (a, b) = (shifted.snapshot(i), base.snapshot(bi as usize));
        for j in 0..base.n_modes {
            worst = worst.max((a[j] - b[j]).abs());
        }
    }
    Ok(worst)
}

/// Time average `(1/T) int_{-T}^0 |z(s)|^2 ds` by the trapezoid rule, in
/// the H or L4 norm.
pub fn ergodic_average(
    d: &DomainSpec,
    traj: &OUTrajectory,
    horizon: f64,
    kind: NormKind,
) -> Result<f64> {
    if !matches!(kind, NormKind::H | NormKind::L4) {
        return Err(Error::InvalidConfig(
            "ergodic average supports the H and L4 norms".into(),
        ));
    }
    let lo = traj.grid_index(-horizon)?;
    let hi = traj.grid_index(0.0)?;
    if hi <= lo {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} shorter than one step"
        )));
    }
    let q = Quadrature::default_for(d);
    let mut sum = 0.0;
    for i in lo..=hi {
        let sq = match kind {
            NormKind::H => traj.snapshot(i).iter().map(|v| v * v).sum::<f64>(),
            _ => {
                let f = traj.field(d, i)?;
                let l4 = l4_norm(&f, &q)?;
                l4 * l4
            }
        };
        let w = if i == lo || i == hi { 0.5 } else { 1.0 };
        sum += w * sq;
    }
    Ok(sum * traj.dt / horizon)
}

/// Exact stationary second moment `sum_j sigma_j^2 / (2 theta_j)`; the SLLN
/// limit of the H-norm ergodic average.
pub fn stationary_h2(d: &DomainSpec, sigma: &[f64], alpha: f64) -> f64 {
    d.eigenvalues()
        .iter()
        .zip(sigma)
        .map(|(l, s)| s * s / (2.0 * (d.nu * l + alpha)))
        .sum()
}

/// Monte Carlo estimate of `E |z_alpha(0)|^2_{L4}` from `samples`
/// stationary draws: the mean and its standard error.
pub fn stationary_l4sq_estimate(
    d: &DomainSpec,
    sigma: &[f64],
    alpha: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let q = Quadrature::default_for(d);
    let theta = thetas(d, alpha);
    let n = d.n_modes();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut coeffs = vec![0.0_f64; n];
    for s in 0..samples {
        for j in 0..n {
            let sd = (sigma[j] * sigma[j] / (2.0 * theta[j])).sqrt();
            coeffs[j] = sd
                * rng::standard_normal(
                    seed,
                    rng::stream_id(rng::TAG_STATIONARY, j as u64, 0),
                    s as u64,
                    0,
                );
        }
        let f = VelocityField::from_coeffs(d, coeffs.clone())?;
        let l4 = l4_norm(&f, &q)?;
        let x = l4 * l4;
        sum += x;
        sumsq += x * x;
    }
    let mean = sum / samples as f64;
    let var = (sumsq / samples as f64 - mean * mean).max(0.0);
    Ok((mean, (var / samples as f64).sqrt()))
}

/// Smallest integer `alpha >= 0` whose stationary Monte Carlo estimate of
/// `E |z_alpha(0)|^2_{L4}` clears `nu^2 lambda_1 / (6 C^2)` by three
/// standard errors. Common random numbers across candidates make the
/// estimate decay in `alpha`, searched by exponential bracketing plus
/// bisection and verified at the boundary.
pub fn select_alpha(
    d: &DomainSpec,
    sigma: &[f64],
    consts: &UniversalConstants,
    samples: usize,
    seed: u64,
) -> Result<u64> {
    const CAP: u64 = 1_000_000;
    let bound = d.nu * d.nu * d.lambda_1() / (6.0 * consts.c * consts.c);
    let passes = |alpha: u64| -> Result<bool> {
        let (mean, se) = stationary_l4sq_estimate(d, sigma, alpha as f64, samples, seed)?;
        Ok(mean + 3.0 * se < bound)
    };
    if passes(0)? {
        return Ok(0);
    }
    let mut hi = 1u64;
    while !passes(hi)? {
        if hi >= CAP {
            return Err(Error::SearchFailed(format!(
                "no alpha <= {CAP} clears the moment bound {bound:.6e}"
            )));
        }
        hi = (hi * 2).min(CAP);
    }
    let mut lo = hi / 2; // fails (or hi == 1 and alpha 0 failed)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // boundary verification guards against non-monotone Monte Carlo noise
    while hi > 0 && passes(hi - 1)? {
        hi -= 1;
    }
    Ok(hi)
}

/// Smallest grid `t0 > 0` with `(3 C^2 / nu) int_{-t}^0 |z|^2_{L4} ds <
/// nu lambda_1 t / 2` for every grid `t in [t0, horizon]`; `None` when the
/// condition still fails at the horizon.
pub fn ergodic_time_bound_check(
    d: &DomainSpec,
    traj: &OUTrajectory,
    consts: &UniversalConstants,
    horizon: f64,
) -> Result<Option<f64>> {
    let lo = traj.grid_index(-horizon)?;
    let hi = traj.grid_index(0.0)?;
    let q = Quadrature::default_for(d);
    let mut l4sq = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let l4 = l4_norm(&traj.field(d, i)?, &q)?;
        l4sq.push(l4 * l4);
    }
    let factor = 3.0 * consts.c * consts.c / d.nu;
    let mut integral = 0.0; // int_{-t}^0 as t walks backward from 0
    let mut last_violation: Option<usize> = None;
    for back in 1..l4sq.len() {
        let a = l4sq[l4sq.len() - back];
        let b = l4sq[l4sq.len() - 1 - back];
        integral += 0.5 * (a + b) * traj.dt;
        let t = back as f64 * traj.dt;
        if factor * integral >= d.nu * d.lambda_1() * t / 2.0 {
            last_violation = Some(back);
        }
    }
    Ok(match last_violation {
        None => Some(traj.dt),
        Some(back) if back + 1 < l4sq.len() => Some((back + 1) as f64 * traj.dt),
        Some(_) => None,
    })
}

/// Scalar diagnostics of an OU sweep, streamed without retaining the dense
/// trajectory: squared H and L4 norms per grid point, optionally the
/// squared dual norm of the drift correction `g = alpha z - B(z, z)`, and
/// strided coefficient snapshots.
#[derive(Debug, Clone)]
pub struct OUDiagnostics {
    pub dt: f64,
    pub start_step: i64,
    pub n_points: usize,
    pub alpha: f64,
    pub z_h2: Vec<f64>,
    pub z_l4sq: Vec<f64>,
    pub g_vdual_sq: Option<Vec<f64>>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl OUDiagnostics {
    pub fn time(&self, i: usize) -> f64 {
        (self.start_step + i as i64) as f64 * self.dt
    }

    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let s = (t / self.dt).round();
        if (t - s * self.dt).abs() > crate::noise::GRID_TOL * t.abs().max(1.0) {
            return Err(Error::OffGrid {
                value: t,
                dt: self.dt,
                tol: crate::noise::GRID_TOL,
            });
        }
        let i = s as i64 - self.start_step;
        if i < 0 || i >= self.n_points as i64 {
            return Err(Error::WindowExceeded {
                want_lo: t,
                want_hi: t,
                have_lo: self.start_step as f64 * self.dt,
                have_hi: self.time(self.n_points - 1),
            });
        }
        Ok(i as usize)
    }
}

/// Streams the OU recursion over the path window, recording scalar series
/// (and snapshots every `snapshot_every` steps; 0 disables them) in O(modes)
/// memory.
pub fn ou_scan(
    d: &DomainSpec,
    w: &NoisePath,
    cfg: &OUConfig,
    record_g: bool,
    snapshot_every: usize,
) -> Result<OUDiagnostics> {
    w.check_domain(d)?;
    let q = Quadrature::default_for(d);
    let n = w.n_modes();
    let theta = thetas(d, cfg.alpha);
    let decay: Vec<f64> = theta.iter().map(|th| (-th * w.dt).exp()).collect();
    let weight: Vec<f64> = theta.iter().map(|th| step_weight(th * w.dt)).collect();
    let n_points = w.n_steps + 1;
    let mut z = stationary_init(w, &theta, w.start_step + w.raw_offset);
    let mut inc = vec![0.0_f64; n];
    let mut z_h2 = Vec::with_capacity(n_points);
    let mut z_l4sq = Vec::with_capacity(n_points);
    let mut g_vdual_sq = if record_g {
        Some(Vec::with_capacity(n_points))
    } else {
        None
    };
    let mut snapshots = Vec::new();
    for i in 0..n_points {
        let f = VelocityField::from_coeffs(d, z.clone())?;
        z_h2.push(z.iter().map(|v| v * v).sum::<f64>());
        let l4 = l4_norm(&f, &q)?;
        z_l4sq.push(l4 * l4);
        if let Some(g) = g_vdual_sq.as_mut() {
            let mut corr = bilinear_form(&f, &f, &q)?;
            corr.scale(-1.0);
            corr.axpy(cfg.alpha, &f);
            let dual = vdual_norm(d, &corr);
            g.push(dual * dual);
        }
        if snapshot_every > 0 && i % snapshot_every == 0 {
            snapshots.push((i, z.clone()));
        }
        if i < w.n_steps {
            w.increment_into(i, &mut inc);
            for j in 0..n {
                z[j] = decay[j] * z[j] + weight[j] * inc[j];
            }
        }
    }
    Ok(OUDiagnostics {
        dt: w.dt,
        start_step: w.start_step,
        n_points,
        alpha: cfg.alpha,
        z_h2,
        z_l4sq,
        g_vdual_sq,
        snapshots,
    })
}
