//! Random absorbing sets, decaying-radius tables, and pullback ensembles.
//!
//! Every radius here is a functional of one noise realisation over a
//! trailing window `[-horizon, 0]` weighted by
//! `e^{W(s)}`, `W(s) = nu lambda_1 s + c3 int_s^0 |z|^2_{L4}`,
//! `c3 = 3 c^2 / nu`. The same weight evaluated on the fiber shifted back
//! by `t` factors as `e^{W_t(s)} = e^{W(s - t)} e^{K(t)}` with
//! `K(t) = -log w(-t)`, so the whole decay table `q(t) = r(t)^2 e^{-K(t)}`
//! reduces to suffix sums and sliding-window maxima of static arrays on the
//! base grid, all living on the numerically safe decayed scale.

use std::collections::VecDeque;
use std::io::Read as _;
use std::path::Path;

use rayon::prelude::*;

use crate::cocycle::CocycleContext;
use crate::error::{Error, Result};
use crate::noise::{put_f64, put_u32, put_u64, Reader};
use crate::ou::OUTrajectory;
use crate::rng::{standard_normal, stream_id, uniform, TAG_ENSEMBLE};
use crate::spectral::nonlinear::{bilinear_form, UniversalConstants};
use crate::spectral::norms::{h_norm, l4_norm, v_norm, vdual_norm};
use crate::spectral::{DomainSpec, Quadrature, VelocityField};

/// Radius family of a random ball. Non-constant kinds are weighted
/// functionals of the trailing noise window; `Constant` ignores the fiber.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusKind {
    /// Fiber-independent radius.
    Constant(f64),
    /// `|z(0)|_H`.
    R1,
    /// Weighted running supremum `sup_s |z(s)|^2_H e^{W(s)}`, square root.
    R2,
    /// Weighted integral `int |z|^2_H e^W`, square root.
    R3,
    /// Weighted integral `int |z|^4_{L4} e^W`, square root.
    R4,
    /// Weighted window volume `int e^W`, square root.
    R5,
    /// Transformed-equation bound: `2 + sup_s {2|z(s)|^2 e^{W(s)}
    /// + (3/nu) int_s^0 (|g|^2_{V'} + |f|^2_{V'}) e^W}`, square root.
    R11,
    /// `|z(0)|_H`, the correction from state back to untransformed state.
    R12,
    /// Absorbing radius for the untransformed flow: `R11 + R12`.
    R13,
}

impl RadiusKind {
    /// True when the kind needs the Ornstein-Uhlenbeck drift
    /// `g = alpha z - B(z, z)` along the window.
    pub fn needs_g(self) -> bool {
        matches!(self, RadiusKind::R11 | RadiusKind::R13)
    }
}

/// Radius kind plus the trailing-window length it is evaluated over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusFunction {
    pub kind: RadiusKind,
    pub horizon: f64,
}

/// Ball centred at the origin of H with a fiber-dependent radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomBall {
    pub radius: RadiusFunction,
}

/// Scalar series of one noise realisation over `[-horizon, 0]` together
/// with the weighted suffix integrals every radius evaluation needs.
/// Entry `k` sits at time `t0 + k dt`; the last entry sits at time zero,
/// where `logw = 0` exactly.
#[derive(Clone, Debug)]
pub struct WeightSeries {
    pub dt: f64,
    pub t0: f64,
    pub nu: f64,
    /// `|z|^2_H` per grid point.
    pub h2: Vec<f64>,
    /// `|z|^2_{L4}` per grid point.
    pub l4sq: Vec<f64>,
    /// `nu lambda_1 t + c3 int_t^0 |z|^2_{L4}`; zero at the right end.
    pub logw: Vec<f64>,
    /// `e^{logw}`.
    pub expw: Vec<f64>,
    /// `ln h2 + logw`; `-inf` where `h2 = 0`.
    pub m2log: Vec<f64>,
    /// Suffix trapezoid of `h2 e^W`.
    pub int3: Vec<f64>,
    /// Suffix trapezoid of `l4sq^2 e^W`.
    pub int4: Vec<f64>,
    /// Suffix trapezoid of `e^W`.
    pub int5: Vec<f64>,
    /// Suffix trapezoid of `(|g|^2_{V'} + |f|^2_{V'}) e^W`; zeros unless
    /// the series was built with the drift columns.
    pub intg: Vec<f64>,
    /// `2 h2 e^W + (3/nu) intg`, the static integrand of the R11 supremum.
    pub gsup: Vec<f64>,
}

/// Builds the weighted series of `z` over `[-horizon, 0]` on the
/// trajectory's own grid. `with_g` additionally evaluates the drift
/// `g = alpha z - B(z, z)` per point, which costs one quadrature each.
pub fn weight_series(
    d: &DomainSpec,
    z: &OUTrajectory,
    consts: &UniversalConstants,
    f: &VelocityField,
    horizon: f64,
    with_g: bool,
) -> Result<WeightSeries> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidConfig(
            "weight series horizon must be positive".into(),
        ));
    }
    f.check_domain(d)?;
    let i0 = z.grid_index(-horizon)?;
    let i1 = z.grid_index(0.0)?;
    let n = i1 - i0 + 1;
    if n < 3 {
        return Err(Error::InvalidConfig(
            "weight series needs at least 3 grid points".into(),
        ));
    }
    let q = Quadrature::default_for(d);
    let dt = z.dt;
    let c3 = 3.0 * consts.c * consts.c / d.nu;
    let fd2 = vdual_norm(d, f).powi(2);
    let alpha = z.alpha;
    let cols: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64, f64)> {
            let zf = z.field(d, i0 + k)?;
            let h2 = zf.dot(&zf);
            let l4sq = l4_norm(&zf, &q)?.powi(2);
            let gf2 = if with_g {
                let g = zf.scaled(alpha).sub(&bilinear_form(&zf, &zf, &q)?);
                vdual_norm(d, &g).powi(2) + fd2
            } else {
                0.0
            };
            Ok((h2, l4sq, gf2))
        })
        .collect::<Result<_>>()?;
    let h2: Vec<f64> = cols.iter().map(|c| c.0).collect();
    let l4sq: Vec<f64> = cols.iter().map(|c| c.1).collect();
    let gf2: Vec<f64> = cols.iter().map(|c| c.2).collect();

    let mut suffix = vec![0.0; n];
    for k in (0..n - 1).rev() {
        suffix[k] = suffix[k + 1] + dt / 2.0 * (l4sq[k] + l4sq[k + 1]);
    }
    let lam1 = d.lambda_1();
    let mut logw = vec![0.0; n];
    let mut expw = vec![0.0; n];
    let mut m2log = vec![0.0; n];
    for k in 0..n {
        let t = z.time(i0 + k);
        logw[k] = d.nu * lam1 * t + c3 * suffix[k];
        expw[k] = logw[k].exp();
        m2log[k] = h2[k].ln() + logw[k];
    }
    let suffix_trap = |y: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for k in (0..n - 1).rev() {
            out[k] = out[k + 1] + dt / 2.0 * (y(k) * expw[k] + y(k + 1) * expw[k + 1]);
        }
        out
    };
    let int3 = suffix_trap(&|k| h2[k]);
    let int4 = suffix_trap(&|k| l4sq[k] * l4sq[k]);
    let int5 = suffix_trap(&|_| 1.0);
    let intg = suffix_trap(&|k| gf2[k]);
    let gsup: Vec<f64> = (0..n)
        .map(|k| 2.0 * h2[k] * expw[k] + 3.0 / d.nu * intg[k])
        .collect();
    Ok(WeightSeries {
        dt,
        t0: z.time(i0),
        nu: d.nu,
        h2,
        l4sq,
        logw,
        expw,
        m2log,
        int3,
        int4,
        int5,
        intg,
        gsup,
    })
}

impl WeightSeries {
    pub fn len(&self) -> usize {
        self.h2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h2.is_empty()
    }

    /// `(q, log q)` of one kind on the base window `[a, b]`, where `b`
    /// indexes time `-t` and `q = r(fiber shifted by -t)^2 e^{-K(t)}`.
    /// `m2max` and `gmax` are the maxima of `m2log` and `gsup` over
    /// `[a, b]`; they are only read by the kinds that need them.
    fn window_q(&self, kind: RadiusKind, a: usize, b: usize, m2max: f64, gmax: f64) -> (f64, f64) {
        match kind {
            RadiusKind::Constant(c) => {
                let lq = 2.0 * c.ln() + self.logw[b];
                (c * c * self.expw[b], lq)
            }
            RadiusKind::R1 | RadiusKind::R12 => (self.h2[b] * self.expw[b], self.m2log[b]),
            RadiusKind::R2 => (m2max.exp(), m2max),
            RadiusKind::R3 => lin(self.int3[a] - self.int3[b]),
            RadiusKind::R4 => lin(self.int4[a] - self.int4[b]),
            RadiusKind::R5 => lin(self.int5[a] - self.int5[b]),
            RadiusKind::R11 => lin(self.q11(a, b, gmax)),
            RadiusKind::R13 => {
                let q11 = self.q11(a, b, gmax);
                let q12 = self.h2[b] * self.expw[b];
                lin(q11 + q12 + 2.0 * (q11 * q12).sqrt())
            }
        }
    }

    /// Supremum part of R11 on `[a, b]` plus the constant term, already on
    /// the decayed scale: `2 e^{-K} + max_u gsup[u] - (3/nu) intg[b]`.
    fn q11(&self, a: usize, b: usize, gmax: f64) -> f64 {
        let _ = a;
        2.0 * self.expw[b] + (gmax - 3.0 / self.nu * self.intg[b]).max(0.0)
    }

    /// Radius at shift zero; the window is the whole series and the decay
    /// factor is exactly one.
    pub fn radius_at_origin(&self, kind: RadiusKind) -> f64 {
        let b = self.len() - 1;
        let m2max = fold_max(&self.m2log[..=b]);
        let gmax = fold_max(&self.gsup[..=b]);
        let (q, _) = self.window_q(kind, 0, b, m2max, gmax);
        (q / self.expw[b]).sqrt()
    }
}

/// Clamps a suffix-sum difference at zero before pairing it with its log.
fn lin(q: f64) -> (f64, f64) {
    let q = if q < 0.0 { 0.0 } else { q };
    (q, q.ln())
}

fn fold_max(xs: &[f64]) -> f64 {
    xs.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x))
}

/// Radius of the given kind at shift zero over the trailing window
/// `[-horizon, 0]` of `z`.
pub fn eval_radius(
    kind: RadiusKind,
    d: &DomainSpec,
    z: &OUTrajectory,
    consts: &UniversalConstants,
    f: &VelocityField,
    horizon: f64,
) -> Result<f64> {
    if let RadiusKind::Constant(c) = kind {
        if !(c >= 0.0) {
            return Err(Error::InvalidConfig("constant radius must be >= 0".into()));
        }
        return Ok(c);
    }
    let s = weight_series(d, z, consts, f, horizon, kind.needs_g())?;
    Ok(s.radius_at_origin(kind))
}

/// Decay table of one radius function along the pullback lag grid
/// `t = 0, dt, ..., t_max`: `q(t) = r(fiber shifted by -t)^2 e^{-K(t)}`.
#[derive(Clone, Debug)]
pub struct DecayTable {
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    /// `ln q`; finite even when `q` itself under- or overflows.
    pub log_q: Vec<f64>,
    /// `K(t) = nu lambda_1 t - c3 int_{-t}^0 |z|^2_{L4}`.
    pub log_k: Vec<f64>,
    pub eps: f64,
    /// True iff every entry of the final fifth of the table is finite and
    /// below `eps`.
    pub verdict: bool,
}

impl DecayTable {
    /// First lag whose entry is finite and below `eps`, if any.
    pub fn first_below(&self) -> Option<f64> {
        self.t
            .iter()
            .zip(self.q.iter())
            .find(|(_, &q)| q.is_finite() && q < self.eps)
            .map(|(&t, _)| t)
    }
}

/// Builds the decay table of `r` against the fiber of `z`, scanning lags up
/// to `t_max` on the trajectory grid. Membership in the decaying class is
/// reported through `verdict`.
pub fn class_r_decay(
    r: &RadiusFunction,
    d: &DomainSpec,
    z: &OUTrajectory,
    consts: &UniversalConstants,
    f: &VelocityField,
    t_max: f64,
    eps: f64,
) -> Result<DecayTable> {
    let dt = z.dt;
    let j_max = crate::noise::snap_to_grid(t_max, dt)?;
    if j_max < 1 {
        return Err(Error::InvalidConfig("decay scan needs t_max >= dt".into()));
    }
    let j_max = j_max as usize;
    let constant = matches!(r.kind, RadiusKind::Constant(_));
    if constant {
        if let RadiusKind::Constant(c) = r.kind {
            if !(c >= 0.0) {
                return Err(Error::InvalidConfig("constant radius must be >= 0".into()));
            }
        }
    } else if !(r.horizon > 0.0) {
        return Err(Error::InvalidConfig(
            "window radius kinds need a positive horizon".into(),
        ));
    }
    let w_len = if constant {
        0
    } else {
        let w = crate::noise::snap_to_grid(r.horizon, dt)?;
        if w < 1 {
            return Err(Error::InvalidConfig("radius horizon must be >= dt".into()));
        }
        w as usize
    };
    let s = weight_series(
        d,
        z,
        consts,
        f,
        (w_len + j_max) as f64 * dt,
        r.kind.needs_g(),
    )?;
    let n = s.len();
    // Sliding maxima over the windows [b - w_len, b], b = n-1-j.
    let m2max = sliding_max_rev(&s.m2log, w_len, j_max + 1);
    let gmax = sliding_max_rev(&s.gsup, w_len, j_max + 1);
    let mut t = vec![0.0; j_max + 1];
    let mut q = vec![0.0; j_max + 1];
    let mut log_q = vec![0.0; j_max + 1];
    let mut log_k = vec![0.0; j_max + 1];
    for j in 0..=j_max {
        let b = n - 1 - j;
        let a = b - w_len;
        t[j] = j as f64 * dt;
        let (qj, lqj) = s.window_q(r.kind, a, b, m2max[j], gmax[j]);
        q[j] = qj;
        log_q[j] = lqj;
        log_k[j] = -s.logw[b];
    }
    let tail = (j_max + 1).div_ceil(5).max(1);
    let verdict = q[j_max + 1 - tail..]
        .iter()
        .all(|&v| v.is_finite() && v < eps);
    Ok(DecayTable {
        t,
        q,
        log_q,
        log_k,
        eps,
        verdict,
    })
}

/// Maxima of `arr` over the index windows `[n-1-j-w, n-1-j]` for
/// `j = 0..count`, via a monotone deque on the reversed axis.
fn sliding_max_rev(arr: &[f64], w: usize, count: usize) -> Vec<f64> {
    let n = arr.len();
    let get = |j: usize| arr[n - 1 - j];
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut out = vec![f64::NEG_INFINITY; count];
    let mut right = 0usize;
    for (j, slot) in out.iter_mut().enumerate() {
        while right <= j + w {
            let v = get(right);
            while let Some(&back) = deque.back() {
                if get(back) <= v {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(right);
            right += 1;
        }
        while *deque.front().unwrap() < j {
            deque.pop_front();
        }
        *slot = get(*deque.front().unwrap());
    }
    out
}

/// Absorbing radius at shift zero together with the ball it describes.
pub fn absorbing_ball(
    d: &DomainSpec,
    z: &OUTrajectory,
    consts: &UniversalConstants,
    f: &VelocityField,
    horizon: f64,
) -> Result<(f64, RandomBall)> {
    let r = eval_radius(RadiusKind::R13, d, z, consts, f, horizon)?;
    Ok((
        r,
        RandomBall {
            radius: RadiusFunction {
                kind: RadiusKind::R13,
                horizon,
            },
        },
    ))
}

/// One absorption experiment: sphere radius, entry lag, and final norms.
#[derive(Clone, Debug)]
pub struct AbsorptionReport {
    /// Absorbing radius of the untransformed flow at shift zero.
    pub r13: f64,
    /// Start sphere radius, `factor * r13`.
    pub start_radius: f64,
    /// First solver-grid lag with `start_radius^2 e^{-K(t)} <= 1`.
    pub t_star: f64,
    /// `|u(0)|_H` per direction after flowing from `-t_star`.
    pub final_norms: Vec<f64>,
    /// True iff every final norm is inside the absorbing radius.
    pub absorbed: bool,
}

/// Starts `n_dirs` states of norm `factor * r13` at lag `t_star` in the
/// past and flows them to time zero. The lag is the first solver-grid time
/// at which the deterministic part of the entry bound closes, so every
/// final norm must fall inside `r13` up to scheme error.
pub fn absorption_check(
    ctx: &CocycleContext,
    horizon: f64,
    factor: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<AbsorptionReport> {
    if !(factor > 0.0) || n_dirs == 0 {
        return Err(Error::InvalidConfig(
            "absorption check needs factor > 0 and at least one direction".into(),
        ));
    }
    let d = &ctx.domain;
    let z = ctx.z_shifted(0)?;
    let r13 = eval_radius(RadiusKind::R13, d, &z, &ctx.consts, &ctx.solver.f, horizon)?;
    let start_radius = factor * r13;
    let table = class_r_decay(
        &RadiusFunction {
            kind: RadiusKind::Constant(start_radius),
            horizon: 0.0,
        },
        d,
        &z,
        &ctx.consts,
        &ctx.solver.f,
        horizon,
        1.0,
    )?;
    // Scan only solver-grid lags so the flow below starts exactly at -t*.
    let stride = (ctx.solver.dt / z.dt).round() as usize;
    let t_star = (stride..table.q.len())
        .step_by(stride)
        .find(|&j| table.q[j].is_finite() && table.q[j] <= 1.0)
        .map(|j| table.t[j])
        .ok_or_else(|| {
            Error::SearchFailed(format!(
                "entry bound never closed by lag {horizon} for start radius {start_radius:.3e}"
            ))
        })?;
    let final_norms: Vec<f64> = (0..n_dirs)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let x = sphere_point(d, start_radius, seed, 0, j as u64);
            Ok(h_norm(&ctx.phi(t_star, -t_star, &x)?))
        })
        .collect::<Result<_>>()?;
    let absorbed = final_norms.iter().all(|&h| h <= r13 * (1.0 + 1e-9));
    Ok(AbsorptionReport {
        r13,
        start_radius,
        t_star,
        final_norms,
        absorbed,
    })
}

/// Flow used to push ensemble members to time zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowMode {
    /// Full transformed dynamics through the cocycle.
    Full,
    /// Pure viscous decay mode by mode; admits closed-form checks.
    LinearModewise,
}

/// Ensemble of states at time zero labelled by the pullback lag that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSnapshot {
    pub lag: f64,
    pub seed: u64,
    pub members: Vec<VelocityField>,
}

/// Distance row of one pullback lag, measured against the deepest lag.
#[derive(Clone, Copy, Debug)]
pub struct PullbackRow {
    pub lag: f64,
    pub members: usize,
    pub semi_to_deepest: f64,
    pub full_to_deepest: f64,
    pub h_diameter: f64,
    /// Mean fraction of member energy above the eigenvalue threshold.
    pub high_mode_mean: f64,
}

/// Parameters of one pullback approximation run.
#[derive(Clone, Debug)]
pub struct PullbackConfig {
    /// Strictly increasing positive lags, each on the solver grid.
    pub lags: Vec<f64>,
    /// Members sampled per lag.
    pub members: usize,
    pub seed: u64,
    pub flow: FlowMode,
    /// Restrict sampling to the lowest eigenmode line.
    pub lowest_mode_only: bool,
    /// Eigenvalue threshold of the high-mode energy fraction.
    pub lambda_threshold: f64,
}

/// Snapshots and distance rows of one pullback approximation run.
#[derive(Clone, Debug)]
pub struct PullbackReport {
    pub snapshots: Vec<EnsembleSnapshot>,
    pub rows: Vec<PullbackRow>,
}

/// Gaussian direction of exact norm `radius` in span of the basis.
fn sphere_point(d: &DomainSpec, radius: f64, seed: u64, k: u64, j: u64) -> VelocityField {
    let stream = stream_id(TAG_ENSEMBLE, k, j);
    let mut x = VelocityField::zeros(d);
    for (i, c) in x.coeffs.iter_mut().enumerate() {
        *c = standard_normal(seed, stream, i as u64, 0);
    }
    let h = h_norm(&x);
    if h == 0.0 {
        return VelocityField::single_mode(d, 1, 1, radius).expect("lowest mode exists");
    }
    x.scale(radius / h);
    x
}

/// Samples `m` members of the closed ball of the given radius: the first
/// half on the sphere, the rest uniformly in volume. With
/// `lowest_mode_only` the ball is the interval `[-radius, radius]` on the
/// lowest eigenmode line.
pub fn sample_ball_ensemble(
    d: &DomainSpec,
    radius: f64,
    m: usize,
    seed: u64,
    k: u64,
    lowest_mode_only: bool,
) -> Vec<VelocityField> {
    let n_modes = d.n_modes();
    (0..m)
        .map(|j| {
            let stream = stream_id(TAG_ENSEMBLE, k, j as u64);
            let on_sphere = j < m.div_ceil(2);
            let u = uniform(seed, stream, n_modes as u64, 1);
            if lowest_mode_only {
                let sign = if standard_normal(seed, stream, 0, 0) < 0.0 {
                    -1.0
                } else {
                    1.0
                };
                let amp = if on_sphere { radius } else { radius * u };
                VelocityField::single_mode(d, 1, 1, sign * amp).expect("lowest mode exists")
            } else {
                let rho = if on_sphere {
                    radius
                } else {
                    radius * u.powf(1.0 / n_modes as f64)
                };
                sphere_point(d, rho, seed, k, j as u64)
            }
        })
        .collect()
}

/// Approximates the pullback omega-limit set of the ball: members sampled
/// at each lag in the past are flowed to time zero, and every snapshot is
/// compared against the deepest one. Members whose run blows up are
/// dropped; fewer than two survivors at a lag is a search failure.
pub fn pullback_omega_limit(
    ctx: &CocycleContext,
    ball: &RandomBall,
    cfg: &PullbackConfig,
) -> Result<PullbackReport> {
    if cfg.lags.is_empty() || cfg.members < 2 {
        return Err(Error::InvalidConfig(
            "pullback run needs lags and at least two members per lag".into(),
        ));
    }
    if !cfg
        .lags
        .windows(2)
        .all(|w| w[0] < w[1])
        || cfg.lags[0] <= 0.0
    {
        return Err(Error::InvalidConfig(
            "pullback lags must be positive and strictly increasing".into(),
        ));
    }
    let d = &ctx.domain;
    let t_deep = *cfg.lags.last().expect("nonempty");
    // Radius of the ball on each shifted fiber, through the decay table.
    let radii: Vec<f64> = match ball.radius.kind {
        RadiusKind::Constant(c) => {
            if !(c >= 0.0) {
                return Err(Error::InvalidConfig("constant radius must be >= 0".into()));
            }
            vec![c; cfg.lags.len()]
        }
        kind => {
            let z = ctx.z_shifted(0)?;
            let table = class_r_decay(
                &ball.radius,
                d,
                &z,
                &ctx.consts,
                &ctx.solver.f,
                t_deep,
                1.0,
            )?;
            cfg.lags
                .iter()
                .map(|&lag| -> Result<f64> {
                    let j = crate::noise::snap_to_grid(lag, z.dt)? as usize;
                    let _ = kind;
                    Ok((0.5 * (table.log_q[j] + table.log_k[j])).exp())
                })
                .collect::<Result<_>>()?
        }
    };
    let mut snapshots = Vec::with_capacity(cfg.lags.len());
    for (k, (&lag, &rho)) in cfg.lags.iter().zip(radii.iter()).enumerate() {
        let drawn = sample_ball_ensemble(d, rho, cfg.members, cfg.seed, k as u64, cfg.lowest_mode_only);
        let members: Vec<VelocityField> = match cfg.flow {
            FlowMode::LinearModewise => drawn
                .iter()
                .map(|x| x.map_eigen(d, |lam| (-d.nu * lam * lag).exp()))
                .collect(),
            FlowMode::Full => {
                let evolved: Vec<Option<VelocityField>> = drawn
                    .par_iter()
                    .map(|x| -> Result<Option<VelocityField>> {
                        match ctx.phi(lag, -lag, x) {
                            Ok(u) => Ok(Some(u)),
                            Err(Error::BlowUp { .. }) => Ok(None),
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<_>>()?;
                evolved.into_iter().flatten().collect()
            }
        };
        if members.len() < 2 {
            return Err(Error::SearchFailed(format!(
                "fewer than two members survived the flow from lag {lag}"
            )));
        }
        snapshots.push(EnsembleSnapshot {
            lag,
            seed: cfg.seed,
            members,
        });
    }
    let deepest = &snapshots.last().expect("nonempty").members;
    let rows: Vec<PullbackRow> = snapshots
        .iter()
        .map(|snap| -> Result<PullbackRow> {
            let fractions = high_mode_fractions(d, &snap.members, cfg.lambda_threshold);
            Ok(PullbackRow {
                lag: snap.lag,
                members: snap.members.len(),
                semi_to_deepest: hausdorff(&snap.members, deepest, HausdorffMode::Semi)?,
                full_to_deepest: hausdorff(&snap.members, deepest, HausdorffMode::Full)?,
                h_diameter: max_pairwise(&snap.members, h_norm),
                high_mode_mean: fractions.iter().sum::<f64>() / fractions.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PullbackReport { snapshots, rows })
}

/// Directed or symmetric Hausdorff distance in the H norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HausdorffMode {
    /// `sup_{x in a} dist(x, b)`.
    Semi,
    /// `max(semi(a, b), semi(b, a))`.
    Full,
}

/// Hausdorff distance between two finite sets of states.
pub fn hausdorff(a: &[VelocityField], b: &[VelocityField], mode: HausdorffMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig(
            "hausdorff distance needs nonempty sets".into(),
        ));
    }
    let (nx, ny) = (a[0].nx, a[0].ny);
    for m in a.iter().chain(b.iter()) {
        if m.nx != nx || m.ny != ny {
            return Err(Error::CutoffMismatch {
                found_nx: m.nx,
                found_ny: m.ny,
                want_nx: nx,
                want_ny: ny,
            });
        }
    }
    let semi = |from: &[VelocityField], to: &[VelocityField]| -> f64 {
        from.iter()
            .map(|x| {
                to.iter()
                    .map(|y| h_norm(&x.sub(y)))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(match mode {
        HausdorffMode::Semi => semi(a, b),
        HausdorffMode::Full => semi(a, b).max(semi(b, a)),
    })
}

/// Spread measures of one ensemble: H diameter, V spread, and per-member
/// fraction of energy above the eigenvalue threshold.
#[derive(Clone, Debug)]
pub struct CompactnessReport {
    pub h_diameter: f64,
    pub v_spread: f64,
    pub high_mode_fraction: Vec<f64>,
    pub lambda_threshold: f64,
}

/// Diagnoses how concentrated an ensemble is: small V spread with a small
/// high-mode fraction is the numerical footprint of compactness.
pub fn compactness_diagnostics(
    d: &DomainSpec,
    members: &[VelocityField],
    lambda_threshold: f64,
) -> Result<CompactnessReport> {
    if members.is_empty() {
        return Err(Error::InvalidConfig(
            "compactness diagnostics need at least one member".into(),
        ));
    }
    for m in members {
        m.check_domain(d)?;
    }
    Ok(CompactnessReport {
        h_diameter: max_pairwise(members, h_norm),
        v_spread: max_pairwise(members, |u| v_norm(d, u)),
        high_mode_fraction: high_mode_fractions(d, members, lambda_threshold),
        lambda_threshold,
    })
}

fn max_pairwise(members: &[VelocityField], norm: impl Fn(&VelocityField) -> f64) -> f64 {
    let mut out = 0.0_f64;
    for (i, x) in members.iter().enumerate() {
        for y in &members[i + 1..] {
            out = out.max(norm(&x.sub(y)));
        }
    }
    out
}

/// Per-member energy fraction carried by modes with `lambda > threshold`;
/// zero for the zero state.
fn high_mode_fractions(d: &DomainSpec, members: &[VelocityField], threshold: f64) -> Vec<f64> {
    members
        .iter()
        .map(|u| {
            let mut total = 0.0;
            let mut high = 0.0;
            for (md, c) in d.modes().zip(u.coeffs.iter()) {
                let e = c * c;
                total += e;
                if d.lambda(md.k, md.m) > threshold {
                    high += e;
                }
            }
            if total == 0.0 {
                0.0
            } else {
                high / total
            }
        })
        .collect()
}

/// Kendall rank correlation of the values against their index order; ties
/// contribute zero. Returns zero for fewer than two values.
pub fn kendall_tau_vs_index(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    score as f64 / (n * (n - 1) / 2) as f64
}

const ENSEMBLE_MAGIC: &[u8; 4] = b"ENSB";
const ENSEMBLE_VERSION: u32 = 1;

/// Serializes a snapshot (header plus member-major coefficient block) so a
/// reload reproduces it bit-exactly.
pub fn save_ensemble(snap: &EnsembleSnapshot, d: &DomainSpec, file: &Path) -> Result<()> {
    for m in &snap.members {
        m.check_domain(d)?;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(ENSEMBLE_MAGIC);
    put_u32(&mut buf, ENSEMBLE_VERSION);
    put_u32(&mut buf, d.nx as u32);
    put_u32(&mut buf, d.ny as u32);
    put_u64(&mut buf, snap.members.len() as u64);
    put_f64(&mut buf, snap.lag);
    put_u64(&mut buf, snap.seed);
    for m in &snap.members {
        for c in &m.coeffs {
            put_f64(&mut buf, *c);
        }
    }
    std::fs::write(file, buf)?;
    Ok(())
}

/// Loads a snapshot saved by `save_ensemble`, validating magic, version,
/// cutoff, and exact length.
pub fn load_ensemble(file: &Path, d: &DomainSpec) -> Result<EnsembleSnapshot> {
    let mut buf = Vec::new();
    std::fs::File::open(file)?.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != ENSEMBLE_MAGIC {
        return Err(Error::Format("bad magic, expected ENSB".into()));
    }
    let version = r.u32()?;
    if version != ENSEMBLE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    if nx != d.nx || ny != d.ny {
        return Err(Error::CutoffMismatch {
            found_nx: nx,
            found_ny: ny,
            want_nx: d.nx,
            want_ny: d.ny,
        });
    }
    let count = r.u64()? as usize;
    let lag = r.f64()?;
    let seed = r.u64()?;
    let n_modes = d.n_modes();
    let mut members = Vec::with_capacity(count);
    for _ in 0..count {
        let mut coeffs = vec![0.0; n_modes];
        for c in coeffs.iter_mut() {
            *c = r.f64()?;
        }
        members.push(VelocityField::from_coeffs(d, coeffs)?);
    }
    r.finish("ensemble coefficient block")?;
    Ok(EnsembleSnapshot { lag, seed, members })
}
