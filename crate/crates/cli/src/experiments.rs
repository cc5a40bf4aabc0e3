//! Experiment orchestration: resolves a config into core objects, runs the
//! selected experiment, and emits CSV artifacts plus a run manifest.
//! Output writing is serialized; worker count never changes results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use snse_core::attractor::{
    absorption_check, class_r_decay, kendall_tau_vs_index, pullback_omega_limit, save_ensemble,
    DecayTable, FlowMode, PullbackConfig, RadiusFunction, RadiusKind, RandomBall,
};
use snse_core::cocycle::CocycleContext;
use snse_core::noise::{sample_path, save_path, validate_assumption_a1, RKHSSpec, SigmaLaw};
use snse_core::ou::{ou_evolve, ou_scan, ou_shift_covariance_check, select_alpha, OUConfig, OUTrajectory};
use snse_core::solver::{
    energy_equality_check, energy_inequality_check, solve_v, Scheme, SolverConfig,
};
use snse_core::spectral::nonlinear::{
    bilinear_form, estimate_universal_constants, sample_field, trilinear_form,
    UniversalConstants,
};
use snse_core::spectral::norms::{h_norm, l4_norm, v_norm, vdual_norm};
use snse_core::spectral::{DomainSpec, Quadrature, VelocityField};
use snse_core::{Error, Result};

use crate::config::{AutoOr, Config, FlowChoice, Kind, LawChoice, ModeAmp};

/// Core objects materialized from a config, before any path is sampled.
pub struct Resolved {
    pub domain: DomainSpec,
    pub spec: RKHSSpec,
    pub consts: UniversalConstants,
    pub alpha: f64,
    pub alpha_auto: bool,
    pub f: VelocityField,
}

/// Builds domain, noise law, constants, damping, and forcing.
pub fn resolve(cfg: &Config) -> Result<Resolved> {
    let domain = DomainSpec::new(
        cfg.domain_lx,
        cfg.domain_ly,
        cfg.domain_nx,
        cfg.domain_ny,
        cfg.domain_nu,
    )?;
    let law = match cfg.noise_law {
        LawChoice::PowerLaw => SigmaLaw::PowerLaw {
            c: cfg.noise_c,
            gamma: cfg.noise_gamma,
        },
        LawChoice::Table => SigmaLaw::Table(cfg.noise_table.clone()),
    };
    let spec = RKHSSpec {
        law,
        delta: cfg.noise_delta,
        xi: cfg.noise_xi,
    };
    let all_fixed = matches!(
        (cfg.constants_c, cfg.constants_c1, cfg.constants_c2),
        (AutoOr::Fixed(_), AutoOr::Fixed(_), AutoOr::Fixed(_))
    );
    let mut consts = if all_fixed {
        UniversalConstants {
            c: 0.0,
            c1: 0.0,
            c2: 0.0,
        }
    } else {
        estimate_universal_constants(&domain, cfg.constants_samples, cfg.constants_seed)?
    };
    if let AutoOr::Fixed(v) = cfg.constants_c {
        consts.c = v;
    }
    if let AutoOr::Fixed(v) = cfg.constants_c1 {
        consts.c1 = v;
    }
    if let AutoOr::Fixed(v) = cfg.constants_c2 {
        consts.c2 = v;
    }
    let (alpha, alpha_auto) = match cfg.ou_alpha {
        AutoOr::Fixed(a) => (a, false),
        AutoOr::Auto => {
            let sigma = spec.sigmas(&domain)?;
            let a = select_alpha(
                &domain,
                &sigma,
                &consts,
                cfg.ou_mc_samples,
                cfg.noise_seed,
            )?;
            (a as f64, true)
        }
    };
    let f = field_from_modes(&domain, &cfg.solver_f)?;
    Ok(Resolved {
        domain,
        spec,
        consts,
        alpha,
        alpha_auto,
        f,
    })
}

fn field_from_modes(d: &DomainSpec, modes: &[ModeAmp]) -> Result<VelocityField> {
    let mut u = VelocityField::zeros(d);
    for m in modes {
        u.axpy(1.0, &VelocityField::single_mode(d, m.k, m.m, m.amp)?);
    }
    Ok(u)
}

fn solver_config(cfg: &Config, f: VelocityField) -> SolverConfig {
    SolverConfig {
        dt: cfg.solver_dt,
        scheme: cfg.solver_scheme,
        f,
        record_every: cfg.solver_record_every,
    }
}

/// Serialized CSV emission with the configured significant-digit count.
struct Writer {
    dir: PathBuf,
    digits: usize,
}

impl Writer {
    fn num(&self, x: f64) -> String {
        format!("{:.*e}", self.digits - 1, x)
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut out = String::new();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(self.dir.join(name), out)?;
        Ok(())
    }
}

/// Runs the configured experiment, writing artifacts under `out_dir`.
/// Returns the property verdict: `false` maps to exit code 2.
pub fn run(cfg: &Config, out_dir: &Path) -> Result<bool> {
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let resolved = resolve(cfg)?;
    fs::write(out_dir.join("resolved.cfg"), cfg.render())?;
    let w = Writer {
        dir: out_dir.to_path_buf(),
        digits: cfg.output_csv_digits,
    };
    let verdict = match cfg.experiment_kind {
        Kind::Validate => run_validate(cfg, &resolved, &w)?,
        Kind::Simulate => run_simulate(cfg, &resolved, &w)?,
        Kind::Pullback => run_pullback(cfg, &resolved, &w)?,
        Kind::Absorb => run_absorb(cfg, &resolved, &w)?,
        Kind::ClassR => run_class_r(cfg, &resolved, &w)?,
        Kind::NoiseGen => run_noise_gen(cfg, &resolved, &w)?,
    };
    let manifest = format!(
        "kind = {}\nseed = {}\nthreads = {}\nversion = {}\nwall_ms = {}\nverdict = {}\n",
        cfg.experiment_kind.name(),
        cfg.noise_seed,
        rayon::current_num_threads(),
        env!("CARGO_PKG_VERSION"),
        started.elapsed().as_millis(),
        verdict,
    );
    fs::write(out_dir.join("manifest.txt"), manifest)?;
    Ok(verdict)
}

struct Check {
    name: &'static str,
    metric: f64,
    threshold: f64,
    pass: bool,
}

impl Check {
    fn below(name: &'static str, metric: f64, threshold: f64) -> Self {
        Check {
            name,
            metric,
            threshold,
            pass: metric.is_finite() && metric <= threshold,
        }
    }
}

fn write_checks(w: &Writer, name: &str, checks: &[Check]) -> Result<bool> {
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.to_string(),
                w.num(c.metric),
                w.num(c.threshold),
                c.pass.to_string(),
            ]
        })
        .collect();
    w.csv(name, &["check", "metric", "threshold", "pass"], &rows)?;
    Ok(checks.iter().all(|c| c.pass))
}

/// Invariant smoke suite over the configured domain: algebraic identities,
/// the small-cutoff quadrature oracle, stationarity and admissibility.
fn run_validate(cfg: &Config, r: &Resolved, w: &Writer) -> Result<bool> {
    let d = &r.domain;
    let q = Quadrature::default_for(d);
    let mut checks = Vec::new();

    let mut worst_skew = 0.0_f64;
    let mut worst_anti = 0.0_f64;
    for i in 0..40 {
        let u = sample_field(d, cfg.noise_seed ^ 0x51, 3 * i);
        let v = sample_field(d, cfg.noise_seed ^ 0x51, 3 * i + 1);
        let z = sample_field(d, cfg.noise_seed ^ 0x51, 3 * i + 2);
        let scale = h_norm(&u) * v_norm(d, &v) * v_norm(d, &v);
        worst_skew = worst_skew.max(trilinear_form(&u, &v, &v, &q)?.abs() / scale);
        let anti = trilinear_form(&u, &v, &z, &q)? + trilinear_form(&u, &z, &v, &q)?;
        let anti_scale = h_norm(&u) * v_norm(d, &v) * v_norm(d, &z);
        worst_anti = worst_anti.max(anti.abs() / anti_scale);
    }
    checks.push(Check::below("trilinear_skew", worst_skew, 1e-10));
    checks.push(Check::below("trilinear_antisymmetry", worst_anti, 1e-10));

    let d6 = DomainSpec::new(cfg.domain_lx, cfg.domain_ly, 6, 6, cfg.domain_nu)?;
    let q6 = Quadrature::default_for(&d6);
    let mut worst_oracle = 0.0_f64;
    for i in 0..10 {
        let u = sample_field(&d6, cfg.noise_seed ^ 0x52, i);
        let fast = bilinear_form(&u, &u, &q6)?;
        for (j, md) in d6.modes().enumerate() {
            let e = VelocityField::single_mode(&d6, md.k, md.m, 1.0)?;
            let direct = trilinear_form(&u, &u, &e, &q6)?;
            worst_oracle = worst_oracle.max((fast.coeffs[j] - direct).abs());
        }
    }
    checks.push(Check::below("quadrature_oracle_n6", worst_oracle, 1e-10));

    let mut worst_form = 0.0_f64;
    for i in 0..200 {
        let u = sample_field(d, cfg.noise_seed ^ 0x53, i);
        let b = bilinear_form(&u, &u, &q)?;
        let l4sq = l4_norm(&u, &q)?.powi(2);
        worst_form = worst_form.max(vdual_norm(d, &b) / (r.consts.c1 * l4sq));
    }
    checks.push(Check::below("form_bound_ratio", worst_form, 1.0));

    let sigma = r.spec.sigmas(d)?;
    let theory: f64 = d
        .eigenvalues()
        .iter()
        .zip(&sigma)
        .map(|(lam, s)| s * s / (2.0 * (d.nu * lam + r.alpha)))
        .sum();
    let draws = 2000usize;
    let sum: f64 = (0..draws)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let path = sample_path(
                &r.spec,
                d,
                0.0,
                cfg.solver_dt,
                cfg.solver_dt,
                cfg.noise_seed ^ (0x54 + s as u64),
            )?;
            let z = ou_evolve(d, &path, &OUConfig::new(r.alpha)?)?;
            let zf = z.field(d, 0)?;
            Ok(zf.dot(&zf))
        })
        .sum::<Result<f64>>()?;
    let mean = sum / draws as f64;
    checks.push(Check::below(
        "ou_stationary_h2_rel_err",
        (mean - theory).abs() / theory,
        0.15,
    ));

    let path = sample_path(&r.spec, d, -1.0, 1.0, cfg.solver_dt, cfg.noise_seed)?;
    let shift_err = ou_shift_covariance_check(d, &path, &OUConfig::new(r.alpha)?, 0.5)?;
    checks.push(Check::below("ou_shift_covariance", shift_err, 1e-6));

    let zero_z = OUTrajectory::zeros(d, 0.0, 0.2, cfg.solver_dt / 2.0, r.alpha)?;
    let x0 = VelocityField::single_mode(d, 1, 1, 1.0)?;
    let scfg = SolverConfig {
        dt: cfg.solver_dt,
        scheme: Scheme::Etd1,
        f: VelocityField::zeros(d),
        record_every: 1,
    };
    let traj = solve_v(d, &x0, &zero_z, &scfg, 0.0, 0.2)?;
    let vt = h_norm(&traj.final_v(d)?);
    let exact = (-d.nu * d.lambda_1() * 0.2).exp();
    checks.push(Check::below(
        "viscous_decay_rel_err",
        (vt - exact).abs() / exact,
        1e-9,
    ));

    let z = ou_evolve(d, &path, &OUConfig::new(r.alpha)?)?;
    let mut dense = solver_config(cfg, r.f.clone());
    dense.record_every = 1;
    let traj = solve_v(d, &VelocityField::zeros(d), &z, &dense, 0.0, 0.5)?;
    checks.push(Check::below(
        "energy_equality_defect",
        energy_equality_check(d, &traj)?,
        1e-2,
    ));
    let margin = energy_inequality_check(d, &traj, &r.consts)?;
    checks.push(Check::below("energy_inequality_margin", -margin, 1e-6));

    let report = validate_assumption_a1(&r.spec, d)?;
    checks.push(Check::below(
        "assumption_a1",
        if report.admissible { 0.0 } else { 1.0 },
        0.5,
    ));

    write_checks(w, "checks.csv", &checks)
}

/// Solves the transformed equation on `[0, T]` and dumps the trajectory.
/// The solve records every step so the energy validators see the full
/// quadrature grid; the CSV is thinned by `solver.record_every`.
fn run_simulate(cfg: &Config, r: &Resolved, w: &Writer) -> Result<bool> {
    let d = &r.domain;
    let horizon = cfg.experiment_horizon;
    let path = sample_path(&r.spec, d, -1.0, horizon, cfg.solver_dt, cfg.noise_seed)?;
    let z = ou_evolve(d, &path, &OUConfig::new(r.alpha)?)?;
    let x0 = field_from_modes(d, &cfg.experiment_x0)?;
    let mut scfg = solver_config(cfg, r.f.clone());
    scfg.record_every = 1;
    let traj = solve_v(d, &x0, &z, &scfg, 0.0, horizon)?;
    let stride = cfg.solver_record_every.max(1);
    if (traj.n_points - 1) % stride != 0 {
        return Err(Error::InvalidConfig(format!(
            "record_every = {stride} must divide the step count {}",
            traj.n_points - 1
        )));
    }

    let q = Quadrature::default_for(d);
    let mut rows = Vec::with_capacity((traj.n_points - 1) / stride + 1);
    for i in (0..traj.n_points).step_by(stride) {
        let s = &traj.diag[i];
        let zf = traj.z_field(d, i)?;
        rows.push(vec![
            w.num(traj.time(i)),
            w.num(s.h),
            w.num(s.v_norm),
            w.num(s.bracket),
            w.num(s.l4),
            w.num(h_norm(&zf)),
            w.num(l4_norm(&zf, &q)?),
        ]);
    }
    w.csv(
        "trajectory.csv",
        &["time", "v_h", "v_v", "v_bracket", "v_l4", "z_h", "z_l4"],
        &rows,
    )?;

    let checks = [
        Check::below(
            "energy_equality_defect",
            energy_equality_check(d, &traj)?,
            cfg.experiment_eps.max(5e-3),
        ),
        Check::below(
            "energy_inequality_margin",
            -energy_inequality_check(d, &traj, &r.consts)?,
            1e-6,
        ),
    ];
    write_checks(w, "checks.csv", &checks)
}

fn context_for(cfg: &Config, r: &Resolved, t_past: f64, seed: u64) -> Result<CocycleContext> {
    let path = sample_path(&r.spec, &r.domain, t_past, 0.5, cfg.solver_dt, seed)?;
    CocycleContext::new(
        r.domain.clone(),
        r.consts,
        path,
        OUConfig::new(r.alpha)?,
        solver_config(cfg, r.f.clone()),
    )
}

/// Pullback ensembles per schedule lag, compared against the deepest lag.
fn run_pullback(cfg: &Config, r: &Resolved, w: &Writer) -> Result<bool> {
    let radius = RadiusFunction {
        kind: cfg.experiment_radius,
        horizon: cfg.experiment_radius_horizon,
    };
    let deepest = cfg
        .experiment_schedule
        .last()
        .copied()
        .ok_or_else(|| Error::InvalidConfig("experiment.schedule is empty".into()))?;
    let rh = if matches!(cfg.experiment_radius, RadiusKind::Constant(_)) {
        0.0
    } else {
        cfg.experiment_radius_horizon
    };
    let ctx = context_for(cfg, r, -(deepest + rh + 1.0), cfg.noise_seed)?;
    let pcfg = PullbackConfig {
        lags: cfg.experiment_schedule.clone(),
        members: cfg.experiment_members,
        seed: cfg.noise_seed,
        flow: match cfg.experiment_flow {
            FlowChoice::Full => FlowMode::Full,
            FlowChoice::LinearModewise => FlowMode::LinearModewise,
        },
        lowest_mode_only: cfg.experiment_lowest_mode,
        lambda_threshold: cfg.experiment_lambda_factor * r.domain.lambda_1(),
    };
    let report = pullback_omega_limit(&ctx, &RandomBall { radius }, &pcfg)?;

    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|row| {
            vec![
                w.num(row.lag),
                row.members.to_string(),
                w.num(row.semi_to_deepest),
                w.num(row.full_to_deepest),
                w.num(row.h_diameter),
                w.num(row.high_mode_mean),
            ]
        })
        .collect();
    w.csv(
        "pullback.csv",
        &[
            "lag",
            "members",
            "semi_to_deepest",
            "full_to_deepest",
            "h_diameter",
            "high_mode_mean",
        ],
        &rows,
    )?;
    let deepest_snap = report.snapshots.last().expect("nonempty schedule");
    save_ensemble(deepest_snap, &r.domain, &w.dir.join("ensemble.ensb"))?;

    let means: Vec<f64> = report.rows.iter().map(|row| row.high_mode_mean).collect();
    let tau = kendall_tau_vs_index(&means);
    // Distances to the deepest lag, excluding its own zero row; require
    // strict decrease over the second half of the schedule.
    let semi: Vec<f64> = report
        .rows
        .iter()
        .take(report.rows.len() - 1)
        .map(|row| row.semi_to_deepest)
        .collect();
    let k0 = semi.len() / 2;
    let decreasing = semi.windows(2).skip(k0.saturating_sub(1)).all(|p| p[0] > p[1]);
    let checks = [
        Check::below("high_mode_kendall_tau", tau, 0.0),
        Check::below(
            "semi_distance_decreasing_tail",
            if decreasing { 0.0 } else { 1.0 },
            0.5,
        ),
    ];
    write_checks(w, "checks.csv", &checks)
}

/// Absorption experiments across Monte Carlo seeds.
fn run_absorb(cfg: &Config, r: &Resolved, w: &Writer) -> Result<bool> {
    let horizon = cfg.experiment_horizon;
    let reports: Vec<_> = (0..cfg.experiment_seeds)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let seed = cfg.noise_seed + s as u64;
            let ctx = context_for(cfg, r, -(horizon + 1.0), seed)?;
            absorption_check(
                &ctx,
                horizon,
                cfg.experiment_factor,
                cfg.experiment_directions,
                seed,
            )
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .enumerate()
        .map(|(s, rep)| {
            let max_final = rep.final_norms.iter().cloned().fold(0.0_f64, f64::max);
            vec![
                (cfg.noise_seed + s as u64).to_string(),
                w.num(rep.r13),
                w.num(rep.start_radius),
                w.num(rep.t_star),
                w.num(max_final),
                rep.absorbed.to_string(),
            ]
        })
        .collect();
    w.csv(
        "absorb.csv",
        &["seed", "r13", "start_radius", "t_star", "max_final", "absorbed"],
        &rows,
    )?;
    Ok(reports.iter().all(|rep| rep.absorbed))
}

/// Decaying-radius verdicts across Monte Carlo seeds.
fn run_class_r(cfg: &Config, r: &Resolved, w: &Writer) -> Result<bool> {
    let radius = RadiusFunction {
        kind: cfg.experiment_radius,
        horizon: cfg.experiment_radius_horizon,
    };
    let rh = if matches!(cfg.experiment_radius, RadiusKind::Constant(_)) {
        0.0
    } else {
        cfg.experiment_radius_horizon
    };
    let horizon = cfg.experiment_horizon;
    let tables: Vec<DecayTable> = (0..cfg.experiment_seeds)
        .into_par_iter()
        .map(|s| -> Result<DecayTable> {
            let seed = cfg.noise_seed + s as u64;
            let path = sample_path(
                &r.spec,
                &r.domain,
                -(horizon + rh + 0.5),
                0.5,
                cfg.solver_dt,
                seed,
            )?;
            let z = ou_evolve(&r.domain, &path, &OUConfig::new(r.alpha)?)?;
            class_r_decay(
                &radius,
                &r.domain,
                &z,
                &r.consts,
                &r.f,
                horizon,
                cfg.experiment_eps,
            )
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<String>> = tables
        .iter()
        .enumerate()
        .map(|(s, table)| {
            let found = table.first_below();
            vec![
                (cfg.noise_seed + s as u64).to_string(),
                table.verdict.to_string(),
                found.map_or("-1".into(), |t| w.num(t)),
                w.num(*table.log_q.last().expect("nonempty table")),
            ]
        })
        .collect();
    w.csv(
        "classr.csv",
        &["seed", "verdict", "first_below", "log_q_end"],
        &rows,
    )?;

    let table = &tables[0];
    let decay_rows: Vec<Vec<String>> = (0..table.t.len())
        .map(|j| {
            vec![
                w.num(table.t[j]),
                w.num(table.q[j]),
                w.num(table.log_q[j]),
                w.num(table.log_k[j]),
            ]
        })
        .collect();
    w.csv("decay.csv", &["t", "q", "log_q", "log_k"], &decay_rows)?;

    let found = tables.iter().filter(|t| t.verdict).count();
    Ok(found as f64 >= cfg.experiment_success_fraction * tables.len() as f64)
}

/// Samples and persists one noise path plus its transform diagnostics.
fn run_noise_gen(cfg: &Config, r: &Resolved, w: &Writer) -> Result<bool> {
    let horizon = cfg.experiment_horizon;
    let path = sample_path(
        &r.spec,
        &r.domain,
        -horizon,
        horizon,
        cfg.solver_dt,
        cfg.noise_seed,
    )?;
    save_path(&path, &r.spec, &w.dir.join("noise.pnse"))?;
    let diag = ou_scan(&r.domain, &path, &OUConfig::new(r.alpha)?, true, 0)?;
    let g = diag.g_vdual_sq.as_ref().expect("recorded");
    let rows: Vec<Vec<String>> = (0..diag.n_points)
        .map(|i| {
            vec![
                w.num(diag.time(i)),
                w.num(diag.z_h2[i]),
                w.num(diag.z_l4sq[i]),
                w.num(g[i]),
            ]
        })
        .collect();
    w.csv("ou_scan.csv", &["time", "z_h2", "z_l4sq", "g_vdual_sq"], &rows)?;
    Ok(true)
}

/// Dry-run description: spectral summary, damping, constants, and the
/// admissibility verdict. Returns the text and whether the noise passed.
pub fn describe(cfg: &Config) -> Result<(String, bool)> {
    let r = resolve(cfg)?;
    let d = &r.domain;
    let report = validate_assumption_a1(&r.spec, d)?;
    let mut out = String::new();
    out.push_str(&format!(
        "domain: {} x {} modes on {} x {}, nu = {}\n",
        d.nx, d.ny, d.lx, d.ly, d.nu
    ));
    out.push_str(&format!("mode count = {}\n", d.n_modes()));
    out.push_str(&format!("lambda_1 = {:.12}\n", d.lambda_1()));
    out.push_str(&format!(
        "alpha = {}{}\n",
        r.alpha,
        if r.alpha_auto { " (auto)" } else { "" }
    ));
    out.push_str(&format!(
        "theta_min = {:.12}\n",
        d.nu * d.lambda_1() + r.alpha
    ));
    out.push_str(&format!(
        "constants: C = {:.6}, C1 = {:.6}, C2 = {:.6}\n",
        r.consts.c, r.consts.c1, r.consts.c2
    ));
    out.push_str(&format!(
        "assumption A1: {}\n",
        if report.admissible { "PASS" } else { "FAIL" }
    ));
    Ok((out, report.admissible))
}
