//! The random dynamical system over the noise shift: the solution map,
//! reconstruction of the untransformed solution, and cocycle verification.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::ou::{ou_evolve, OUConfig, OUTrajectory};
use crate::solver::{solve_v, SolverConfig, Trajectory};
use crate::spectral::nonlinear::UniversalConstants;
use crate::spectral::norms::h_norm;
use crate::spectral::{DomainSpec, VelocityField};

/// Shared immutable ingredients of the solution map: one noise realisation,
/// the transform parameters and the solver setup. Shifted transform
/// trajectories are cached per shift offset; the stationary initial draw is
/// keyed to absolute time, so every cached trajectory agrees bitwise with
/// the base one where windows overlap.
pub struct CocycleContext {
    pub domain: DomainSpec,
    pub consts: UniversalConstants,
    pub path: NoisePath,
    pub ou: OUConfig,
    pub solver: SolverConfig,
    cache: RwLock<HashMap<i64, Arc<OUTrajectory>>>,
}

impl CocycleContext {
    pub fn new(
        domain: DomainSpec,
        consts: UniversalConstants,
        path: NoisePath,
        ou: OUConfig,
        solver: SolverConfig,
    ) -> Result<Self> {
        path.check_domain(&domain)?;
        solver.f.check_domain(&domain)?;
        let ratio = (solver.dt / path.dt).round();
        if ratio < 1.0 || (solver.dt - ratio * path.dt).abs() > crate::noise::GRID_TOL * solver.dt
        {
            return Err(Error::OffGrid {
                value: solver.dt,
                dt: path.dt,
                tol: crate::noise::GRID_TOL,
            });
        }
        Ok(CocycleContext {
            domain,
            consts,
            path,
            ou,
            solver,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Transform trajectory on the path shifted by `steps` grid steps,
    /// cached read-through; the first writer wins and later callers share it.
    pub fn z_shifted(&self, steps: i64) -> Result<Arc<OUTrajectory>> {
        if let Some(z) = self.cache.read().unwrap().get(&steps) {
            return Ok(z.clone());
        }
        let shifted = self.path.shift_path(steps as f64 * self.path.dt)?;
        let z = Arc::new(ou_evolve(&self.domain, &shifted, &self.ou)?);
        let mut guard = self.cache.write().unwrap();
        Ok(guard.entry(steps).or_insert(z).clone())
    }

    fn shift_steps(&self, shift: f64) -> Result<i64> {
        crate::noise::snap_to_grid(shift, self.path.dt)
    }

    /// Solution map as a recorded trajectory: transformed solve over the
    /// local window `[0, t]` of the shifted noise, from `x - z(0)`.
    /// Records only the endpoints unless `record_every` is given.
    pub fn phi_trajectory(
        &self,
        t: f64,
        shift: f64,
        x: &VelocityField,
        record_every: Option<usize>,
    ) -> Result<(Trajectory, Arc<OUTrajectory>)> {
        if t < 0.0 {
            return Err(Error::InvalidConfig("duration must be >= 0".into()));
        }
        let z = self.z_shifted(self.shift_steps(shift)?)?;
        let z0 = z.field(&self.domain, z.grid_index(0.0)?)?;
        let v0 = x.sub(&z0);
        let n_steps = (t / self.solver.dt).round() as usize;
        let mut cfg = self.solver.clone();
        cfg.record_every = record_every.unwrap_or(n_steps.max(1));
        let traj = solve_v(&self.domain, &v0, &z, &cfg, 0.0, t)?;
        Ok((traj, z))
    }

    /// Solution map `phi(t, shifted noise, x)`; the value at local time `t`.
    pub fn phi(&self, t: f64, shift: f64, x: &VelocityField) -> Result<VelocityField> {
        let (traj, z) = self.phi_trajectory(t, shift, x, None)?;
        let mut u = traj.final_v(&self.domain)?;
        u.axpy(1.0, &z.field(&self.domain, z.grid_index(t)?)?);
        Ok(u)
    }

    /// Untransformed solution `u(t, s; u0)` integrated on the unshifted
    /// window: transformed solve from `u0 - z(s)` over `[s, t]`, plus `z(t)`.
    /// Agrees with `phi(t - s, shift = s, u0)`; the two code paths perform
    /// identical arithmetic because shifted trajectories are bit-stable.
    pub fn reconstruct_u(&self, t: f64, s: f64, u0: &VelocityField) -> Result<VelocityField> {
        if t < s {
            return Err(Error::InvalidConfig("need s <= t".into()));
        }
        let z = self.z_shifted(0)?;
        let zs = z.field(&self.domain, z.grid_index(s)?)?;
        let v0 = u0.sub(&zs);
        let n_steps = ((t - s) / self.solver.dt).round() as usize;
        let mut cfg = self.solver.clone();
        cfg.record_every = n_steps.max(1);
        let traj = solve_v(&self.domain, &v0, &z, &cfg, s, t)?;
        let mut u = traj.final_v(&self.domain)?;
        u.axpy(1.0, &z.field(&self.domain, z.grid_index(t)?)?);
        Ok(u)
    }

    /// H-norm relative error of the cocycle identity
    /// `phi(t + s, base) = phi(t, shift s) . phi(s, base)` at `x`.
    pub fn cocycle_check(&self, t: f64, s: f64, x: &VelocityField) -> Result<f64> {
        let whole = self.phi(t + s, 0.0, x)?;
        let inner = self.phi(s, 0.0, x)?;
        let composed = self.phi(t, s, &inner)?;
        let scale = h_norm(&whole).max(1e-30);
        Ok(h_norm(&whole.sub(&composed)) / scale)
    }
}
