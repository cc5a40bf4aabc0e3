//! Two-sided mode-diagonal Wiener paths.
//!
//! A path lives on a uniform grid `t = step * dt` over a window
//! `[t_past, t_future]` containing 0 and is anchored by `w(0) = 0`. Values
//! are never stored: per-mode increments are either regenerated on demand
//! from a counter RNG keyed by `(seed, mode, raw step index)` or read from a
//! stored block, so the time shift acts by pure reindexing and shifted paths
//! reproduce the base increments bit-exactly.

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::norms::{e_norm, x_norm};
use crate::spectral::{DomainSpec, Quadrature, VelocityField};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Relative tolerance for snapping times onto the step grid.
pub const GRID_TOL: f64 = 1e-9;

/// Per-mode noise amplitudes: a spectral power law or an explicit table
/// ordered like `DomainSpec::modes`.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaLaw {
    PowerLaw { c: f64, gamma: f64 },
    Table(Vec<f64>),
}

/// Covariance structure of the driving noise plus the smoothing exponent
/// `delta` of the embedding space and the Holder exponent `xi` of the path
/// topology.
#[derive(Debug, Clone, PartialEq)]
pub struct RKHSSpec {
    pub law: SigmaLaw,
    pub delta: f64,
    pub xi: f64,
}

/// Outcome of the admissibility check: the analytic verdict for the full
/// series sum sigma_j^2 lambda_j^(-2 delta) and the truncated partial sum.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Series exponent `2 gamma + 2 delta` for power laws; tables are
    /// finitely supported and always admissible.
    pub exponent: Option<f64>,
    pub partial_sum: f64,
}

impl RKHSSpec {
    pub fn power_law(c: f64, gamma: f64, delta: f64, xi: f64) -> Self {
        RKHSSpec {
            law: SigmaLaw::PowerLaw { c, gamma },
            delta,
            xi,
        }
    }

    /// Per-mode amplitudes in `DomainSpec::modes` order.
    pub fn sigmas(&self, d: &DomainSpec) -> Result<Vec<f64>> {
        match &self.law {
            SigmaLaw::PowerLaw { c, gamma } => Ok(d
                .modes()
                .map(|md| c * d.lambda(md.k, md.m).powf(-gamma))
                .collect()),
            SigmaLaw::Table(t) => {
                if t.len() != d.n_modes() {
                    return Err(Error::InvalidConfig(format!(
                        "sigma table has {} entries, domain retains {} modes",
                        t.len(),
                        d.n_modes()
                    )));
                }
                Ok(t.clone())
            }
        }
    }

    /// Structural validation: exponent ranges, nonnegative amplitudes, at
    /// least one active mode.
    pub fn validate(&self, d: &DomainSpec) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 1/2), got {}",
                self.delta
            )));
        }
        if !(self.xi > self.delta && self.xi < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "xi must lie in (delta, 1/2) = ({}, 0.5), got {}",
                self.delta, self.xi
            )));
        }
        if let SigmaLaw::PowerLaw { c, gamma } = self.law {
            if !(c > 0.0) || !(gamma >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "power law needs c > 0 and gamma >= 0, got c={c}, gamma={gamma}"
                )));
            }
        }
        let s = self.sigmas(d)?;
        if s.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InadmissibleNoise(
                "negative or NaN sigma entry".into(),
            ));
        }
        if !s.iter().any(|v| *v > 0.0) {
            return Err(Error::InadmissibleNoise("all sigma entries vanish".into()));
        }
        Ok(())
    }
}

/// Analytic admissibility of sum sigma_j^2 lambda_j^(-2 delta) over the full
/// mode lattice, alongside the retained-cutoff partial sum. Power laws with
/// lambda ~ k^2 + m^2 converge iff `2 gamma + 2 delta > 1`; explicit tables
/// are finite sums.
pub fn validate_assumption_a1(spec: &RKHSSpec, d: &DomainSpec) -> Result<AdmissibilityReport> {
    spec.validate(d)?;
    let sig = spec.sigmas(d)?;
    let partial: f64 = d
        .modes()
        .zip(&sig)
        .map(|(md, s)| s * s * d.lambda(md.k, md.m).powf(-2.0 * spec.delta))
        .sum();
    Ok(match spec.law {
        SigmaLaw::PowerLaw { gamma, .. } => {
            let exponent = 2.0 * gamma + 2.0 * spec.delta;
            AdmissibilityReport {
                admissible: exponent > 1.0,
                exponent: Some(exponent),
                partial_sum: partial,
            }
        }
        SigmaLaw::Table(_) => AdmissibilityReport {
            admissible: true,
            exponent: None,
            partial_sum: partial,
        },
    })
}

#[derive(Debug, Clone)]
enum PathSource {
    Generated {
        seed: u64,
    },
    /// Increment block covering raw steps `[first_raw, first_raw + rows)`,
    /// time-major: `data[row * n_modes + mode]`, already sigma sqrt(dt)
    /// scaled.
    Stored {
        first_raw: i64,
        data: Arc<Vec<f64>>,
    },
}

/// Lazy two-sided Wiener path on a uniform grid. Grid point `i` is time
/// `(start_step + i) * dt` for `i in 0..=n_steps`; the increment of local
/// step `i` maps to raw Wiener interval `start_step + i + raw_offset`, so
/// shifting slides both the window and the raw offset without touching any
/// random draw.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub nx: usize,
    pub ny: usize,
    pub sigma: Vec<f64>,
    pub delta: f64,
    pub xi: f64,
    pub dt: f64,
    pub start_step: i64,
    pub n_steps: usize,
    pub raw_offset: i64,
    pub seed: u64,
    source: PathSource,
}

pub(crate) fn snap_to_grid(t: f64, dt: f64) -> Result<i64> {
    let s = (t / dt).round();
    if (t - s * dt).abs() > GRID_TOL * t.abs().max(1.0) {
        return Err(Error::OffGrid {
            value: t,
            dt,
            tol: GRID_TOL,
        });
    }
    Ok(s as i64)
}

/// Samples a lazy path over `[t_past, t_future]` (both grid multiples of
/// `dt`, window containing 0). Rejects inadmissible specs.
pub fn sample_path(
    spec: &RKHSSpec,
    d: &DomainSpec,
    t_past: f64,
    t_future: f64,
    dt: f64,
    seed: u64,
) -> Result<NoisePath> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if !(t_past <= 0.0 && t_future >= 0.0 && t_past < t_future) {
        return Err(Error::InvalidConfig(format!(
            "window [{t_past}, {t_future}] must contain 0 with positive length"
        )));
    }
    let report = validate_assumption_a1(spec, d)?;
    if !report.admissible {
        return Err(Error::InadmissibleNoise(format!(
            "series exponent {:?} requires 2 gamma + 2 delta > 1",
            report.exponent
        )));
    }
    let start = snap_to_grid(t_past, dt)?;
    let stop = snap_to_grid(t_future, dt)?;
    Ok(NoisePath {
        nx: d.nx,
        ny: d.ny,
        sigma: spec.sigmas(d)?,
        delta: spec.delta,
        xi: spec.xi,
        dt,
        start_step: start,
        n_steps: (stop - start) as usize,
        raw_offset: 0,
        seed,
        source: PathSource::Generated { seed },
    })
}

/// Wraps an explicit increment block (time-major, sigma sqrt(dt) scaled) as
/// a path; used for degenerate or replayed noise.
pub fn stored_path(
    spec: &RKHSSpec,
    d: &DomainSpec,
    t_past: f64,
    t_future: f64,
    dt: f64,
    data: Vec<f64>,
) -> Result<NoisePath> {
    spec.validate(d)?;
    let start = snap_to_grid(t_past, dt)?;
    let stop = snap_to_grid(t_future, dt)?;
    let n_steps = (stop - start) as usize;
    if data.len() != n_steps * d.n_modes() {
        return Err(Error::InvalidConfig(format!(
            "increment block holds {} values, window needs {} steps x {} modes",
            data.len(),
            n_steps,
            d.n_modes()
        )));
    }
    Ok(NoisePath {
        nx: d.nx,
        ny: d.ny,
        sigma: spec.sigmas(d)?,
        delta: spec.delta,
        xi: spec.xi,
        dt,
        start_step: start,
        n_steps,
        raw_offset: 0,
        seed: 0,
        source: PathSource::Stored {
            first_raw: start,
            data: Arc::new(data),
        },
    })
}

impl NoisePath {
    pub fn n_modes(&self) -> usize {
        self.sigma.len()
    }

    pub fn t_past(&self) -> f64 {
        self.start_step as f64 * self.dt
    }

    pub fn t_future(&self) -> f64 {
        (self.start_step + self.n_steps as i64) as f64 * self.dt
    }

    /// Time of grid point `i`.
    pub fn time(&self, i: usize) -> f64 {
        (self.start_step + i as i64) as f64 * self.dt
    }

    /// Grid point index of time `t`; errors off-grid or outside the window.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let s = snap_to_grid(t, self.dt)?;
        if s < self.start_step || s > self.start_step + self.n_steps as i64 {
            return Err(Error::WindowExceeded {
                want_lo: t,
                want_hi: t,
                have_lo: self.t_past(),
                have_hi: self.t_future(),
            });
        }
        Ok((s - self.start_step) as usize)
    }

    /// Verifies the path was sampled at this domain's cutoff.
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

    /// Writes the per-mode increments of local step `i` (the interval from
    /// grid point `i` to `i + 1`) into `out`.
    pub fn increment_into(&self, i: usize, out: &mut [f64]) {
        assert!(i < self.n_steps, "step {i} outside 0..{}", self.n_steps);
        assert_eq!(out.len(), self.n_modes());
        let raw = self.start_step + i as i64 + self.raw_offset;
        match &self.source {
            PathSource::Generated { seed } => {
                let sqdt = self.dt.sqrt();
                let idx = rng::signed_index(raw);
                for (j, o) in out.iter_mut().enumerate() {
                    *o = self.sigma[j]
                        * sqdt
                        * rng::standard_normal(
                            *seed,
                            rng::stream_id(rng::TAG_INCREMENT, j as u64, 0),
                            idx,
                            0,
                        );
                }
            }
            PathSource::Stored { first_raw, data } => {
                let row = (raw - first_raw) as usize;
                out.copy_from_slice(&data[row * out.len()..(row + 1) * out.len()]);
            }
        }
    }

    /// Increments of local step `i` as a fresh vector.
    pub fn increment(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_modes()];
        self.increment_into(i, &mut out);
        out
    }

    /// Path values `w(t_i)` for the (sorted, deduplicated) grid indices,
    /// anchored by `w(0) = 0`; one streaming pass over the increments.
    pub fn values_at(&self, idxs: &[usize]) -> Result<Vec<Vec<f64>>> {
        let zero = self.grid_index(0.0)?;
        let n = self.n_modes();
        let hi = idxs.iter().copied().max().unwrap_or(0).max(zero);
        let mut running = vec![0.0; n];
        let mut inc = vec![0.0; n];
        let mut snaps: Vec<Vec<f64>> = Vec::with_capacity(idxs.len());
        let mut at_zero = vec![0.0; n];
        let mut cursor = 0usize;
        for i in 0..=hi {
            if i == zero {
                at_zero.copy_from_slice(&running);
            }
            while cursor < idxs.len() && idxs[cursor] == i {
                snaps.push(running.clone());
                cursor += 1;
            }
            if i < hi {
                self.increment_into(i, &mut inc);
                for (r, d) in running.iter_mut().zip(&inc) {
                    *r += d;
                }
            }
        }
        for s in &mut snaps {
            for (v, z) in s.iter_mut().zip(&at_zero) {
                *v -= *z;
            }
        }
        Ok(snaps)
    }

    /// Value at a single grid index, anchored by `w(0) = 0`.
    pub fn value_at(&self, idx: usize) -> Result<Vec<f64>> {
        Ok(self.values_at(&[idx])?.pop().unwrap())
    }

    /// Wiener shift by a grid-multiple `s`: the result satisfies
    /// `shifted(t) = self(t + s) - self(s)` with window `[t_past - s,
    /// t_future - s]`, reusing the identical raw increments.
    pub fn shift_path(&self, s: f64) -> Result<NoisePath> {
        let steps = snap_to_grid(s, self.dt)?;
        let mut out = self.clone();
        out.start_step -= steps;
        out.raw_offset += steps;
        Ok(out)
    }
}

/// Embedding-space norm |A^(-delta) u| measured in the max of the H and L4
/// norms.
fn embed_norm(d: &DomainSpec, q: &Quadrature, coeffs: &[f64], delta: f64) -> Result<f64> {
    let u = VelocityField::from_coeffs(d, coeffs.to_vec())?;
    e_norm(d, &u, delta, q)
}

fn strided_indices(n_steps: usize, stride: usize) -> Vec<usize> {
    let s = stride.max(1);
    let mut idxs: Vec<usize> = (0..=n_steps).step_by(s).collect();
    if *idxs.last().unwrap() != n_steps {
        idxs.push(n_steps);
    }
    idxs
}

/// Discrete weighted Holder seminorm: sup over grid pairs `t != s` of
/// `|w(t) - w(s)|_E / (|t-s|^xi (1 + |t| + |s|)^(1/2))`. `stride`
/// subsamples the grid (always keeping both endpoints), trading sharpness
/// for the O(pairs) cost; the subsampled value never exceeds the full one.
pub fn path_norm_holder(w: &NoisePath, d: &DomainSpec, xi: f64, stride: usize) -> Result<f64> {
    if !(0.0..0.5).contains(&xi) {
        return Err(Error::InvalidConfig(format!(
            "holder exponent must lie in [0, 1/2), got {xi}"
        )));
    }
    w.check_domain(d)?;
    let q = Quadrature::default_for(d);
    let idxs = strided_indices(w.n_steps, stride);
    let vals = w.values_at(&idxs)?;
    let n = w.n_modes();
    let mut best = 0.0_f64;
    let mut diff = vec![0.0; n];
    for a in 0..idxs.len() {
        let ta = w.time(idxs[a]);
        for b in a + 1..idxs.len() {
            let tb = w.time(idxs[b]);
            for j in 0..n {
                diff[j] = vals[b][j] - vals[a][j];
            }
            let num = embed_norm(d, &q, &diff, w.delta)?;
            let den = (tb - ta).abs().powf(xi) * (1.0 + ta.abs() + tb.abs()).sqrt();
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Discrete half-growth norm: sup over grid points of
/// `|w(t)|_E / (1 + |t|^(1/2))`, subsampled like `path_norm_holder`.
pub fn path_norm_halfgrowth(w: &NoisePath, d: &DomainSpec, stride: usize) -> Result<f64> {
    w.check_domain(d)?;
    let q = Quadrature::default_for(d);
    let idxs = strided_indices(w.n_steps, stride);
    let vals = w.values_at(&idxs)?;
    let mut best = 0.0_f64;
    for (i, v) in idxs.iter().zip(&vals) {
        let t = w.time(*i);
        best = best.max(embed_norm(d, &q, v, w.delta)? / (1.0 + t.abs().sqrt()));
    }
    Ok(best)
}

/// Measures a coefficient snapshot in the max of H and L4 norms; the scalar
/// companion of `embed_norm` at `delta = 0`.
pub fn snapshot_x_norm(d: &DomainSpec, q: &Quadrature, coeffs: &[f64]) -> Result<f64> {
    let u = VelocityField::from_coeffs(d, coeffs.to_vec())?;
    x_norm(&u, q)
}

const MAGIC: &[u8; 4] = b"PNSE";
const VERSION: u32 = 1;

pub(crate) fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated path file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    /// Rejects trailing bytes once a parse claims to be complete.
    pub(crate) fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("trailing bytes after {what}")));
        }
        Ok(())
    }
}

/// Serializes the path (header plus mode-major increment block) so that a
/// reload reproduces the exposed window bit-exactly.
pub fn save_path(w: &NoisePath, spec: &RKHSSpec, file: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_f64(&mut buf, w.t_past());
    put_f64(&mut buf, w.t_future());
    put_f64(&mut buf, w.dt);
    put_u32(&mut buf, w.nx as u32);
    put_u32(&mut buf, w.ny as u32);
    put_u64(&mut buf, w.seed);
    match &spec.law {
        SigmaLaw::PowerLaw { c, gamma } => {
            buf.push(0u8);
            put_f64(&mut buf, *c);
            put_f64(&mut buf, *gamma);
            put_f64(&mut buf, spec.delta);
            put_f64(&mut buf, spec.xi);
        }
        SigmaLaw::Table(t) => {
            buf.push(1u8);
            put_f64(&mut buf, spec.delta);
            put_f64(&mut buf, spec.xi);
            put_u32(&mut buf, t.len() as u32);
            for v in t {
                put_f64(&mut buf, *v);
            }
        }
    }
    put_u64(&mut buf, w.n_steps as u64);
    let n = w.n_modes();
    let mut block = vec![0.0_f64; w.n_steps * n];
    let mut inc = vec![0.0; n];
    for i in 0..w.n_steps {
        w.increment_into(i, &mut inc);
        for j in 0..n {
            block[j * w.n_steps + i] = inc[j];
        }
    }
    for v in &block {
        put_f64(&mut buf, *v);
    }
    let mut f = std::fs::File::create(file)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Loads a PNSE v1 file as a stored path (offset 0, window as saved). The
/// header carries only the cutoff, so the caller's domain supplies the mode
/// geometry; a cutoff mismatch is rejected.
pub fn load_path(file: &Path, d: &DomainSpec) -> Result<(NoisePath, RKHSSpec)> {
    let mut buf = Vec::new();
    std::fs::File::open(file)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected PNSE".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let t_past = r.f64()?;
    let t_future = r.f64()?;
    let dt = r.f64()?;
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
    let seed = r.u64()?;
    let kind = r.u8()?;
    let spec = match kind {
        0 => {
            let c = r.f64()?;
            let gamma = r.f64()?;
            let delta = r.f64()?;
            let xi = r.f64()?;
            RKHSSpec::power_law(c, gamma, delta, xi)
        }
        1 => {
            let delta = r.f64()?;
            let xi = r.f64()?;
            let len = r.u32()? as usize;
            let mut t = Vec::with_capacity(len);
            for _ in 0..len {
                t.push(r.f64()?);
            }
            RKHSSpec {
                law: SigmaLaw::Table(t),
                delta,
                xi,
            }
        }
        k => return Err(Error::Format(format!("unknown spec kind {k}"))),
    };
    let n_steps = r.u64()? as usize;
    let n = d.n_modes();
    let mut block = vec![0.0_f64; n_steps * n];
    for j in 0..n {
        for i in 0..n_steps {
            block[i * n + j] = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after increment block".into()));
    }
    let start = snap_to_grid(t_past, dt)?;
    let stop = snap_to_grid(t_future, dt)?;
    if (stop - start) as usize != n_steps {
        return Err(Error::Format("header window disagrees with step count".into()));
    }
    let sigma = spec.sigmas(&d)?;
    Ok((
        NoisePath {
            nx,
            ny,
            sigma,
            delta: spec.delta,
            xi: spec.xi,
            dt,
            start_step: start,
            n_steps,
            raw_offset: 0,
            seed,
            source: PathSource::Stored {
                first_raw: start,
                data: Arc::new(block),
            },
        },
        spec,
    ))
}
