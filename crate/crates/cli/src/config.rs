//! Line-oriented experiment configuration.
//!
//! Files hold one `section.key = value` assignment per line; `#` starts a
//! comment. Unknown keys and malformed values are rejected with their line
//! number. Every run writes the fully resolved configuration back out, and
//! feeding that file in again reproduces the run byte for byte.

use snse_core::attractor::RadiusKind;
use snse_core::solver::Scheme;
use snse_core::{Error, Result};

/// Experiment selected by the subcommand or `experiment.kind`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Validate,
    Simulate,
    Pullback,
    Absorb,
    ClassR,
    NoiseGen,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Simulate => "simulate",
            Kind::Pullback => "pullback",
            Kind::Absorb => "absorb",
            Kind::ClassR => "classR",
            Kind::NoiseGen => "noise-gen",
        }
    }
}

/// Noise amplitude law over the retained modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawChoice {
    PowerLaw,
    Table,
}

/// A value that is either selected automatically or pinned in config.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AutoOr {
    Auto,
    Fixed(f64),
}

/// One spectral coefficient assignment `k,m,amp` of a field spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeAmp {
    pub k: usize,
    pub m: usize,
    pub amp: f64,
}

/// Ensemble flow used by the pullback experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowChoice {
    Full,
    LinearModewise,
}

/// Fully resolved configuration; `Default` supplies every value.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub domain_lx: f64,
    pub domain_ly: f64,
    pub domain_nx: usize,
    pub domain_ny: usize,
    pub domain_nu: f64,

    pub noise_law: LawChoice,
    pub noise_c: f64,
    pub noise_gamma: f64,
    pub noise_table: Vec<f64>,
    pub noise_delta: f64,
    pub noise_xi: f64,
    pub noise_seed: u64,

    pub ou_alpha: AutoOr,
    pub ou_mc_samples: usize,

    pub constants_c: AutoOr,
    pub constants_c1: AutoOr,
    pub constants_c2: AutoOr,
    pub constants_samples: usize,
    pub constants_seed: u64,

    pub solver_dt: f64,
    pub solver_scheme: Scheme,
    pub solver_f: Vec<ModeAmp>,
    pub solver_record_every: usize,

    pub experiment_kind: Kind,
    pub experiment_horizon: f64,
    pub experiment_schedule: Vec<f64>,
    pub experiment_members: usize,
    pub experiment_radius: RadiusKind,
    pub experiment_radius_horizon: f64,
    pub experiment_eps: f64,
    pub experiment_factor: f64,
    pub experiment_directions: usize,
    pub experiment_seeds: usize,
    pub experiment_success_fraction: f64,
    pub experiment_x0: Vec<ModeAmp>,
    pub experiment_flow: FlowChoice,
    pub experiment_lowest_mode: bool,
    pub experiment_lambda_factor: f64,

    pub output_directory: String,
    pub output_csv_digits: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            domain_lx: 1.0,
            domain_ly: 1.0,
            domain_nx: 16,
            domain_ny: 16,
            domain_nu: 1.0,
            noise_law: LawChoice::PowerLaw,
            noise_c: 2.0,
            noise_gamma: 1.0,
            noise_table: Vec::new(),
            noise_delta: 0.25,
            noise_xi: 0.3,
            noise_seed: 42,
            ou_alpha: AutoOr::Auto,
            ou_mc_samples: 2000,
            constants_c: AutoOr::Auto,
            constants_c1: AutoOr::Auto,
            constants_c2: AutoOr::Auto,
            constants_samples: 1000,
            constants_seed: 7,
            solver_dt: 1e-3,
            solver_scheme: Scheme::Etd1,
            solver_f: vec![ModeAmp {
                k: 1,
                m: 2,
                amp: 0.3,
            }],
            solver_record_every: 10,
            experiment_kind: Kind::Validate,
            experiment_horizon: 10.0,
            experiment_schedule: vec![0.005, 0.02, 0.05, 0.2, 0.5, 1.0],
            experiment_members: 8,
            experiment_radius: RadiusKind::R13,
            experiment_radius_horizon: 10.0,
            experiment_eps: 1e-6,
            experiment_factor: 10.0,
            experiment_directions: 4,
            experiment_seeds: 1,
            experiment_success_fraction: 0.95,
            experiment_x0: Vec::new(),
            experiment_flow: FlowChoice::Full,
            experiment_lowest_mode: false,
            experiment_lambda_factor: 4.0,
            output_directory: "runs".into(),
            output_csv_digits: 17,
        }
    }
}

impl Config {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {line_no}: expected 'section.key = value'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.contains(&key.to_string()) {
                return Err(Error::InvalidConfig(format!(
                    "line {line_no}: duplicate key '{key}'"
                )));
            }
            seen.push(key.to_string());
            cfg.assign(key, value)
                .map_err(|e| Error::InvalidConfig(format!("line {line_no}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override (the `--set` flag).
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override '{pair}': expected key=value"))
        })?;
        self.assign(key.trim(), value.trim())
            .map_err(|e| Error::InvalidConfig(format!("override '{pair}': {e}")))
    }

    fn assign(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "domain.lx" => self.domain_lx = float(key, value)?,
            "domain.ly" => self.domain_ly = float(key, value)?,
            "domain.nx" => self.domain_nx = integer(key, value)?,
            "domain.ny" => self.domain_ny = integer(key, value)?,
            "domain.nu" => self.domain_nu = float(key, value)?,
            "noise.law" => {
                self.noise_law = match value {
                    "powerlaw" => LawChoice::PowerLaw,
                    "table" => LawChoice::Table,
                    other => return Err(format!("{key}: unknown law '{other}'")),
                }
            }
            "noise.c" => self.noise_c = float(key, value)?,
            "noise.gamma" => self.noise_gamma = float(key, value)?,
            "noise.table" => self.noise_table = float_list(key, value)?,
            "noise.delta" => self.noise_delta = float(key, value)?,
            "noise.xi" => self.noise_xi = float(key, value)?,
            "noise.seed" => self.noise_seed = unsigned(key, value)?,
            "ou.alpha" => self.ou_alpha = auto_or(key, value)?,
            "ou.mc_samples" => self.ou_mc_samples = integer(key, value)?,
            "constants.c" => self.constants_c = auto_or(key, value)?,
            "constants.c1" => self.constants_c1 = auto_or(key, value)?,
            "constants.c2" => self.constants_c2 = auto_or(key, value)?,
            "constants.samples" => self.constants_samples = integer(key, value)?,
            "constants.seed" => self.constants_seed = unsigned(key, value)?,
            "solver.dt" => self.solver_dt = float(key, value)?,
            "solver.scheme" => {
                self.solver_scheme = match value {
                    "etd1" => Scheme::Etd1,
                    "imex-cnab" => Scheme::ImexCnab,
                    "rk4-reference" => Scheme::Rk4Reference,
                    other => return Err(format!("{key}: unknown scheme '{other}'")),
                }
            }
            "solver.f" => self.solver_f = mode_list(key, value)?,
            "solver.record_every" => self.solver_record_every = integer(key, value)?,
            "experiment.kind" => {
                self.experiment_kind = match value {
                    "validate" => Kind::Validate,
                    "simulate" => Kind::Simulate,
                    "pullback" => Kind::Pullback,
                    "absorb" => Kind::Absorb,
                    "classR" => Kind::ClassR,
                    "noise-gen" => Kind::NoiseGen,
                    other => return Err(format!("{key}: unknown kind '{other}'")),
                }
            }
            "experiment.horizon" => self.experiment_horizon = float(key, value)?,
            "experiment.schedule" => self.experiment_schedule = float_list(key, value)?,
            "experiment.members" => self.experiment_members = integer(key, value)?,
            "experiment.radius" => self.experiment_radius = radius(key, value)?,
            "experiment.radius_horizon" => self.experiment_radius_horizon = float(key, value)?,
            "experiment.eps" => self.experiment_eps = float(key, value)?,
            "experiment.factor" => self.experiment_factor = float(key, value)?,
            "experiment.directions" => self.experiment_directions = integer(key, value)?,
            "experiment.seeds" => self.experiment_seeds = integer(key, value)?,
            "experiment.success_fraction" => {
                self.experiment_success_fraction = float(key, value)?
            }
            "experiment.x0" => self.experiment_x0 = mode_list(key, value)?,
            "experiment.flow" => {
                self.experiment_flow = match value {
                    "full" => FlowChoice::Full,
                    "linear-modewise" => FlowChoice::LinearModewise,
                    other => return Err(format!("{key}: unknown flow '{other}'")),
                }
            }
            "experiment.lowest_mode" => {
                self.experiment_lowest_mode = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(format!("{key}: expected true or false, got '{other}'")),
                }
            }
            "experiment.lambda_factor" => self.experiment_lambda_factor = float(key, value)?,
            "output.directory" => self.output_directory = value.to_string(),
            "output.csv_digits" => {
                let d = integer(key, value)?;
                if !(1..=17).contains(&d) {
                    return Err(format!("{key}: digits must lie in 1..=17, got {d}"));
                }
                self.output_csv_digits = d;
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Renders the fully resolved configuration; parsing it back yields an
    /// identical `Config`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("domain.lx", fmt_f64(self.domain_lx));
        put("domain.ly", fmt_f64(self.domain_ly));
        put("domain.nx", self.domain_nx.to_string());
        put("domain.ny", self.domain_ny.to_string());
        put("domain.nu", fmt_f64(self.domain_nu));
        put(
            "noise.law",
            match self.noise_law {
                LawChoice::PowerLaw => "powerlaw".into(),
                LawChoice::Table => "table".into(),
            },
        );
        put("noise.c", fmt_f64(self.noise_c));
        put("noise.gamma", fmt_f64(self.noise_gamma));
        if !self.noise_table.is_empty() {
            put("noise.table", fmt_list(&self.noise_table));
        }
        put("noise.delta", fmt_f64(self.noise_delta));
        put("noise.xi", fmt_f64(self.noise_xi));
        put("noise.seed", self.noise_seed.to_string());
        put("ou.alpha", fmt_auto(self.ou_alpha));
        put("ou.mc_samples", self.ou_mc_samples.to_string());
        put("constants.c", fmt_auto(self.constants_c));
        put("constants.c1", fmt_auto(self.constants_c1));
        put("constants.c2", fmt_auto(self.constants_c2));
        put("constants.samples", self.constants_samples.to_string());
        put("constants.seed", self.constants_seed.to_string());
        put("solver.dt", fmt_f64(self.solver_dt));
        put(
            "solver.scheme",
            match self.solver_scheme {
                Scheme::Etd1 => "etd1".into(),
                Scheme::ImexCnab => "imex-cnab".into(),
                Scheme::Rk4Reference => "rk4-reference".into(),
            },
        );
        put("solver.f", fmt_modes(&self.solver_f));
        put("solver.record_every", self.solver_record_every.to_string());
        put("experiment.kind", self.experiment_kind.name().into());
        put("experiment.horizon", fmt_f64(self.experiment_horizon));
        put("experiment.schedule", fmt_list(&self.experiment_schedule));
        put("experiment.members", self.experiment_members.to_string());
        put("experiment.radius", fmt_radius(self.experiment_radius));
        put(
            "experiment.radius_horizon",
            fmt_f64(self.experiment_radius_horizon),
        );
        put("experiment.eps", fmt_f64(self.experiment_eps));
        put("experiment.factor", fmt_f64(self.experiment_factor));
        put(
            "experiment.directions",
            self.experiment_directions.to_string(),
        );
        put("experiment.seeds", self.experiment_seeds.to_string());
        put(
            "experiment.success_fraction",
            fmt_f64(self.experiment_success_fraction),
        );
        put("experiment.x0", fmt_modes(&self.experiment_x0));
        put(
            "experiment.flow",
            match self.experiment_flow {
                FlowChoice::Full => "full".into(),
                FlowChoice::LinearModewise => "linear-modewise".into(),
            },
        );
        put(
            "experiment.lowest_mode",
            self.experiment_lowest_mode.to_string(),
        );
        put(
            "experiment.lambda_factor",
            fmt_f64(self.experiment_lambda_factor),
        );
        put("output.directory", self.output_directory.clone());
        put("output.csv_digits", self.output_csv_digits.to_string());
        s
    }
}

fn float(key: &str, v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>()
        .map_err(|_| format!("{key}: invalid number '{v}'"))
}

fn integer(key: &str, v: &str) -> std::result::Result<usize, String> {
    v.parse::<usize>()
        .map_err(|_| format!("{key}: invalid integer '{v}'"))
}

fn unsigned(key: &str, v: &str) -> std::result::Result<u64, String> {
    v.parse::<u64>()
        .map_err(|_| format!("{key}: invalid integer '{v}'"))
}

fn auto_or(key: &str, v: &str) -> std::result::Result<AutoOr, String> {
    if v == "auto" {
        Ok(AutoOr::Auto)
    } else {
        Ok(AutoOr::Fixed(float(key, v)?))
    }
}

fn float_list(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| float(key, x.trim())).collect()
}

/// `none` or `k,m,amp` triples joined by `;`.
fn mode_list(key: &str, v: &str) -> std::result::Result<Vec<ModeAmp>, String> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(';')
        .map(|triple| {
            let parts: Vec<&str> = triple.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(format!("{key}: expected 'k,m,amp', got '{triple}'"));
            }
            Ok(ModeAmp {
                k: integer(key, parts[0])?,
                m: integer(key, parts[1])?,
                amp: float(key, parts[2])?,
            })
        })
        .collect()
}

fn radius(key: &str, v: &str) -> std::result::Result<RadiusKind, String> {
    if let Some(c) = v.strip_prefix("constant:") {
        return Ok(RadiusKind::Constant(float(key, c)?));
    }
    Ok(match v {
        "r1" => RadiusKind::R1,
        "r2" => RadiusKind::R2,
        "r3" => RadiusKind::R3,
        "r4" => RadiusKind::R4,
        "r5" => RadiusKind::R5,
        "r11" => RadiusKind::R11,
        "r12" => RadiusKind::R12,
        "r13" => RadiusKind::R13,
        other => return Err(format!("{key}: unknown radius '{other}'")),
    })
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_auto(a: AutoOr) -> String {
    match a {
        AutoOr::Auto => "auto".into(),
        AutoOr::Fixed(x) => fmt_f64(x),
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|&x| fmt_f64(x))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_modes(ms: &[ModeAmp]) -> String {
    if ms.is_empty() {
        return "none".into();
    }
    ms.iter()
        .map(|m| format!("{},{},{}", m.k, m.m, fmt_f64(m.amp)))
        .collect::<Vec<_>>()
        .join(";")
}

fn fmt_radius(r: RadiusKind) -> String {
    match r {
        RadiusKind::Constant(c) => format!("constant:{}", fmt_f64(c)),
        RadiusKind::R1 => "r1".into(),
        RadiusKind::R2 => "r2".into(),
        RadiusKind::R3 => "r3".into(),
        RadiusKind::R4 => "r4".into(),
        RadiusKind::R5 => "r5".into(),
        RadiusKind::R11 => "r11".into(),
        RadiusKind::R12 => "r12".into(),
        RadiusKind::R13 => "r13".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_render() {
        let cfg = Config::default();
        let text = cfg.render();
        let back = Config::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = Config::parse("domain.nx = 8\nbogus.key = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("bogus.key"), "{err}");

        let err = Config::parse("domain.nx = eight").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");

        let err = Config::parse("domain.nx = 8\ndomain.nx = 9").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = Config::parse("domain.nx 8").unwrap_err();
        assert!(err.to_string().contains("expected"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = Config::parse("# header\n\ndomain.nx = 8 # trailing\n").unwrap();
        assert_eq!(cfg.domain_nx, 8);
    }

    #[test]
    fn overrides_apply_after_file() {
        let mut cfg = Config::parse("solver.dt = 1e-3").unwrap();
        cfg.apply_override("solver.dt=5e-4").unwrap();
        assert_eq!(cfg.solver_dt, 5e-4);
        assert!(cfg.apply_override("no-equals").is_err());
        assert!(cfg.apply_override("bogus.key=1").is_err());
    }

    #[test]
    fn field_specs_parse_both_ways() {
        let mut cfg = Config::default();
        cfg.assign("solver.f", "1,2,0.4;2,1,-0.25").unwrap();
        assert_eq!(cfg.solver_f.len(), 2);
        assert_eq!(cfg.solver_f[1].amp, -0.25);
        cfg.assign("solver.f", "none").unwrap();
        assert!(cfg.solver_f.is_empty());
        assert!(cfg.assign("solver.f", "1,2").is_err());

        cfg.assign("experiment.radius", "constant:2.5").unwrap();
        assert_eq!(cfg.experiment_radius, RadiusKind::Constant(2.5));
        cfg.assign("experiment.radius", "r2").unwrap();
        assert_eq!(cfg.experiment_radius, RadiusKind::R2);
        assert!(cfg.assign("experiment.radius", "r99").is_err());
    }
}
