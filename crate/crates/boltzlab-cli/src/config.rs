//! The run configuration file and its validation.

use std::fmt;
use std::path::Path;

use boltzlab::collision::{CollisionConfig, Interpolation};
use boltzlab::estimates::{exponents, ExponentSet, LowerBoundSettings, SuiteConfig, DEFAULT_EPS_INTERP};
use boltzlab::singularity::RiccatiParams;
use boltzlab::solver::SolverConfig;
use boltzlab::{Error as LibError, KernelParams, VelocityGrid};
use serde::{Deserialize, Serialize};

/// A violated constraint together with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Why a configuration could not be used.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Workflow {
    #[default]
    Simulate,
    VerifyInequalities,
    DetectSingular,
    Exponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub dim: usize,
    pub gamma: f64,
    pub s: f64,
    pub b0: f64,
    pub n: f64,
    pub main_theorem_mode: bool,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            dim: 2,
            gamma: -1.2,
            s: 0.45,
            b0: 0.1,
            n: 2.0,
            main_theorem_mode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Half side `L` of the velocity box `[-L, L]^d`.
    pub half_width: f64,
    /// Nodes per axis `N`.
    pub points: usize,
    /// Angular nodes `M` of the collision operator.
    pub angular_nodes: usize,
    pub interpolation: Interpolation,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            points: 32,
            angular_nodes: 32,
            interpolation: Interpolation::LogCubic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub epsilon: f64,
    pub dt: f64,
    pub horizon: f64,
    pub tol_fp: f64,
    pub max_iterations: usize,
    pub output_every: usize,
    pub conservative: bool,
    pub monotone_tolerance: f64,
    pub record_dissipation: bool,
    pub weighted_norms: Vec<[f64; 2]>,
    pub moments: Vec<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            dt: 0.05,
            horizon: 0.5,
            tol_fp: 1e-11,
            max_iterations: 200,
            output_every: 1,
            conservative: true,
            monotone_tolerance: 1e-6,
            record_dissipation: true,
            weighted_norms: Vec::new(),
            moments: vec![2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    #[default]
    Maxwellian,
    Bimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub mass: f64,
    /// Temperature of the Maxwellian, or of each bump of the bimodal state.
    pub temperature: f64,
    /// The bimodal bumps sit at `±separation` on the first axis.
    pub separation: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: InitialKind::Maxwellian,
            mass: 1.0,
            temperature: 2.0,
            separation: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExponentSection {
    pub p: f64,
    pub eps_interp: f64,
}

impl Default for ExponentSection {
    fn default() -> Self {
        Self {
            p: 1.5,
            eps_interp: DEFAULT_EPS_INTERP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub half_width: f64,
    pub points: usize,
    pub kappa: f64,
    pub kappa0: f64,
    pub first_lower_weight: f64,
    pub holder_triples: usize,
    pub angular_nodes: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let lb = LowerBoundSettings::default();
        Self {
            half_width: 5.0,
            points: 24,
            kappa: 1.0,
            kappa0: lb.kappa0,
            first_lower_weight: lb.first_lower_weight,
            holder_triples: 50,
            angular_nodes: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesSource {
    /// Power-law profile with planted singular times.
    #[default]
    Synthetic,
    /// Two-column CSV file `time,phi_integral`.
    Csv,
    /// The first truncated integral of a solver run.
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiSection {
    pub c: f64,
    pub d: f64,
    pub delta: f64,
    pub iota: f64,
    pub kappa: f64,
}

impl Default for RiccatiSection {
    fn default() -> Self {
        Self {
            c: 1.0,
            d: 0.0,
            delta: 0.5,
            iota: 0.5,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub source: SeriesSource,
    pub series_path: Option<String>,
    pub singular_times: Vec<f64>,
    /// Power-law amplitude in units of `η·e`.
    pub amplitude_factor: f64,
    /// Cut-off width of each planted profile.
    pub width: f64,
    pub base: f64,
    pub samples: usize,
    pub horizon: f64,
    pub riccati: RiccatiSection,
    pub kappa0: f64,
    pub r0: f64,
    pub levels: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            source: SeriesSource::Synthetic,
            series_path: None,
            singular_times: vec![0.25037, 0.50071, 0.75013],
            amplitude_factor: 4.0,
            width: 0.1,
            base: 1e-3,
            samples: 20000,
            horizon: 1.0,
            riccati: RiccatiSection::default(),
            kappa0: 1.0,
            r0: 0.02,
            levels: 6,
        }
    }
}

/// Everything a run needs. Missing keys take the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub workflow: Workflow,
    pub seed: u64,
    pub output_dir: String,
    pub kernel: KernelSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub initial: InitialSection,
    /// `(p, κ)` pairs for the recorded `∫φ_κ(f)`.
    pub truncations: Vec<[f64; 2]>,
    pub exponents: ExponentSection,
    pub verify: VerifySection,
    pub detect: DetectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workflow: Workflow::Simulate,
            seed: 2024,
            output_dir: "out".to_string(),
            kernel: KernelSection::default(),
            grid: GridSection::default(),
            solver: SolverSection::default(),
            initial: InitialSection::default(),
            truncations: vec![[1.5, 1.0]],
            exponents: ExponentSection::default(),
            verify: VerifySection::default(),
            detect: DetectSection::default(),
        }
    }
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        path: path.into(),
        message: message.into(),
    }
}

fn from_lib(section: &str, err: LibError) -> Violation {
    match err {
        LibError::InvalidParameter { name, reason } => violation(format!("{section}.{name}"), reason),
        LibError::InadmissibleExponent { .. } => violation(format!("{section}.p"), err.to_string()),
        other => violation(section, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kernel_params(&self) -> Result<KernelParams, LibError> {
        let k = &self.kernel;
        let kp = KernelParams::new(k.dim, k.gamma, k.s, k.b0, k.n)?;
        if k.main_theorem_mode {
            kp.in_main_theorem_mode()
        } else {
            Ok(kp)
        }
    }

    pub fn velocity_grid(&self) -> Result<VelocityGrid, LibError> {
        VelocityGrid::new(self.kernel.dim, self.grid.half_width, self.grid.points)
    }

    pub fn exponent_set(&self) -> Result<ExponentSet, LibError> {
        let k = &self.kernel;
        exponents(k.dim, k.gamma, k.s, self.exponents.p, self.exponents.eps_interp)
    }

    pub fn solver_config(&self) -> Result<SolverConfig, LibError> {
        let s = &self.solver;
        let mut sc = SolverConfig::new(self.kernel_params()?, s.epsilon, s.dt, s.horizon);
        sc.tol_fp = s.tol_fp;
        sc.max_iterations = s.max_iterations;
        sc.output_every = s.output_every;
        sc.conservative = s.conservative;
        sc.monotone_tolerance = s.monotone_tolerance;
        sc.record_dissipation = s.record_dissipation;
        sc.collision = CollisionConfig {
            angular_nodes: self.grid.angular_nodes,
            interpolation: self.grid.interpolation,
            ..CollisionConfig::default()
        };
        sc.truncations = self.truncations.iter().map(|t| (t[0], t[1])).collect();
        sc.weighted_norms = s.weighted_norms.iter().map(|t| (t[0], t[1])).collect();
        sc.moments = s.moments.clone();
        Ok(sc)
    }

    pub fn suite_config(&self) -> Result<SuiteConfig, LibError> {
        let v = &self.verify;
        let mut sc = SuiteConfig::new(self.kernel_params()?, self.exponents.p);
        sc.half_width = v.half_width;
        sc.points = v.points;
        sc.eps_interp = self.exponents.eps_interp;
        sc.kappa = v.kappa;
        sc.lower_bounds = LowerBoundSettings {
            first_lower_weight: v.first_lower_weight,
            kappa0: v.kappa0,
        };
        sc.seed = self.seed;
        sc.holder_triples = v.holder_triples;
        sc.angular_nodes = v.angular_nodes;
        Ok(sc)
    }

    /// `pα = α₀ p`, so that `1 − 1/(pα)` is the covering exponent.
    pub fn p_alpha(&self) -> Result<f64, LibError> {
        let es = self.exponent_set()?;
        Ok(es.alpha0() * es.p)
    }

    pub fn riccati_params(&self) -> Result<RiccatiParams, LibError> {
        let r = &self.detect.riccati;
        RiccatiParams::new(r.c, r.d, self.p_alpha()?, r.delta, r.iota, r.kappa)
    }

    /// Collects every violated constraint rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut out = Vec::new();
        let kernel_ok = match self.kernel_params() {
            Ok(_) => true,
            Err(e) => {
                out.push(from_lib("kernel", e));
                false
            }
        };
        if let Err(e) = self.velocity_grid() {
            out.push(violation("grid", e.to_string()));
        }
        if self.grid.angular_nodes < 2 {
            out.push(violation("grid.angular_nodes", "need at least two angular nodes"));
        }
        if kernel_ok {
            if let Err(e) = self.exponent_set() {
                out.push(from_lib("exponents", e));
            }
            if let Err(e) = self.solver_config().and_then(|sc| sc.validate()) {
                let section = match &e {
                    LibError::InvalidParameter { name, .. } if *name == "truncations" => "",
                    LibError::InvalidParameter { name, .. } if matches!(*name, "p" | "kappa") => "truncations",
                    _ => "solver",
                };
                let mut v = from_lib(section, e);
                v.path = v.path.trim_start_matches('.').to_string();
                out.push(v);
            }
        }
        let init = &self.initial;
        if !(init.mass > 0.0 && init.mass.is_finite()) {
            out.push(violation("initial.mass", "mass must be positive"));
        }
        if !(init.temperature > 0.0 && init.temperature.is_finite()) {
            out.push(violation("initial.temperature", "temperature must be positive"));
        }
        if !init.separation.is_finite() {
            out.push(violation("initial.separation", "separation must be finite"));
        }
        let v = &self.verify;
        if !(v.half_width > 0.0) || v.points < 4 {
            out.push(violation(
                "verify",
                "ensemble grid needs half_width > 0 and at least 4 points",
            ));
        }
        if !(v.kappa > 0.0) {
            out.push(violation("verify.kappa", "κ must be positive"));
        }
        if !(v.kappa0 > 0.0) {
            out.push(violation("verify.kappa0", "κ₀ must be positive"));
        }
        self.validate_detect(kernel_ok, &mut out);
        if out.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(out))
        }
    }

    fn validate_detect(&self, kernel_ok: bool, out: &mut Vec<Violation>) {
        let d = &self.detect;
        if kernel_ok && self.exponent_set().is_ok() {
            if let Err(e) = self.riccati_params() {
                out.push(from_lib("detect.riccati", e));
            }
        }
        if !(d.r0 > 0.0) || d.levels == 0 {
            out.push(violation("detect.r0", "need r0 > 0 and at least one ladder level"));
        }
        if !(d.kappa0 >= 1.0) {
            out.push(violation("detect.kappa0", "κ₀ must be at least 1"));
        }
        match d.source {
            SeriesSource::Csv if d.series_path.is_none() => {
                out.push(violation("detect.series_path", "required when source = \"csv\""));
            }
            SeriesSource::Simulate if self.truncations.is_empty() => {
                out.push(violation(
                    "truncations",
                    "source = \"simulate\" needs at least one truncation",
                ));
            }
            SeriesSource::Synthetic => {
                if !(d.horizon > 0.0) || d.samples < 2 {
                    out.push(violation(
                        "detect.horizon",
                        "need a positive horizon and at least two samples",
                    ));
                }
                if !(d.width > 0.0) {
                    out.push(violation("detect.width", "cut-off width must be positive"));
                }
                if !(d.amplitude_factor >= 0.0 && d.base >= 0.0) {
                    out.push(violation(
                        "detect.amplitude_factor",
                        "amplitude and base must be nonnegative",
                    ));
                }
                let step = d.horizon / d.samples.max(1) as f64;
                for (k, &tau) in d.singular_times.iter().enumerate() {
                    let offset = tau / step;
                    if !(tau > 0.0 && tau < d.horizon) || (offset - offset.round()).abs() < 1e-9 {
                        out.push(violation(
                            format!("detect.singular_times[{k}]"),
                            "must lie strictly inside (0, horizon) and off the sample grid",
                        ));
                    }
                }
            }
            _ => {}
        }
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    RunConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(err: ConfigError) -> Vec<String> {
        err.violations().iter().map(|v| v.path.clone()).collect()
    }

    #[test]
    fn empty_file_takes_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg = RunConfig::from_toml("seed = 7\n[grid]\npoints = 16\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grid.points, 16);
        assert_eq!(cfg.grid.half_width, 8.0);
    }

    #[test]
    fn gamma_below_minus_d_is_named() {
        let err = RunConfig::from_toml("[kernel]\ngamma = -3.0\n").unwrap_err();
        let v = &err.violations()[0];
        assert_eq!(v.path, "kernel.gamma");
        assert!(v.message.contains("γ > −d violated"), "{}", v.message);
    }

    #[test]
    fn inadmissible_p_names_the_interval() {
        let err = RunConfig::from_toml("[exponents]\np = 3.0\n").unwrap_err();
        let v = &err.violations()[0];
        assert_eq!(v.path, "exponents.p");
        let (lo, hi) = boltzlab::estimates::admissible_interval(2, -1.2, 0.45);
        assert!(v.message.contains(&format!("({lo}, {hi})")), "{}", v.message);
    }

    #[test]
    fn several_violations_are_collected() {
        let text = "[solver]\ndt = -1.0\n[initial]\nmass = 0.0\n[detect]\nr0 = 0.0\n";
        let found = paths(RunConfig::from_toml(text).unwrap_err());
        assert!(found.contains(&"solver.dt".to_string()), "{found:?}");
        assert!(found.contains(&"initial.mass".to_string()));
        assert!(found.contains(&"detect.r0".to_string()));
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_parse_errors() {
        assert!(matches!(
            RunConfig::from_toml("[kernel]\ngama = 1\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(RunConfig::from_toml("seed = = 1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn csv_source_needs_a_path_and_planted_times_avoid_samples() {
        let found = paths(RunConfig::from_toml("[detect]\nsource = \"csv\"\n").unwrap_err());
        assert_eq!(found, vec!["detect.series_path"]);
        let found = paths(RunConfig::from_toml("[detect]\nsingular_times = [0.5]\n").unwrap_err());
        assert_eq!(found, vec!["detect.singular_times[0]"]);
    }

    #[test]
    fn main_theorem_mode_is_checked() {
        let err = RunConfig::from_toml("[kernel]\nmain_theorem_mode = true\ngamma = -0.5\n").unwrap_err();
        assert!(err.violations().iter().any(|v| v.path == "kernel.gamma"));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}
