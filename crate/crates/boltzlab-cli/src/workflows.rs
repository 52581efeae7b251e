//! The four subcommands as library functions.

use std::fs;
use std::path::{Path, PathBuf};

use boltzlab::estimates::{verify_standard_ensemble, ExponentSet, InequalityReport};
use boltzlab::grid::mass;
use boltzlab::singularity::{
    boundedness_criterion, failed_balls, ladder_estimate, riccati_guard, GuardVerdict, LadderReport, PowerLawProfile,
};
use boltzlab::solver::{RunOutput, Solver};
use boltzlab::{Density, Error as LibError};
use serde::Serialize;

use crate::config::{InitialKind, RunConfig, SeriesSource};
use crate::output;

/// Failure of a workflow, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Domain(_) => 1,
            RunError::Config(_) => 2,
        }
    }
}

impl From<LibError> for RunError {
    fn from(e: LibError) -> Self {
        RunError::Domain(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Domain(format!("i/o: {e}"))
    }
}

fn prepare_dir(dir: &Path) -> Result<PathBuf, RunError> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

pub fn initial_density(cfg: &RunConfig) -> Result<Density, LibError> {
    let grid = cfg.velocity_grid()?;
    let init = &cfg.initial;
    let zero = vec![0.0; grid.dim()];
    match init.kind {
        InitialKind::Maxwellian => Density::maxwellian(grid, init.mass, init.temperature, &zero),
        InitialKind::Bimodal => {
            let mut shift = zero.clone();
            shift[0] = init.separation;
            let a = Density::maxwellian(grid, 0.5 * init.mass, init.temperature, &shift)?;
            shift[0] = -init.separation;
            let b = Density::maxwellian(grid, 0.5 * init.mass, init.temperature, &shift)?;
            Density::new(grid, a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect())
        }
    }
}

/// Builds the solver, treating a violated step restriction as a
/// configuration error.
pub fn build_solver(cfg: &RunConfig) -> Result<(Solver, Density), RunError> {
    let initial = initial_density(cfg).map_err(|e| RunError::Config(format!("initial: {e}")))?;
    let sc = cfg.solver_config().map_err(|e| RunError::Config(e.to_string()))?;
    let solver = Solver::new(*initial.grid(), sc).map_err(|e| RunError::Config(e.to_string()))?;
    let bound = solver.workspace().bound();
    solver
        .config()
        .check_step(bound, mass(&initial))
        .map_err(|e| RunError::Config(format!("solver.dt: {e}")))?;
    Ok((solver, initial))
}

pub fn run_solver(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let (solver, initial) = build_solver(cfg)?;
    Ok(solver.run(&initial)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub steps: usize,
    pub outputs: usize,
    pub mass_drift: f64,
    pub entropy_variation: f64,
    pub entropy_increase: f64,
    /// `max_t (E(t) − E(0) − 2dεM₀t)`.
    pub energy_excess: f64,
    pub step_bound: f64,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulationSummary, RunError> {
    let dir = prepare_dir(out)?;
    let (solver, initial) = build_solver(cfg)?;
    let run = solver.run(&initial)?;
    let series = &run.series;
    let m0 = mass(&initial);
    let summary = SimulationSummary {
        steps: solver.config().steps(),
        outputs: series.records.len(),
        mass_drift: series.mass_drift(),
        entropy_variation: series.entropy_variation(),
        entropy_increase: series.entropy_increase(),
        energy_excess: series.energy_excess(cfg.kernel.dim, cfg.solver.epsilon, m0),
        step_bound: solver.workspace().bound(),
    };
    output::write_diagnostics(&dir.join("diagnostics.csv"), cfg, series)?;
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    for (k, snap) in run.snapshots.iter().enumerate() {
        output::write_snapshot(&snaps.join(format!("snapshot_{k:04}.csv")), cfg, snap)?;
    }
    output::write_json(&dir.join("summary.json"), "simulate", cfg, &summary)?;
    Ok(summary)
}

/// Writes one report per inequality id and returns them.
pub fn verify(cfg: &RunConfig, out: &Path) -> Result<Vec<InequalityReport>, RunError> {
    let dir = prepare_dir(out)?;
    let suite = cfg.suite_config().map_err(|e| RunError::Config(e.to_string()))?;
    let reports = verify_standard_ensemble(&suite)?;
    for r in &reports {
        output::write_json(
            &dir.join(format!("inequality-{}.json", r.inequality_id)),
            "verify-inequalities",
            cfg,
            r,
        )?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord {
    pub center: f64,
    pub radius: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub radius: f64,
    pub windows: usize,
    pub failed: usize,
    pub selected: usize,
    pub budget: f64,
    pub cover_length: f64,
}

/// The verdict file: the finest ladder level in full, plus the ladder.
#[derive(Debug, Clone, Serialize)]
pub struct SingularVerdict {
    pub windows: Vec<WindowRecord>,
    pub cover: Vec<(f64, f64)>,
    pub exponent_e: f64,
    pub budget: f64,
    pub certified_dimension_bound: Option<f64>,
    pub verdict: String,
    pub budget_cap: f64,
    pub budget_slope: f64,
    pub ladder: Vec<LevelSummary>,
    pub guard: GuardVerdict,
    pub samples: usize,
}

/// The series of `∫φ_κ(f(t))` the detection runs on, with the `p` of `φ_κ`.
pub fn detection_series(cfg: &RunConfig) -> Result<(Vec<f64>, Vec<f64>, f64), RunError> {
    let d = &cfg.detect;
    let p = cfg.exponents.p;
    match d.source {
        SeriesSource::Synthetic => {
            let rp = cfg.riccati_params().map_err(|e| RunError::Config(e.to_string()))?;
            let profile = PowerLawProfile {
                singular_times: d.singular_times.clone(),
                amplitude: d.amplitude_factor * rp.eta() * rp.exponent(),
                width: d.width,
                base: d.base,
            };
            let (t, v) = profile.series(d.horizon, d.samples, p, rp.p_alpha);
            Ok((t, v, p))
        }
        SeriesSource::Csv => {
            let path = d.series_path.as_deref().unwrap_or_default();
            let (t, v) = output::read_series(Path::new(path)).map_err(RunError::Config)?;
            Ok((t, v, p))
        }
        SeriesSource::Simulate => {
            let run = run_solver(cfg)?;
            let t = run.series.times();
            let v = run.series.records.iter().map(|r| r.truncated_integrals[0]).collect();
            Ok((t, v, cfg.truncations[0][0]))
        }
    }
}

pub fn detect_on_series(cfg: &RunConfig, times: &[f64], values: &[f64], p: f64) -> Result<SingularVerdict, RunError> {
    let d = &cfg.detect;
    let rp = cfg.riccati_params().map_err(|e| RunError::Config(e.to_string()))?;
    let x: Vec<f64> = values.iter().map(|v| v.powf(1.0 / p)).collect();
    let guard = riccati_guard(times, &x, &rp)?;
    let total: f64 = times
        .windows(2)
        .zip(x.windows(2))
        .map(|(t, x)| 0.5 * (t[1] - t[0]) * (x[0] + x[1]))
        .sum();
    let budget_cap = total / rp.eta();
    let mut finest = Vec::new();
    let mut counts = Vec::new();
    let report: LadderReport = ladder_estimate(d.r0, d.levels, rp.exponent(), Some(budget_cap), |r| {
        let windows = boundedness_criterion(times, values, p, &rp, d.kappa0, r)?;
        counts.push(windows.len());
        let failed = failed_balls(&windows);
        finest = windows;
        Ok(failed)
    })?;
    let last = report.levels.last().expect("ladder has at least one level");
    Ok(SingularVerdict {
        windows: finest
            .iter()
            .map(|w| WindowRecord {
                center: w.center,
                radius: w.radius,
                certified: w.certified,
            })
            .collect(),
        cover: last.estimate.cover.clone(),
        exponent_e: report.exponent_e,
        budget: last.estimate.budget,
        certified_dimension_bound: report.certified_dimension_bound,
        verdict: report.verdict.clone(),
        budget_cap,
        budget_slope: report.budget_slope,
        ladder: report
            .levels
            .iter()
            .zip(&counts)
            .map(|(l, &n)| LevelSummary {
                radius: l.radius,
                windows: n,
                failed: l.failed,
                selected: l.estimate.selected.len(),
                budget: l.estimate.budget,
                cover_length: l.estimate.cover_length(),
            })
            .collect(),
        guard,
        samples: times.len(),
    })
}

pub fn detect(cfg: &RunConfig, out: &Path) -> Result<SingularVerdict, RunError> {
    let dir = prepare_dir(out)?;
    let (times, values, p) = detection_series(cfg)?;
    let verdict = detect_on_series(cfg, &times, &values, p)?;
    output::write_series(&dir.join("series.csv"), cfg, &times, &values)?;
    output::write_json(&dir.join("singular-set.json"), "detect-singular", cfg, &verdict)?;
    Ok(verdict)
}

/// Plain-text table of the derived exponents.
pub fn exponent_table(es: &ExponentSet) -> String {
    let rows: [(&str, f64); 20] = [
        ("d", es.dim as f64),
        ("gamma", es.gamma),
        ("s", es.s),
        ("p", es.p),
        ("eps_interp", es.eps_interp),
        ("p_lower", es.p_lower),
        ("p_upper", es.p_upper),
        ("p0", es.p0),
        ("k0", es.k0),
        ("q1", es.q1),
        ("beta", es.beta),
        ("beta_eps", es.beta_eps),
        ("theta_p", es.theta_p),
        ("alpha_p", es.alpha_p),
        ("alpha_p_bar", es.alpha_p_bar),
        ("iota", es.iota),
        ("r_p", es.r_p),
        ("alpha0", es.alpha0()),
        ("covering_exponent", es.covering_exponent()),
        (
            "target_dimension",
            boltzlab::estimates::target_dimension(es.gamma, es.s),
        ),
    ];
    let mut table = format!("# schema_version={}\n", output::SCHEMA_VERSION);
    table.push_str(&format!("{:<20} {:>22}\n", "quantity", "value"));
    for (name, value) in rows {
        table.push_str(&format!("{name:<20} {value:>22.15}\n"));
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use boltzlab::grid::mass_momentum_energy;

    #[test]
    fn bimodal_initial_state_is_symmetric() {
        let mut cfg = RunConfig::default();
        cfg.grid.points = 24;
        cfg.initial.kind = InitialKind::Bimodal;
        cfg.initial.temperature = 1.0;
        let f = initial_density(&cfg).unwrap();
        let h = mass_momentum_energy(&f);
        assert!((h.mass - 1.0).abs() < 1e-6);
        assert!(h.momentum.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn oversized_step_is_a_configuration_error() {
        let mut cfg = RunConfig::default();
        cfg.grid.points = 8;
        cfg.solver.dt = 100.0;
        let err = build_solver(&cfg).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn synthetic_detection_finds_the_planted_times() {
        let mut cfg = RunConfig::default();
        cfg.detect.samples = 8000;
        cfg.detect.r0 = 0.04;
        cfg.detect.levels = 3;
        let (t, v, p) = detection_series(&cfg).unwrap();
        let verdict = detect_on_series(&cfg, &t, &v, p).unwrap();
        assert_eq!(verdict.cover.len(), 3);
        for (&tau, piece) in cfg.detect.singular_times.iter().zip(&verdict.cover) {
            assert!(piece.0 < tau && tau < piece.1);
        }
        assert!(verdict.certified_dimension_bound.is_some());
        assert!(verdict.budget <= verdict.budget_cap);
    }

    #[test]
    fn exponent_table_lists_every_quantity() {
        let cfg = RunConfig::default();
        let table = exponent_table(&cfg.exponent_set().unwrap());
        assert!(table.contains("theta_p") && table.contains("covering_exponent"));
        assert_eq!(table.lines().count(), 22);
    }
}
