//! Batch front end: named scenario runs, the disturbance-resistance sweep
//! and plot generation. Everything writes into a caller-chosen output
//! directory and nowhere else.

pub mod plots;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use stride_core::sim::{
    simulate, DisturbanceSchedule, PlantKind, RunSummary, ScenarioConfig, SimError, TrajectoryLog,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario '{0}' not found (no such file, and no built-in config)")]
    UnknownScenario(String),
    #[error("sim error: {0}")]
    Sim(#[from] SimError),
    #[error("plot error: {0}")]
    Plot(#[from] plots::PlotError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

/// Locate a scenario: a literal path first, then `configs/<name>.toml`
/// next to the working directory or the repository root.
pub fn resolve_scenario(spec: &str) -> Result<PathBuf, HarnessError> {
    let direct = PathBuf::from(spec);
    if direct.is_file() {
        return Ok(direct);
    }
    for base in [".", "..", "../.."] {
        let candidate = Path::new(base).join("configs").join(format!("{spec}.toml"));
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(HarnessError::UnknownScenario(spec.to_string()))
}

pub fn load_scenario(spec: &str) -> Result<ScenarioConfig, HarnessError> {
    let path = resolve_scenario(spec)?;
    let text = fs::read_to_string(&path)?;
    let mut cfg = ScenarioConfig::from_toml(&text)?;
    // Model paths in configs are repository-relative; resolve against the
    // config file location when not found as written.
    if !Path::new(&cfg.model_path).is_file() {
        if let Some(parent) = path.parent() {
            let candidate = parent.join("..").join(&cfg.model_path);
            if candidate.is_file() {
                cfg.model_path = candidate.to_string_lossy().into_owned();
            }
        }
    }
    Ok(cfg)
}

/// Artifacts of one scenario run.
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub log: TrajectoryLog,
    pub out_dir: PathBuf,
}

/// Run a scenario and write the trajectory CSV, a TOML summary and the
/// standard SVG plots into `out_dir`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    plant_override: Option<PlantKind>,
    seed_override: Option<u64>,
) -> Result<RunArtifacts, HarnessError> {
    let mut cfg = cfg.clone();
    if let Some(p) = plant_override {
        cfg.plant = p;
    }
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    cfg.validate()?;

    let log = simulate(&cfg)?;
    let window = (0.25 * cfg.duration, cfg.duration);
    let summary = log.summary(window);

    fs::create_dir_all(out_dir)?;
    let mut csv = fs::File::create(out_dir.join("trajectory.csv"))?;
    log.write_csv(&mut csv)?;

    let mut summary_file = fs::File::create(out_dir.join("summary.toml"))?;
    let text = toml::to_string_pretty(&summary).map_err(|e| HarnessError::Config(e.to_string()))?;
    summary_file.write_all(text.as_bytes())?;

    for (name, svg) in plots::scenario_plots(&log)? {
        fs::write(out_dir.join(name), svg)?;
    }

    Ok(RunArtifacts { summary, log, out_dir: out_dir.to_path_buf() })
}

/// Re-render plots from an existing trajectory CSV.
pub fn emit_plots(log_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let file = fs::File::open(log_path)?;
    let log = TrajectoryLog::read_csv(std::io::BufReader::new(file))?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, svg) in plots::scenario_plots(&log)? {
        let path = out_dir.join(name);
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

/// Axis description of the sweep grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.step <= 0.0 {
            return out;
        }
        let mut v = self.min;
        while v <= self.max + 1e-9 {
            out.push(v);
            v += self.step;
        }
        out
    }
}

/// Declarative sweep description (TOML file for the CLI).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Scenario name or path providing the base configuration.
    pub base: String,
    pub fx: AxisSpec,
    pub tau_y: AxisSpec,
    /// When the disturbance window starts (s).
    #[serde(default = "default_start")]
    pub start: f64,
    /// Disturbance window length (s).
    #[serde(default = "default_window")]
    pub window: f64,
    /// Settle time simulated after the window before declaring survival.
    #[serde(default = "default_settle")]
    pub settle: f64,
}

fn default_start() -> f64 {
    1.0
}
fn default_window() -> f64 {
    2.5
}
fn default_settle() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Survived,
    Fell(String),
    SolverFailed,
}

/// Grid of per-cell outcomes plus headline metrics.
#[derive(Clone, Debug, Serialize)]
pub struct SweepGrid {
    pub fx_values: Vec<f64>,
    pub ty_values: Vec<f64>,
    /// `outcomes[i][j]` for `fx_values[i]`, `ty_values[j]`.
    pub outcomes: Vec<Vec<CellOutcome>>,
    pub min_height: Vec<Vec<f64>>,
    pub max_pitch: Vec<Vec<f64>>,
    /// Monotone-frontier violations: (weaker cell, stronger cell) where the
    /// weaker disturbance failed but doubling it survived.
    pub frontier_violations: Vec<((f64, f64), (f64, f64))>,
}

impl SweepGrid {
    pub fn outcome_at(&self, i: usize, j: usize) -> &CellOutcome {
        &self.outcomes[i][j]
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "fx,tau_y,outcome,min_height,max_pitch")?;
        for (i, fx) in self.fx_values.iter().enumerate() {
            for (j, ty) in self.ty_values.iter().enumerate() {
                let outcome = match &self.outcomes[i][j] {
                    CellOutcome::Survived => "survived".to_string(),
                    CellOutcome::Fell(r) => format!("fell:{r}"),
                    CellOutcome::SolverFailed => "solver_failed".to_string(),
                };
                writeln!(
                    w,
                    "{fx},{ty},{outcome},{},{}",
                    self.min_height[i][j], self.max_pitch[i][j]
                )?;
            }
        }
        Ok(())
    }
}

/// Run every cell of the grid as an independent simulation in a worker
/// pool. Per-cell failures are recorded, never aborting the sweep; results
/// are deterministic per cell.
pub fn disturbance_sweep(
    spec: &SweepSpec,
    base: &ScenarioConfig,
    parallelism: usize,
) -> Result<SweepGrid, HarnessError> {
    let fx_values = spec.fx.values();
    let ty_values = spec.tau_y.values();
    if fx_values.is_empty() || ty_values.is_empty() {
        return Err(HarnessError::Config("sweep axes must be nonempty".into()));
    }

    let mut cells: Vec<(usize, usize)> = Vec::new();
    for i in 0..fx_values.len() {
        for j in 0..ty_values.len() {
            cells.push((i, j));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let results: Vec<((usize, usize), CellOutcome, f64, f64)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, j)| {
                let mut cfg = base.clone();
                cfg.name = format!("sweep_fx{}_ty{}", fx_values[i], ty_values[j]);
                cfg.duration = spec.start + spec.window + spec.settle;
                cfg.disturbance = Some(DisturbanceSchedule {
                    force: Vector3::new(fx_values[i], 0.0, 0.0),
                    torque: Vector3::new(0.0, ty_values[j], 0.0),
                    start: spec.start,
                    duration: spec.window,
                });
                match simulate(&cfg) {
                    Ok(log) => {
                        let s = log.summary((0.0, cfg.duration));
                        let outcome = match &log.failure {
                            None => CellOutcome::Survived,
                            Some(reason) => {
                                let total = log.rows.len().max(1);
                                if s.fallback_ticks * 2 > total {
                                    CellOutcome::SolverFailed
                                } else {
                                    CellOutcome::Fell(reason.clone())
                                }
                            }
                        };
                        ((i, j), outcome, s.min_torso_height, s.max_abs_pitch)
                    }
                    Err(e) => ((i, j), CellOutcome::Fell(format!("sim_error:{e}")), 0.0, 0.0),
                }
            })
            .collect()
    });

    let nx = fx_values.len();
    let ny = ty_values.len();
    let mut outcomes = vec![vec![CellOutcome::Survived; ny]; nx];
    let mut min_height = vec![vec![0.0; ny]; nx];
    let mut max_pitch = vec![vec![0.0; ny]; nx];
    for ((i, j), outcome, h, p) in results {
        outcomes[i][j] = outcome;
        min_height[i][j] = h;
        max_pitch[i][j] = p;
    }

    // Ray audit: walking outward from the origin along grid-aligned rays,
    // a failure should not be followed by a survival at twice the
    // magnitude; violations are reported, not hidden.
    let mut violations = Vec::new();
    let index_of = |values: &[f64], target: f64| -> Option<usize> {
        values.iter().position(|v| (v - target).abs() < 1e-9)
    };
    for i in 0..nx {
        for j in 0..ny {
            if matches!(outcomes[i][j], CellOutcome::Survived) {
                continue;
            }
            let (fx2, ty2) = (2.0 * fx_values[i], 2.0 * ty_values[j]);
            if let (Some(i2), Some(j2)) = (index_of(&fx_values, fx2), index_of(&ty_values, ty2)) {
                if matches!(outcomes[i2][j2], CellOutcome::Survived) {
                    violations.push(((fx_values[i], ty_values[j]), (fx2, ty2)));
                }
            }
        }
    }

    Ok(SweepGrid {
        fx_values,
        ty_values,
        outcomes,
        min_height,
        max_pitch,
        frontier_violations: violations,
    })
}

/// Write the grid CSV and heat map into `out_dir`.
pub fn write_sweep_artifacts(grid: &SweepGrid, out_dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut csv = fs::File::create(out_dir.join("sweep.csv"))?;
    grid.write_csv(&mut csv)?;
    let svg = plots::heat_map(&grid.fx_values, &grid.ty_values, |i, j| match grid.outcomes[i][j] {
        CellOutcome::Survived => "#3a8c3f",
        CellOutcome::Fell(_) => "#c23b22",
        CellOutcome::SolverFailed => "#888888",
    });
    fs::write(out_dir.join("sweep.svg"), svg)?;
    if !grid.frontier_violations.is_empty() {
        let mut report = fs::File::create(out_dir.join("frontier_violations.txt"))?;
        for (weak, strong) in &grid.frontier_violations {
            writeln!(
                report,
                "non-monotone: ({}, {}) failed but ({}, {}) survived",
                weak.0, weak.1, strong.0, strong.1
            )?;
        }
    }
    Ok(())
}
