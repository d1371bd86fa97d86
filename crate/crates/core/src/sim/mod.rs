//! Hybrid closed-loop simulation: event-based gait FSM, two plant options
//! (reduced-order aSRBM and the full-order rigid-body model), terrain
//! height fields, disturbance injection and fixed-step RK4 integration.
//!
//! Runs are fully deterministic: a config (plus its seed field, reserved
//! for future noise injection) maps to a bit-identical trajectory log.

mod fsm;
mod fullbody;
mod srbm_loop;
mod terrain;

pub use fsm::{step_fsm, FsmEvent, FsmParams, FsmState};
pub use srbm_loop::integrate_nonlinear;
pub use terrain::{fit_tangent_plane, TangentPlane, Terrain};

use crate::contact::FootGeometry;
use crate::mpc::{MpcWeights, Side, VelocityCommand};
use crate::srbm::{AsrbmState, SrbmParams};
use crate::tsc::TscWeights;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(#[from] crate::rbd::ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log schema mismatch: {0}")]
    LogSchema(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Srbm,
    Fullbody,
}

/// External wrench applied at the CoM over a time window.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceSchedule {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
    pub start: f64,
    pub duration: f64,
}

impl Default for DisturbanceSchedule {
    fn default() -> Self {
        DisturbanceSchedule {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
            start: 0.0,
            duration: 0.0,
        }
    }
}

impl DisturbanceSchedule {
    pub fn active(&self, t: f64) -> bool {
        self.duration > 0.0 && t >= self.start && t < self.start + self.duration
    }
}

/// Reduced-order model parameters as plain config data.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SrbmConfig {
    pub mass: f64,
    /// Diagonal of the body inertia tensor about the CoM.
    pub inertia_diag: [f64; 3],
    pub gravity: f64,
}

impl Default for SrbmConfig {
    fn default() -> Self {
        SrbmConfig {
            mass: 24.0,
            inertia_diag: [1.43, 1.30, 0.24],
            gravity: 9.81,
        }
    }
}

impl SrbmConfig {
    pub fn params(&self) -> SrbmParams {
        SrbmParams::new(
            self.mass,
            Matrix3::from_diagonal(&Vector3::from_column_slice(&self.inertia_diag)),
            self.gravity,
        )
        .expect("invalid SRBM config")
    }
}

/// Swing-phase and event-detection constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitConfig {
    /// Swing apex height above the start-goal line (m).
    pub swing_apex: f64,
    /// Debounce window as a fraction of the stance duration.
    pub debounce: f64,
    /// Forced-touchdown timeout as a fraction of the stance duration.
    pub timeout: f64,
    /// Failure threshold on torso height above local terrain (m).
    pub min_torso_clearance: f64,
    /// Downward search speed after the nominal swing ends (m/s).
    pub descend_speed: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            swing_apex: 0.06,
            debounce: 0.5,
            timeout: 1.5,
            min_torso_clearance: 0.3,
            descend_speed: 0.5,
        }
    }
}

/// Initial condition of the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct StartConfig {
    /// Horizontal CoM start position (e.g. a run-in before a terrain
    /// feature).
    pub com_xy: [f64; 2],
    pub com_velocity: [f64; 3],
    pub rpy: [f64; 3],
    pub rpy_rate: [f64; 3],
    pub stance: Side,
    /// Stance-foot horizontal offset from the CoM at start.
    pub stance_offset: [f64; 2],
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig {
            com_xy: [0.0, 0.0],
            com_velocity: [0.0; 3],
            rpy: [0.0; 3],
            rpy_rate: [0.0; 3],
            stance: Side::Right,
            stance_offset: [0.0, -0.05],
        }
    }
}

/// Declarative experiment description; all fields have defaults so TOML
/// configs can stay sparse.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantKind,
    /// Kinematic model file, used by the full-order plant.
    pub model_path: String,
    pub duration: f64,
    pub command: VelocityCommand,
    pub terrain: Terrain,
    pub disturbance: Option<DisturbanceSchedule>,
    pub srbm: SrbmConfig,
    pub mpc: MpcWeights,
    pub tsc: TscWeights,
    pub foot: FootGeometry,
    pub gait: GaitConfig,
    pub start: StartConfig,
    pub dt_sim: f64,
    pub dt_mpc: f64,
    pub dt_tsc: f64,
    pub seed: u64,
    /// Record the one-step prediction error of every MPC tick.
    pub measure_prediction: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "unnamed".into(),
            plant: PlantKind::Srbm,
            model_path: "models/desk_biped.model".into(),
            duration: 8.0,
            command: VelocityCommand::default(),
            terrain: Terrain::Flat,
            disturbance: None,
            srbm: SrbmConfig::default(),
            mpc: MpcWeights::default(),
            tsc: TscWeights::default(),
            foot: FootGeometry::default(),
            gait: GaitConfig::default(),
            start: StartConfig::default(),
            dt_sim: 0.001,
            dt_mpc: 0.025,
            dt_tsc: 0.001,
            seed: 0,
            measure_prediction: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt_sim > 0.0 && self.dt_mpc > 0.0 && self.dt_tsc > 0.0) {
            return Err(SimError::Config("time steps must be positive".into()));
        }
        if self.duration <= 0.0 {
            return Err(SimError::Config("duration must be positive".into()));
        }
        self.mpc.validate().map_err(SimError::Config)?;
        self.foot.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if let Some(d) = &self.disturbance {
            if d.duration < 0.0 {
                return Err(SimError::Config("disturbance duration must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn fsm_params(&self) -> FsmParams {
        FsmParams {
            stance_duration: self.mpc.stance_duration,
            debounce: self.gait.debounce,
            timeout: self.gait.timeout,
            min_torso_clearance: self.gait.min_torso_clearance,
        }
    }
}

/// One control-tick record. Events (touchdown, failure) append their own
/// rows so event timing is visible at simulation resolution.
#[derive(Clone, Debug)]
pub struct LogRow {
    pub t: f64,
    pub state: AsrbmState,
    pub wrench: [f64; 6],
    pub step_target: Vector3<f64>,
    pub stance: Side,
    pub swing_position: Vector3<f64>,
    pub status: String,
    pub solve_time: f64,
    pub swing_duration: f64,
    pub prediction_error: f64,
    pub event: String,
}

pub const LOG_HEADER: &str = "t,com_x,com_y,com_z,vel_x,vel_y,vel_z,roll,pitch,yaw,roll_rate,pitch_rate,yaw_rate,step_x,step_y,step_z,force_x,force_y,force_z,moment_x,moment_y,moment_z,target_x,target_y,target_z,stance,swing_x,swing_y,swing_z,status,swing_duration,prediction_error,event";

/// Time-stamped record of a run.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
    pub failure: Option<String>,
    pub touchdowns: usize,
    /// Swing durations measured at completed touchdowns, with the stance
    /// location each swing started from.
    pub swing_records: Vec<(f64, Vector3<f64>, f64)>,
}

/// Headline numbers of a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub survived: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub duration: f64,
    pub mean_velocity_x: f64,
    pub min_torso_height: f64,
    pub max_abs_pitch: f64,
    pub touchdowns: usize,
    pub mean_solve_time: f64,
    pub max_solve_time: f64,
    pub fallback_ticks: usize,
}

impl TrajectoryLog {
    pub fn summary(&self, velocity_window: (f64, f64)) -> RunSummary {
        let mut vel_sum = 0.0;
        let mut vel_count = 0usize;
        let mut min_h = f64::INFINITY;
        let mut max_pitch: f64 = 0.0;
        let mut solve_sum = 0.0;
        let mut solve_max: f64 = 0.0;
        let mut solve_count = 0usize;
        let mut fallbacks = 0usize;
        for r in &self.rows {
            if r.t >= velocity_window.0 && r.t <= velocity_window.1 {
                vel_sum += r.state.com_velocity.x;
                vel_count += 1;
            }
            min_h = min_h.min(r.state.com_position.z);
            max_pitch = max_pitch.max(r.state.rpy.y.abs());
            if r.solve_time > 0.0 {
                solve_sum += r.solve_time;
                solve_max = solve_max.max(r.solve_time);
                solve_count += 1;
            }
            if r.status == "fallback" {
                fallbacks += 1;
            }
        }
        RunSummary {
            survived: self.failure.is_none(),
            failure: self.failure.clone(),
            duration: self.rows.last().map(|r| r.t).unwrap_or(0.0),
            mean_velocity_x: if vel_count > 0 { vel_sum / vel_count as f64 } else { 0.0 },
            min_torso_height: if min_h.is_finite() { min_h } else { 0.0 },
            max_abs_pitch: max_pitch,
            touchdowns: self.touchdowns,
            mean_solve_time: if solve_count > 0 { solve_sum / solve_count as f64 } else { 0.0 },
            max_solve_time: solve_max,
            fallback_ticks: fallbacks,
        }
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.rows {
            let s = &r.state;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                s.com_position.x,
                s.com_position.y,
                s.com_position.z,
                s.com_velocity.x,
                s.com_velocity.y,
                s.com_velocity.z,
                s.rpy.x,
                s.rpy.y,
                s.rpy.z,
                s.rpy_rate.x,
                s.rpy_rate.y,
                s.rpy_rate.z,
                s.step_location.x,
                s.step_location.y,
                s.step_location.z,
                r.wrench[0],
                r.wrench[1],
                r.wrench[2],
                r.wrench[3],
                r.wrench[4],
                r.wrench[5],
                r.step_target.x,
                r.step_target.y,
                r.step_target.z,
                match r.stance {
                    Side::Left => "left",
                    Side::Right => "right",
                },
                r.swing_position.x,
                r.swing_position.y,
                r.swing_position.z,
                r.status,
                r.swing_duration,
                r.prediction_error,
                r.event
            )?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<TrajectoryLog, SimError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::LogSchema("empty log".into()))??;
        if header.trim() != LOG_HEADER {
            return Err(SimError::LogSchema(format!("unexpected header: {header}")));
        }
        let mut log = TrajectoryLog::default();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 33 {
                return Err(SimError::LogSchema(format!(
                    "expected 33 fields, got {}",
                    fields.len()
                )));
            }
            let f = |i: usize| -> Result<f64, SimError> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|e| SimError::LogSchema(format!("field {i}: {e}")))
            };
            let state = AsrbmState {
                com_position: Vector3::new(f(1)?, f(2)?, f(3)?),
                com_velocity: Vector3::new(f(4)?, f(5)?, f(6)?),
                rpy: Vector3::new(f(7)?, f(8)?, f(9)?),
                rpy_rate: Vector3::new(f(10)?, f(11)?, f(12)?),
                step_location: Vector3::new(f(13)?, f(14)?, f(15)?),
            };
            let event = fields[32].to_string();
            let row = LogRow {
                t: f(0)?,
                state,
                wrench: [f(16)?, f(17)?, f(18)?, f(19)?, f(20)?, f(21)?],
                step_target: Vector3::new(f(22)?, f(23)?, f(24)?),
                stance: if fields[25] == "left" { Side::Left } else { Side::Right },
                swing_position: Vector3::new(f(26)?, f(27)?, f(28)?),
                status: fields[29].to_string(),
                solve_time: 0.0,
                swing_duration: f(30)?,
                prediction_error: f(31)?,
                event: event.clone(),
            };
            if row.event.starts_with("failure") {
                log.failure = Some(row.event.clone());
            }
            if row.event == "touchdown" {
                log.touchdowns += 1;
            }
            log.rows.push(row);
        }
        Ok(log)
    }
}

/// Run the scenario on its configured plant.
pub fn simulate(cfg: &ScenarioConfig) -> Result<TrajectoryLog, SimError> {
    cfg.validate()?;
    match cfg.plant {
        PlantKind::Srbm => srbm_loop::simulate_srbm(cfg),
        PlantKind::Fullbody => fullbody::simulate_fullbody(cfg),
    }
}
