//! Closed loop on the reduced-order plant: the aSRBM integrates the same
//! dynamics the MPC models, so model mismatch comes only from the
//! linearization. The swing foot is kinematic (massless legs) and drives
//! the touchdown events.

use super::fsm::{step_fsm, FsmEvent, FsmState};
use super::{LogRow, ScenarioConfig, SimError, TrajectoryLog};
use crate::contact::build_line_cwc;
use crate::mpc::{build_gait_indicator, GaitState, MpcController};
use crate::srbm::{apply_step_reset, srbm_dynamics, AsrbmState, GroundWrench, SrbmParams, StateVector};
use crate::tsc::swing_trajectory;
use nalgebra::Vector3;

/// Plant derivative: model dynamics plus the additive CoM disturbance.
fn plant_derivative(
    x: &AsrbmState,
    u: &GroundWrench,
    disturbance: Option<(&Vector3<f64>, &Vector3<f64>)>,
    p: &SrbmParams,
) -> Option<StateVector> {
    let mut dx = srbm_dynamics(x, u, p).ok()?;
    if let Some((force, torque)) = disturbance {
        let dv = force / p.mass;
        for i in 0..3 {
            dx[3 + i] += dv[i];
        }
        let i_w = p.inertia_world(&x.rpy);
        let ddw = i_w.lu().solve(torque)?;
        for i in 0..3 {
            dx[9 + i] += ddw[i];
        }
    }
    Some(dx)
}

/// One fixed-step RK4 update under a zero-order-hold wrench. `None` when
/// the state leaves the representable range (the caller records a failure).
pub(super) fn rk4_step(
    x: &AsrbmState,
    u: &GroundWrench,
    disturbance: Option<(&Vector3<f64>, &Vector3<f64>)>,
    p: &SrbmParams,
    dt: f64,
) -> Option<AsrbmState> {
    let xv = x.to_vector();
    let k1 = plant_derivative(x, u, disturbance, p)?;
    let k2 = plant_derivative(&AsrbmState::from_vector(&(xv + 0.5 * dt * k1)), u, disturbance, p)?;
    let k3 = plant_derivative(&AsrbmState::from_vector(&(xv + 0.5 * dt * k2)), u, disturbance, p)?;
    let k4 = plant_derivative(&AsrbmState::from_vector(&(xv + dt * k3)), u, disturbance, p)?;
    let next = AsrbmState::from_vector(&(xv + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)));
    next.is_finite().then_some(next)
}

/// Integrate the undisturbed model over `horizon` with `substeps` RK4
/// steps (reference trajectory for the prediction-order study).
pub fn integrate_nonlinear(
    x: &AsrbmState,
    u: &GroundWrench,
    p: &SrbmParams,
    horizon: f64,
    substeps: usize,
) -> Option<AsrbmState> {
    let dt = horizon / substeps as f64;
    let mut cur = *x;
    for _ in 0..substeps {
        cur = rk4_step(&cur, u, None, p, dt)?;
    }
    Some(cur)
}

/// Swing-foot kinematics at an elapsed phase time. Beyond the nominal
/// stance duration the foot descends at a constant search speed until the
/// FSM declares touchdown.
fn swing_state(
    elapsed: f64,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    apex: f64,
    stance_duration: f64,
    descend_speed: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    if elapsed <= stance_duration {
        let s = (elapsed / stance_duration).clamp(0.0, 1.0);
        let (p, v, _) = swing_trajectory(start, goal, apex, s, stance_duration);
        (p, v)
    } else {
        let overtime = elapsed - stance_duration;
        let mut p = *goal;
        p.z -= descend_speed * overtime;
        (p, Vector3::new(0.0, 0.0, -descend_speed))
    }
}

pub fn simulate_srbm(cfg: &ScenarioConfig) -> Result<TrajectoryLog, SimError> {
    let params = cfg.srbm.params();
    let cone = build_line_cwc(&cfg.foot).map_err(|e| SimError::Config(e.to_string()))?;
    let mut mpc = MpcController::new(cfg.mpc.clone(), params.clone(), cone);
    let fsm_params = cfg.fsm_params();
    let terrain = &cfg.terrain;

    // Initial stance foot and CoM above the local plane.
    let (cx, cy) = (cfg.start.com_xy[0], cfg.start.com_xy[1]);
    let s_off = cfg.start.stance_offset;
    let stance0 = Vector3::new(
        cx + s_off[0],
        cy + s_off[1],
        terrain.height(cx + s_off[0], cy + s_off[1]),
    );
    let mut fsm = FsmState::new(cfg.start.stance, stance0, terrain);
    // First swing lifts off from the mirrored foot position.
    fsm.swing_start = Vector3::new(
        cx + s_off[0],
        cy - s_off[1],
        terrain.height(cx + s_off[0], cy - s_off[1]),
    );

    let com_z = {
        let plane = super::terrain::fit_tangent_plane(terrain, &nalgebra::Vector2::new(cx, cy));
        (plane.rhs - plane.row.x * cx - plane.row.y * cy) / plane.row.z + cfg.mpc.nominal_height
    };
    let mut x = AsrbmState {
        com_position: Vector3::new(cx, cy, com_z),
        com_velocity: Vector3::from_column_slice(&cfg.start.com_velocity),
        rpy: Vector3::from_column_slice(&cfg.start.rpy),
        rpy_rate: Vector3::from_column_slice(&cfg.start.rpy_rate),
        step_location: stance0,
    };

    let mut u = GroundWrench::new(
        Vector3::new(0.0, 0.0, params.mass * params.gravity),
        Vector3::zeros(),
        crate::srbm::WrenchFrame::World,
    );
    let mut swing_goal = fsm.swing_start;
    let mut step_target = fsm.swing_start;

    let mut log = TrajectoryLog::default();
    let steps = (cfg.duration / cfg.dt_sim).round() as usize;
    let mut next_mpc = 0.0f64;
    let mut last_status = String::from("init");

    for step in 0..steps {
        let t = step as f64 * cfg.dt_sim;

        if t + 1e-12 >= next_mpc {
            let gait = GaitState {
                stance_foot: fsm.stance,
                time_in_stance: fsm.phase_elapsed,
                stance_position: fsm.stance_position,
                stance_yaw: fsm.stance_yaw,
                plane_row: fsm.plane_row,
                plane_rhs: fsm.plane_rhs,
            };
            let out = mpc.solve(&x, &cfg.command, &gait);
            if !out.fallback {
                u = out.wrench;
                swing_goal = out.step_target_1;
                step_target = out.step_target_1;
            }
            last_status = if out.fallback { "fallback".into() } else { "optimal".into() };
            let solve_time = out.solve_time;

            let mut pred_err = -1.0;
            if cfg.measure_prediction && !out.fallback && !out.predicted.is_empty() {
                let eta = build_gait_indicator(&gait, &cfg.mpc);
                if eta.first_switch != Some(0) {
                    if let Some(truth) = integrate_nonlinear(&x, &u, &params, cfg.mpc.ts, 40) {
                        pred_err = (out.predicted[0].to_vector() - truth.to_vector()).norm();
                    }
                }
            }

            log.rows.push(LogRow {
                t,
                state: x,
                wrench: *u.as_vector().as_ref(),
                step_target,
                stance: fsm.stance,
                swing_position: swing_state(
                    fsm.phase_elapsed,
                    &fsm.swing_start,
                    &swing_goal,
                    cfg.gait.swing_apex,
                    cfg.mpc.stance_duration,
                    cfg.gait.descend_speed,
                )
                .0,
                status: last_status.clone(),
                solve_time,
                swing_duration: fsm.last_swing_duration,
                prediction_error: pred_err,
                event: String::new(),
            });
            next_mpc += cfg.dt_mpc;
        }

        // Swing kinematics evaluated at the post-step phase so the event
        // check is consistent with the advanced plant state.
        let phase_next = fsm.phase_elapsed + cfg.dt_sim;
        let (sw_pos, sw_vel) = swing_state(
            phase_next,
            &fsm.swing_start,
            &swing_goal,
            cfg.gait.swing_apex,
            cfg.mpc.stance_duration,
            cfg.gait.descend_speed,
        );

        let dist_active = cfg.disturbance.as_ref().filter(|d| d.active(t));
        let dist = dist_active.map(|d| (&d.force, &d.torque));
        match rk4_step(&x, &u, dist, &params, cfg.dt_sim) {
            Some(next) => x = next,
            None => {
                let reason = "state_diverged".to_string();
                log.failure = Some(reason.clone());
                log.rows.push(LogRow {
                    t: t + cfg.dt_sim,
                    state: x,
                    wrench: *u.as_vector().as_ref(),
                    step_target,
                    stance: fsm.stance,
                    swing_position: sw_pos,
                    status: last_status.clone(),
                    solve_time: 0.0,
                    swing_duration: fsm.last_swing_duration,
                    prediction_error: -1.0,
                    event: format!("failure:{reason}"),
                });
                break;
            }
        }

        let ev = step_fsm(
            &mut fsm,
            &sw_pos,
            sw_vel.z,
            &x.com_position,
            x.rpy.z,
            terrain,
            cfg.dt_sim,
            &fsm_params,
        );
        match ev {
            FsmEvent::Touchdown { position, .. } => {
                let dc = position - x.step_location;
                x = apply_step_reset(&x, &dc);
                // The held wrench was planned for the previous stance;
                // replan right away instead of waiting out the tick.
                next_mpc = (step + 1) as f64 * cfg.dt_sim;
                log.touchdowns += 1;
                log.swing_records.push((fsm.last_swing_duration, position, t));
                log.rows.push(LogRow {
                    t: t + cfg.dt_sim,
                    state: x,
                    wrench: *u.as_vector().as_ref(),
                    step_target,
                    stance: fsm.stance,
                    swing_position: sw_pos,
                    status: last_status.clone(),
                    solve_time: 0.0,
                    swing_duration: fsm.last_swing_duration,
                    prediction_error: -1.0,
                    event: "touchdown".into(),
                });
            }
            FsmEvent::Failure(reason) => {
                log.failure = Some(reason.clone());
                log.rows.push(LogRow {
                    t: t + cfg.dt_sim,
                    state: x,
                    wrench: *u.as_vector().as_ref(),
                    step_target,
                    stance: fsm.stance,
                    swing_position: sw_pos,
                    status: last_status.clone(),
                    solve_time: 0.0,
                    swing_duration: fsm.last_swing_duration,
                    prediction_error: -1.0,
                    event: format!("failure:{reason}"),
                });
                break;
            }
            FsmEvent::None => {}
        }
    }

    Ok(log)
}
