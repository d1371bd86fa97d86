//! Closed loop on the full-order plant: constrained rigid-body dynamics
//! with the stance foot held by a bilateral contact (Baumgarte-stabilized),
//! torques from the task-space controller, footstep and wrench references
//! from the MPC, and the plastic impact map at touchdown.

use super::fsm::{step_fsm, FsmEvent, FsmState};
use super::{LogRow, ScenarioConfig, SimError, TrajectoryLog};
use crate::contact::build_line_cwc;
use crate::mpc::{GaitState, MpcController, Side};
use crate::orient::{euler_rate_map, omega_world_to_euler_rates, quat_to_rpy, so3_log};
use crate::rbd::{
    bias_forces, com_position_cached, com_velocity, config_derivative, forward_kinematics,
    frame_jacobian_cached, frame_pose, impact_map, mass_matrix, parse_model, JointState,
    RobotModel,
};
use crate::srbm::{AsrbmState, GroundWrench, WrenchFrame};
use crate::tsc::{swing_trajectory, PoseTarget, SwingTarget, TaskSet, TscController};
use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};

fn frame_name(side: Side) -> &'static str {
    match side {
        Side::Left => "left_foot",
        Side::Right => "right_foot",
    }
}

/// Contact anchor for constraint stabilization.
#[derive(Clone, Debug)]
struct Anchor {
    position: Vector3<f64>,
    rotation: Matrix3<f64>,
}

/// Forward dynamics with the stance frame bilaterally constrained:
/// `[H -Jc'; Jc 0] [qdd; u] = [tau_gen - C; -Jdot qd + stabilization]`.
fn constrained_qdd(
    model: &RobotModel,
    state: &JointState,
    tau_gen: &DVector<f64>,
    contact_id: usize,
    anchor: &Anchor,
) -> DVector<f64> {
    let nv = model.num_velocities();
    let kin = forward_kinematics(model, state);
    let h = mass_matrix(model, state);
    let c = bias_forces(model, state);
    let (j_c, jdqd) = frame_jacobian_cached(model, state, &kin, contact_id);

    // Baumgarte terms on the frame pose drift.
    let (r_f, p_f) = frame_pose(model, &kin, contact_id);
    let qd = DVector::from_column_slice(&state.velocity);
    let vel = &j_c * &qd;
    let omega_gain = 30.0;
    let mut stab = DVector::zeros(6);
    let rot_err = so3_log(&(anchor.rotation * r_f.transpose()));
    for i in 0..3 {
        stab[i] = omega_gain * omega_gain * rot_err[i] - 2.0 * omega_gain * vel[i];
        stab[3 + i] =
            omega_gain * omega_gain * (anchor.position[i] - p_f[i]) - 2.0 * omega_gain * vel[3 + i];
    }

    let dim = nv + 6;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..nv {
        for j in 0..nv {
            kkt[(i, j)] = h[(i, j)];
        }
        for r in 0..6 {
            kkt[(i, nv + r)] = -j_c[(r, i)];
            kkt[(nv + r, i)] = j_c[(r, i)];
        }
        rhs[i] = tau_gen[i] - c[i];
    }
    for r in 0..6 {
        rhs[nv + r] = -jdqd[r] + stab[r];
    }
    let sol = kkt.lu().solve(&rhs).expect("contact KKT singular");
    sol.rows(0, nv).into_owned()
}

/// One RK4 step of the constrained plant under zero-order-hold torques and
/// external generalized disturbance force.
fn plant_step(
    model: &RobotModel,
    state: &JointState,
    tau_gen: &DVector<f64>,
    contact_id: usize,
    anchor: &Anchor,
    dt: f64,
) -> JointState {
    let nv = model.num_velocities();
    let eval = |s: &JointState| -> (Vector3<f64>, nalgebra::Quaternion<f64>, Vec<f64>, DVector<f64>) {
        let (pd, qd_quat, rates) = config_derivative(s);
        let qdd = constrained_qdd(model, s, tau_gen, contact_id, anchor);
        (pd, qd_quat, rates, qdd)
    };
    let advance = |s: &JointState,
                   k: &(Vector3<f64>, nalgebra::Quaternion<f64>, Vec<f64>, DVector<f64>),
                   h: f64|
     -> JointState {
        let mut out = s.clone();
        out.base_position += k.0 * h;
        let q = s.base_orientation.into_inner() + k.1 * h;
        out.base_orientation = UnitQuaternion::from_quaternion(q);
        for (a, r) in out.joint_angles.iter_mut().zip(&k.2) {
            *a += r * h;
        }
        for i in 0..nv {
            out.velocity[i] += k.3[i] * h;
        }
        out
    };

    let k1 = eval(state);
    let s2 = advance(state, &k1, 0.5 * dt);
    let k2 = eval(&s2);
    let s3 = advance(state, &k2, 0.5 * dt);
    let k3 = eval(&s3);
    let s4 = advance(state, &k3, dt);
    let k4 = eval(&s4);

    let mut out = state.clone();
    out.base_position += (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) * (dt / 6.0);
    let q = state.base_orientation.into_inner()
        + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0);
    out.base_orientation = UnitQuaternion::from_quaternion(q);
    for (i, a) in out.joint_angles.iter_mut().enumerate() {
        *a += (k1.2[i] + 2.0 * k2.2[i] + 2.0 * k3.2[i] + k4.2[i]) * (dt / 6.0);
    }
    for i in 0..nv {
        out.velocity[i] += (k1.3[i] + 2.0 * k2.3[i] + 2.0 * k3.3[i] + k4.3[i]) * (dt / 6.0);
    }
    out
}

/// Reduced-order view of the full state at the MPC boundary.
fn reduced_state(model: &RobotModel, state: &JointState, stance_position: &Vector3<f64>) -> AsrbmState {
    let kin = forward_kinematics(model, state);
    let com = com_position_cached(model, &kin);
    let v_com = com_velocity(model, state);
    let rpy = quat_to_rpy(&state.base_orientation);
    let r = state.base_orientation.to_rotation_matrix().into_inner();
    let omega_world = r * Vector3::new(state.velocity[0], state.velocity[1], state.velocity[2]);
    let rpy_rate = omega_world_to_euler_rates(&rpy, &omega_world);
    AsrbmState {
        com_position: com,
        com_velocity: v_com,
        rpy,
        rpy_rate,
        step_location: *stance_position,
    }
}

/// Lean the standing pose sideways (hip roll) until the CoM sits over the
/// requested stance foot.
fn lean_over_foot(model: &RobotModel, stance: Side) -> JointState {
    let l_roll = model.joint_id("l_hip_roll");
    let r_roll = model.joint_id("r_hip_roll");
    let (Some(l_roll), Some(r_roll)) = (l_roll, r_roll) else {
        return model.standing_state(0.0);
    };
    let foot = frame_name(stance);
    let eval = |beta: f64| -> (JointState, f64) {
        let mut st = model.standing_state(0.0);
        st.joint_angles[l_roll] = beta;
        st.joint_angles[r_roll] = beta;
        let kin = forward_kinematics(model, &st);
        let (_, f) = frame_pose(model, &kin, model.frame_id(foot).unwrap());
        let mut st2 = st;
        st2.base_position.z = -f.z;
        let kin2 = forward_kinematics(model, &st2);
        let com = com_position_cached(model, &kin2);
        let (_, f2) = frame_pose(model, &kin2, model.frame_id(foot).unwrap());
        (st2, com.y - f2.y)
    };
    let sign = match stance {
        Side::Left => -1.0,
        Side::Right => 1.0,
    };
    let (mut lo, mut hi) = (sign * 0.4, 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (_, err) = eval(mid);
        if err * sign < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eval(0.5 * (lo + hi)).0
}

pub fn simulate_fullbody(cfg: &ScenarioConfig) -> Result<TrajectoryLog, SimError> {
    let text = std::fs::read_to_string(&cfg.model_path)
        .map_err(|e| SimError::Config(format!("model file '{}': {e}", cfg.model_path)))?;
    let model = parse_model(&text)?;
    let params = cfg.srbm.params();
    let cone = build_line_cwc(&cfg.foot).map_err(|e| SimError::Config(e.to_string()))?;
    let mut mpc = MpcController::new(cfg.mpc.clone(), params.clone(), cone.clone());
    let mut tsc = TscController::new(cfg.tsc.clone(), cone);
    let fsm_params = cfg.fsm_params();
    let terrain = &cfg.terrain;

    // Initial pose: standing, leaned over the stance foot, feet at terrain
    // height at the origin.
    let mut state = lean_over_foot(&model, cfg.start.stance);
    state.base_position.z += terrain.height(0.0, 0.0);
    for (i, v) in cfg.start.com_velocity.iter().enumerate() {
        state.velocity[3 + i] = *v;
    }
    let kin = forward_kinematics(&model, &state);
    let stance_frame = model.frame_id(frame_name(cfg.start.stance))?;
    let swing_frame_0 = model.frame_id(frame_name(cfg.start.stance.other()))?;
    let (r_anchor, stance0) = frame_pose(&model, &kin, stance_frame);
    let (_, swing0) = frame_pose(&model, &kin, swing_frame_0);

    let mut fsm = FsmState::new(cfg.start.stance, stance0, terrain);
    fsm.swing_start = swing0;
    let mut anchor = Anchor { position: stance0, rotation: r_anchor };

    // Regularize toward the pose the run actually starts in (the leaned
    // stance), not the symmetric catalog pose.
    let posture = DVector::from_column_slice(&state.joint_angles);
    let mut swing_goal = swing0;
    let mut u_des = GroundWrench::new(
        Vector3::new(0.0, 0.0, model.total_mass() * model.gravity),
        Vector3::zeros(),
        WrenchFrame::World,
    );
    let mut torso_target = {
        let (r_t, p_t) = frame_pose(&model, &kin, model.frame_id("torso")?);
        PoseTarget::hold(p_t, r_t)
    };
    // With no stepping scheduled the stance foot is the only world anchor;
    // pin the torso's horizontal target to it.
    let standing_mode = cfg.mpc.stance_duration >= cfg.duration;
    let torso_foot_offset = {
        let (_, p_t) = frame_pose(&model, &kin, model.frame_id("torso")?);
        p_t - stance0
    };
    let mut step_target = swing0;

    let mut log = TrajectoryLog::default();
    let steps = (cfg.duration / cfg.dt_sim).round() as usize;
    let mut next_mpc = 0.0f64;
    let mut next_tsc = 0.0f64;
    let mut tau_gen = DVector::zeros(model.num_velocities());
    let mut last_status = String::from("init");

    for step in 0..steps {
        let t = step as f64 * cfg.dt_sim;
        let contact_id = model.frame_id(frame_name(fsm.stance))?;
        let swing_id = model.frame_id(frame_name(fsm.stance.other()))?;

        if t + 1e-12 >= next_mpc {
            let x_red = reduced_state(&model, &state, &fsm.stance_position);
            let gait = GaitState {
                stance_foot: fsm.stance,
                time_in_stance: fsm.phase_elapsed,
                stance_position: fsm.stance_position,
                stance_yaw: fsm.stance_yaw,
                plane_row: fsm.plane_row,
                plane_rhs: fsm.plane_rhs,
            };
            let out = mpc.solve(&x_red, &cfg.command, &gait);
            if !out.fallback {
                u_des = out.wrench;
                swing_goal = out.step_target_1;
                step_target = out.step_target_1;
                if let Some(x1) = out.predicted.first() {
                    // Orientation, height and velocity ride the MPC plan;
                    // horizontal position is left unanchored (zero error
                    // against the measured pose) so foot placement, not the
                    // torso task, owns xy translation.
                    let kin_now = forward_kinematics(&model, &state);
                    let (_, p_torso) = frame_pose(&model, &kin_now, model.frame_id("torso")?);
                    let z_offset = p_torso.z - x_red.com_position.z;
                    let e_map = euler_rate_map(&x1.rpy);
                    let xy_anchor = if standing_mode {
                        fsm.stance_position + torso_foot_offset
                    } else {
                        p_torso
                    };
                    torso_target = PoseTarget {
                        position: Vector3::new(xy_anchor.x, xy_anchor.y, x1.com_position.z + z_offset),
                        velocity: x1.com_velocity,
                        accel_ff: Vector3::zeros(),
                        rotation: crate::orient::rpy_to_rotation(&x1.rpy),
                        omega: e_map * x1.rpy_rate,
                        omega_dot_ff: Vector3::zeros(),
                    };
                }
            }
            last_status = if out.fallback { "fallback".into() } else { "optimal".into() };
            let solve_time = out.solve_time;
            log.rows.push(LogRow {
                t,
                state: x_red,
                wrench: *u_des.as_vector().as_ref(),
                step_target,
                stance: fsm.stance,
                swing_position: {
                    let kin = forward_kinematics(&model, &state);
                    frame_pose(&model, &kin, swing_id).1
                },
                status: last_status.clone(),
                solve_time,
                swing_duration: fsm.last_swing_duration,
                prediction_error: -1.0,
                event: String::new(),
            });
            next_mpc += cfg.dt_mpc;
        }

        if t + 1e-12 >= next_tsc {
            let s = (fsm.phase_elapsed / cfg.mpc.stance_duration).clamp(0.0, 1.0);
            let (sp, sv, sa) = swing_trajectory(
                &fsm.swing_start,
                &swing_goal,
                cfg.gait.swing_apex,
                s,
                cfg.mpc.stance_duration,
            );
            let tasks = TaskSet {
                contact_frame: frame_name(fsm.stance).into(),
                foot_rotation: GaitState {
                    stance_foot: fsm.stance,
                    time_in_stance: fsm.phase_elapsed,
                    stance_position: fsm.stance_position,
                    stance_yaw: fsm.stance_yaw,
                    plane_row: fsm.plane_row,
                    plane_rhs: fsm.plane_rhs,
                }
                .foot_rotation(),
                torso: torso_target.clone(),
                swing: Some(SwingTarget {
                    frame: frame_name(fsm.stance.other()).into(),
                    position: sp,
                    velocity: sv,
                    accel_ff: sa,
                    pitch: 0.0,
                    yaw: fsm.stance_yaw,
                }),
                posture: posture.clone(),
                desired_wrench: u_des,
            };
            let out = tsc.solve(&model, &state, &tasks);
            tau_gen = DVector::zeros(model.num_velocities());
            for j in 0..model.num_joints() {
                tau_gen[6 + j] = out.tau[j];
            }
            next_tsc += cfg.dt_tsc;
        }

        // External disturbance as a generalized force at the torso frame.
        let mut tau_total = tau_gen.clone();
        if let Some(d) = cfg.disturbance.as_ref().filter(|d| d.active(t)) {
            let kin = forward_kinematics(&model, &state);
            let (j_t, _) = frame_jacobian_cached(&model, &state, &kin, model.frame_id("torso")?);
            for i in 0..model.num_velocities() {
                for k in 0..3 {
                    tau_total[i] += j_t[(k, i)] * d.torque[k] + j_t[(3 + k, i)] * d.force[k];
                }
            }
        }

        if std::env::var_os("FB_TRACE").is_some() && step < 4 {
            let qdd_dbg = constrained_qdd(&model, &state, &tau_total, contact_id, &anchor);
            eprintln!(
                "step {step}: tau={:?}
  qdd={:?}",
                &tau_total.as_slice()[6..],
                qdd_dbg.as_slice()
            );
        }
        state = plant_step(&model, &state, &tau_total, contact_id, &anchor, cfg.dt_sim);
        state.base_orientation = UnitQuaternion::from_quaternion(state.base_orientation.into_inner());
        let finite = state.base_position.iter().all(|v| v.is_finite())
            && state.velocity.iter().all(|v| v.is_finite())
            && state.joint_angles.iter().all(|v| v.is_finite());
        if !finite {
            let reason = "state_diverged".to_string();
            log.failure = Some(reason.clone());
            log.rows.push(LogRow {
                t: t + cfg.dt_sim,
                state: AsrbmState {
                    com_position: Vector3::zeros(),
                    com_velocity: Vector3::zeros(),
                    rpy: Vector3::zeros(),
                    rpy_rate: Vector3::zeros(),
                    step_location: fsm.stance_position,
                },
                wrench: *u_des.as_vector().as_ref(),
                step_target,
                stance: fsm.stance,
                swing_position: Vector3::zeros(),
                status: last_status.clone(),
                solve_time: 0.0,
                swing_duration: fsm.last_swing_duration,
                prediction_error: -1.0,
                event: format!("failure:{reason}"),
            });
            break;
        }

        // Swing foot state drives the event machine.
        let kin = forward_kinematics(&model, &state);
        let (_, sw_pos) = frame_pose(&model, &kin, swing_id);
        let (j_s, _) = frame_jacobian_cached(&model, &state, &kin, swing_id);
        let qd = DVector::from_column_slice(&state.velocity);
        let sw_vel = &j_s * &qd;
        let (_, torso_pos) = frame_pose(&model, &kin, model.frame_id("torso")?);
        let yaw = quat_to_rpy(&state.base_orientation).z;

        let ev = step_fsm(
            &mut fsm,
            &sw_pos,
            sw_vel[5],
            &torso_pos,
            yaw,
            terrain,
            cfg.dt_sim,
            &fsm_params,
        );
        match ev {
            FsmEvent::Touchdown { position, .. } => {
                let new_frame = frame_name(fsm.stance);
                if let Ok(res) = impact_map(&model, &state, new_frame) {
                    state.velocity.copy_from_slice(&res.velocity_plus);
                }
                let kin = forward_kinematics(&model, &state);
                let fid = model.frame_id(new_frame)?;
                let (r_new, p_new) = frame_pose(&model, &kin, fid);
                anchor = Anchor { position: p_new, rotation: r_new };
                fsm.stance_position = p_new;
                log.touchdowns += 1;
                log.swing_records.push((fsm.last_swing_duration, position, t));
                log.rows.push(LogRow {
                    t: t + cfg.dt_sim,
                    state: reduced_state(&model, &state, &fsm.stance_position),
                    wrench: *u_des.as_vector().as_ref(),
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
                    state: reduced_state(&model, &state, &fsm.stance_position),
                    wrench: *u_des.as_vector().as_ref(),
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
