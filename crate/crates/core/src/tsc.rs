//! Whole-body task-space controller.
//!
//! One QP per tick over `(qdd, tau, u)`: track torso pose, swing-foot pose
//! and the desired ground wrench, regularize posture, joint accelerations
//! and torques, and damp centroidal angular momentum, subject to the
//! full-order dynamics, a rigid stance-foot contact, the line-foot wrench
//! cone and actuation limits.
//!
//! The momentum-damping task is written on the wrench block alone: with the
//! dynamics and contact equalities enforced, the rate of angular momentum
//! about the CoM equals the moment of the contact wrench about the CoM
//! (gravity passes through the CoM and drops out).

use crate::contact::WrenchCone;
use crate::orient::{rpy_to_rotation, skew, so3_log};
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::rbd::{
    bias_forces, centroidal_momentum, com_position_cached, forward_kinematics,
    frame_jacobian_cached, frame_pose, mass_matrix, JointState, RobotModel,
};
use crate::srbm::{GroundWrench, WrenchFrame};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Gains and weights of the task-space QP. Defaults are the reference
/// tuning used with the desk biped.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TscWeights {
    /// Torso task gains, coordinates `[x, y, z, roll, pitch, yaw]`.
    pub kp_torso: [f64; 6],
    pub kd_torso: [f64; 6],
    /// Swing-foot task gains, coordinates `[x, y, z, pitch, yaw]` (the
    /// roll of a line foot is unactuated and left untracked).
    pub kp_swing: [f64; 5],
    pub kd_swing: [f64; 5],
    pub kp_posture: f64,
    pub kd_posture: f64,
    /// Centroidal angular momentum damping gain.
    pub kd_cam: f64,
    pub weight_torso: f64,
    pub weight_swing: f64,
    pub weight_posture: f64,
    pub weight_qdd: f64,
    pub weight_cam: f64,
    pub weight_tau: f64,
    pub weight_wrench: f64,
    pub qdd_max: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for TscWeights {
    fn default() -> Self {
        TscWeights {
            kp_torso: [100.0, 100.0, 100.0, 10.0, 10.0, 20.0],
            kd_torso: [30.0, 30.0, 50.0, 50.0, 50.0, 50.0],
            kp_swing: [350.0, 350.0, 560.0, 70.0, 70.0],
            kd_swing: [10.0, 10.0, 17.0, 7.0, 7.0],
            kp_posture: 1.0,
            kd_posture: 0.2,
            kd_cam: 3.0,
            weight_torso: 1.0,
            weight_swing: 0.7,
            weight_posture: 0.02,
            weight_qdd: 0.005,
            weight_cam: 0.3,
            weight_tau: 1e-8,
            weight_wrench: 0.01,
            qdd_max: 200.0,
            qp_tol: 1e-6,
            qp_max_iter: 200,
        }
    }
}

/// PD task command with feed-forward (componentwise gains):
/// `r_dot = acc_ff + kp (p_des - p) + kd (v_des - v)`.
pub fn task_command(
    p: &DVector<f64>,
    v: &DVector<f64>,
    p_des: &DVector<f64>,
    v_des: &DVector<f64>,
    acc_ff: &DVector<f64>,
    kp: &DVector<f64>,
    kd: &DVector<f64>,
) -> DVector<f64> {
    assert_eq!(p.len(), p_des.len());
    assert_eq!(v.len(), v_des.len());
    acc_ff + kp.component_mul(&(p_des - p)) + kd.component_mul(&(v_des - v))
}

/// Orientation error vector: rotation log of `R_des * R'`, expressed in
/// world axes (the role of `p_des - p` for rotational coordinates).
pub fn orientation_error(r: &Matrix3<f64>, r_des: &Matrix3<f64>) -> Vector3<f64> {
    so3_log(&(r_des * r.transpose()))
}

/// Pose-tracking target for a 6D frame task.
#[derive(Clone, Debug)]
pub struct PoseTarget {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub accel_ff: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub omega_dot_ff: Vector3<f64>,
}

impl PoseTarget {
    pub fn hold(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        PoseTarget {
            position,
            velocity: Vector3::zeros(),
            accel_ff: Vector3::zeros(),
            rotation,
            omega: Vector3::zeros(),
            omega_dot_ff: Vector3::zeros(),
        }
    }
}

/// Swing-foot target: position plus pitch/yaw (line feet have no actuated
/// roll).
#[derive(Clone, Debug)]
pub struct SwingTarget {
    pub frame: String,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub accel_ff: Vector3<f64>,
    pub pitch: f64,
    pub yaw: f64,
}

/// All tracking inputs of one TSC tick.
#[derive(Clone, Debug)]
pub struct TaskSet {
    pub contact_frame: String,
    /// Stance-foot frame rotation used for the wrench cone.
    pub foot_rotation: Matrix3<f64>,
    pub torso: PoseTarget,
    pub swing: Option<SwingTarget>,
    /// Nominal actuated-joint posture.
    pub posture: DVector<f64>,
    pub desired_wrench: GroundWrench,
}

/// Column layout of the TSC decision vector `(qdd, tau, u)`.
#[derive(Clone, Copy, Debug)]
pub struct TscLayout {
    pub nv: usize,
    pub na: usize,
}

impl TscLayout {
    pub fn num_vars(&self) -> usize {
        self.nv + self.na + 6
    }

    pub fn qdd(&self) -> usize {
        0
    }

    pub fn tau(&self) -> usize {
        self.nv
    }

    pub fn wrench(&self) -> usize {
        self.nv + self.na
    }
}

/// Assemble the task-space QP at the current state.
pub fn assemble_tsc_qp(
    model: &RobotModel,
    state: &JointState,
    tasks: &TaskSet,
    cone: &WrenchCone,
    w: &TscWeights,
) -> (QpProblem, TscLayout) {
    let nv = model.num_velocities();
    let na = model.num_joints();
    let layout = TscLayout { nv, na };
    let n = layout.num_vars();
    let mut p = QpProblem::new(n);

    let kin = forward_kinematics(model, state);
    let h = mass_matrix(model, state);
    let c_bias = bias_forces(model, state);
    let contact_id = model
        .frame_id(&tasks.contact_frame)
        .expect("contact frame missing from the model");
    let (j_c, jdqd_c) = frame_jacobian_cached(model, state, &kin, contact_id);

    // --- Equalities: dynamics, contact, roll moment ---
    let me = nv + 6 + 1;
    p.a_eq = DMatrix::zeros(me, n);
    p.b_eq = DVector::zeros(me);

    // H qdd - S_a' tau - J_c' u = -C. The wrench decision is ordered
    // [F; m] while the Jacobian rows are [omega; v], so force columns come
    // from the linear rows and moment columns from the angular rows.
    for i in 0..nv {
        for j in 0..nv {
            p.a_eq[(i, layout.qdd() + j)] = h[(i, j)];
        }
        for j in 0..na {
            p.a_eq[(i, layout.tau() + j)] = if i == 6 + j { -1.0 } else { 0.0 };
        }
        for j in 0..3 {
            p.a_eq[(i, layout.wrench() + j)] = -j_c[(3 + j, i)];
            p.a_eq[(i, layout.wrench() + 3 + j)] = -j_c[(j, i)];
        }
        p.b_eq[i] = -c_bias[i];
    }
    // J_c qdd = -Jdot qd, ordered [omega; v] like the Jacobian.
    for r in 0..6 {
        for j in 0..nv {
            p.a_eq[(nv + r, layout.qdd() + j)] = j_c[(r, j)];
        }
        p.b_eq[nv + r] = -jdqd_c[r];
    }
    // Roll-moment equality on the foot-frame wrench.
    let fx = tasks.foot_rotation * Vector3::x();
    for j in 0..3 {
        p.a_eq[(nv + 6, layout.wrench() + 3 + j)] = fx[j];
    }

    // --- Inequalities: wrench cone rows on the foot-frame wrench ---
    let rows = cone.b_in.len();
    p.a_in = DMatrix::zeros(rows, n);
    p.b_in = cone.b_in.clone();
    let rt = tasks.foot_rotation.transpose();
    for r in 0..rows {
        for cidx in 0..3 {
            let mut acc_f = 0.0;
            let mut acc_m = 0.0;
            for k in 0..3 {
                acc_f += cone.a_in[(r, k)] * rt[(k, cidx)];
                acc_m += cone.a_in[(r, 3 + k)] * rt[(k, cidx)];
            }
            p.a_in[(r, layout.wrench() + cidx)] = acc_f;
            p.a_in[(r, layout.wrench() + 3 + cidx)] = acc_m;
        }
    }

    // --- Bounds: torque and acceleration boxes ---
    for j in 0..nv {
        p.lower[layout.qdd() + j] = -w.qdd_max;
        p.upper[layout.qdd() + j] = w.qdd_max;
    }
    for j in 0..na {
        let tau_max = model.bodies[j + 1].tau_max;
        if tau_max.is_finite() {
            p.lower[layout.tau() + j] = -tau_max;
            p.upper[layout.tau() + j] = tau_max;
        }
    }

    // --- Objective ---
    // Weighted task accumulated into the qdd block: || A qdd - rhs ||^2.
    let add_task = |p: &mut QpProblem, a: &DMatrix<f64>, rhs: &DVector<f64>, weight: f64| {
        debug_assert_eq!(a.nrows(), rhs.len());
        for r in 0..a.nrows() {
            for i in 0..nv {
                let ai = a[(r, i)];
                if ai == 0.0 {
                    continue;
                }
                for j in 0..nv {
                    p.h[(i, j)] += weight * ai * a[(r, j)];
                }
                p.g[i] -= weight * ai * rhs[r];
            }
        }
    };

    // Torso task: coordinates [x, y, z, roll, pitch, yaw].
    {
        let torso_id = model.frame_id("torso").expect("model lacks a torso frame");
        let (j_t, jdqd_t) = frame_jacobian_cached(model, state, &kin, torso_id);
        let (r_t, p_t) = frame_pose(model, &kin, torso_id);
        let qd = DVector::from_column_slice(&state.velocity);
        let vel6 = &j_t * &qd;
        let omega = Vector3::new(vel6[0], vel6[1], vel6[2]);
        let vlin = Vector3::new(vel6[3], vel6[4], vel6[5]);

        let e_rot = orientation_error(&r_t, &tasks.torso.rotation);
        let mut a = DMatrix::zeros(6, nv);
        let mut rhs = DVector::zeros(6);
        for i in 0..3 {
            for j in 0..nv {
                a[(i, j)] = j_t[(3 + i, j)];
            }
            rhs[i] = tasks.torso.accel_ff[i]
                + w.kp_torso[i] * (tasks.torso.position[i] - p_t[i])
                + w.kd_torso[i] * (tasks.torso.velocity[i] - vlin[i])
                - jdqd_t[3 + i];
            for j in 0..nv {
                a[(3 + i, j)] = j_t[(i, j)];
            }
            rhs[3 + i] = tasks.torso.omega_dot_ff[i]
                + w.kp_torso[3 + i] * e_rot[i]
                + w.kd_torso[3 + i] * (tasks.torso.omega[i] - omega[i])
                - jdqd_t[i];
        }
        add_task(&mut p, &a, &rhs, w.weight_torso);
    }

    // Swing-foot task: [x, y, z, pitch, yaw].
    if let Some(swing) = &tasks.swing {
        let fid = model.frame_id(&swing.frame).expect("swing frame missing");
        let (j_s, jdqd_s) = frame_jacobian_cached(model, state, &kin, fid);
        let (r_s, p_s) = frame_pose(model, &kin, fid);
        let qd = DVector::from_column_slice(&state.velocity);
        let vel6 = &j_s * &qd;

        let r_des = rpy_to_rotation(&Vector3::new(0.0, swing.pitch, swing.yaw));
        let e_rot = orientation_error(&r_s, &r_des);
        let mut a = DMatrix::zeros(5, nv);
        let mut rhs = DVector::zeros(5);
        for i in 0..3 {
            for j in 0..nv {
                a[(i, j)] = j_s[(3 + i, j)];
            }
            rhs[i] = swing.accel_ff[i]
                + w.kp_swing[i] * (swing.position[i] - p_s[i])
                + w.kd_swing[i] * (swing.velocity[i] - vel6[3 + i])
                - jdqd_s[3 + i];
        }
        for (row, axis) in [(3usize, 1usize), (4, 2)] {
            for j in 0..nv {
                a[(row, j)] = j_s[(axis, j)];
            }
            rhs[row] =
                w.kp_swing[row] * e_rot[axis] + w.kd_swing[row] * (0.0 - vel6[axis]) - jdqd_s[axis];
        }
        add_task(&mut p, &a, &rhs, w.weight_swing);
    }

    // Posture task on the actuated joints.
    {
        let mut a = DMatrix::zeros(na, nv);
        let mut rhs = DVector::zeros(na);
        for j in 0..na {
            a[(j, 6 + j)] = 1.0;
            rhs[j] = w.kp_posture * (tasks.posture[j] - state.joint_angles[j])
                - w.kd_posture * state.velocity[6 + j];
        }
        add_task(&mut p, &a, &rhs, w.weight_posture);
    }

    // Centroidal angular momentum damping on the wrench block:
    // k_dot_ang = (p_foot - p_com) x F + m, target -kd_cam * k_ang.
    {
        let k_g = centroidal_momentum(model, state);
        let k_ang = Vector3::new(k_g[0], k_g[1], k_g[2]);
        let com = com_position_cached(model, &kin);
        let (_, p_foot) = frame_pose(model, &kin, contact_id);
        let lever = skew(&(p_foot - com));
        let target = -w.kd_cam * k_ang;
        let uo = layout.wrench();
        // Rows [lever | I3] over (F, m): accumulate row' * row and the
        // linear term directly.
        for r in 0..3 {
            let mut row = [0.0f64; 6];
            for cidx in 0..3 {
                row[cidx] = lever[(r, cidx)];
            }
            row[3 + r] = 1.0;
            for i in 0..6 {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..6 {
                    p.h[(uo + i, uo + j)] += w.weight_cam * row[i] * row[j];
                }
                p.g[uo + i] -= w.weight_cam * row[i] * target[r];
            }
        }
    }

    // Regularizers: qdd, tau, wrench tracking.
    for j in 0..nv {
        p.h[(layout.qdd() + j, layout.qdd() + j)] += w.weight_qdd;
    }
    for j in 0..na {
        p.h[(layout.tau() + j, layout.tau() + j)] += w.weight_tau;
    }
    let u_des = tasks.desired_wrench.as_vector();
    for j in 0..6 {
        p.h[(layout.wrench() + j, layout.wrench() + j)] += w.weight_wrench;
        p.g[layout.wrench() + j] -= w.weight_wrench * u_des[j];
    }

    (p, layout)
}

/// Shoulder-pitch targets proportional to the opposite hip pitch; empty on
/// an armless model.
pub fn arm_swing_reference(
    model: &RobotModel,
    left_hip_pitch: f64,
    right_hip_pitch: f64,
    k_arm: f64,
) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    if let Some(j) = model.joint_id("l_shoulder_pitch") {
        out.push((j, k_arm * right_hip_pitch));
    }
    if let Some(j) = model.joint_id("r_shoulder_pitch") {
        out.push((j, k_arm * left_hip_pitch));
    }
    out
}

/// Swing-foot trajectory: quintic horizontal blend with zero boundary
/// velocity and acceleration, vertical apex bump on top of the start-goal
/// interpolation. `s` is the phase in `[0, 1]`, `duration` the nominal
/// swing time scaling the derivatives.
pub fn swing_trajectory(
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    apex_height: f64,
    s: f64,
    duration: f64,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    assert!((0.0..=1.0).contains(&s), "phase outside [0, 1]");
    assert!(duration > 0.0);
    let sigma = s * s * s * (6.0 * s * s - 15.0 * s + 10.0);
    let dsigma = 30.0 * s * s * (s - 1.0) * (s - 1.0);
    let d2sigma = 60.0 * s * (2.0 * s * s - 3.0 * s + 1.0);

    let delta = goal - start;
    let mut pos = start + delta * sigma;
    let mut vel = delta * (dsigma / duration);
    let mut acc = delta * (d2sigma / (duration * duration));

    let pi = std::f64::consts::PI;
    pos.z += apex_height * (pi * s).sin();
    vel.z += apex_height * (pi / duration) * (pi * s).cos();
    acc.z -= apex_height * (pi / duration) * (pi / duration) * (pi * s).sin();
    (pos, vel, acc)
}

/// One TSC tick result.
#[derive(Clone, Debug)]
pub struct TscOutput {
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
    pub wrench: GroundWrench,
    pub status: QpStatus,
    pub fallback: bool,
}

/// Task-space controller instance owning its QP workspace.
pub struct TscController {
    pub weights: TscWeights,
    cone: WrenchCone,
    solver: QpSolver,
    last: Option<TscOutput>,
}

impl TscController {
    pub fn new(weights: TscWeights, cone: WrenchCone) -> Self {
        TscController { weights, cone, solver: QpSolver::new(), last: None }
    }

    pub fn cone(&self) -> &WrenchCone {
        &self.cone
    }

    /// Solve the task-space QP; on failure return the previous torque
    /// command flagged as a fallback (zero torques on the very first tick).
    pub fn solve(&mut self, model: &RobotModel, state: &JointState, tasks: &TaskSet) -> TscOutput {
        let (qp, layout) = assemble_tsc_qp(model, state, tasks, &self.cone, &self.weights);
        let sol = self.solver.solve(&qp, self.weights.qp_tol, self.weights.qp_max_iter);
        if sol.status != QpStatus::Optimal {
            let mut out = self.last.clone().unwrap_or(TscOutput {
                qdd: DVector::zeros(layout.nv),
                tau: DVector::zeros(layout.na),
                wrench: GroundWrench::zero(WrenchFrame::World),
                status: sol.status,
                fallback: true,
            });
            out.status = sol.status;
            out.fallback = true;
            return out;
        }
        let qdd = sol.z.rows(layout.qdd(), layout.nv).into_owned();
        let tau = sol.z.rows(layout.tau(), layout.na).into_owned();
        let uw = sol.z.rows(layout.wrench(), 6).into_owned();
        let wrench = GroundWrench::new(
            Vector3::new(uw[0], uw[1], uw[2]),
            Vector3::new(uw[3], uw[4], uw[5]),
            WrenchFrame::World,
        );
        let out = TscOutput { qdd, tau, wrench, status: sol.status, fallback: false };
        self.last = Some(out.clone());
        out
    }
}
