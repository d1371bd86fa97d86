//! Orientation-aware convex MPC over the augmented single-rigid-body model.
//!
//! Each control tick re-linearizes the model about the current state and the
//! previously applied wrench, then transcribes a receding-horizon QP over
//! the decision vector
//!
//! ```text
//!     [u_0, x_1, u_1, x_2, ..., u_{N-1}, x_N, dc_1, dc_2]
//! ```
//!
//! with the stage dynamics `x_{k+1} = A x_k + B u_k + d + eta_k A_c dc_i`,
//! step-size and leg-extension limits, a terrain-plane equality on both
//! planned footsteps, and the line-foot wrench cone on every stage wrench.
//! Stage costs are decay-weighted per group; footstep regularization pulls
//! the planned steps toward a pluggable heuristic reference (Raibert-style
//! by default).

use crate::contact::WrenchCone;
use crate::orient::{wrap_angle_near, yaw_rotation};
use crate::qp::{QpProblem, QpSolver, QpStatus, WarmStart};
use crate::srbm::{
    linearize_discretize, AsrbmState, GroundWrench, LinearizedDynamics, SrbmParams, WrenchFrame,
    CONTROL_DIM, STATE_DIM,
};
use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::time::Instant;

const VARS_PER_STAGE: usize = STATE_DIM + CONTROL_DIM; // 21

/// Which foot is on the ground.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(&self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 toward the left of the heading, -1 toward the right.
    pub fn lateral_sign(&self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// Weights and constants of the receding-horizon problem. Defaults are the
/// reference tuning for the 24 kg desk model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcWeights {
    pub q_com_pos: Vector3<f64>,
    pub q_com_vel: Vector3<f64>,
    pub q_rpy: Vector3<f64>,
    pub q_rpy_rate: Vector3<f64>,
    pub r_force: Vector3<f64>,
    pub r_moment: Vector3<f64>,
    pub r_step: Vector3<f64>,
    /// Per-group geometric decay rates in (0, 1].
    pub decay_com_pos: f64,
    pub decay_com_vel: f64,
    pub decay_rpy: f64,
    pub decay_rpy_rate: f64,
    pub decay_force: f64,
    pub decay_moment: f64,
    /// Prediction horizon N.
    pub horizon: usize,
    /// Leg-extension horizon N_le < N.
    pub leg_horizon: usize,
    /// Prediction step Ts (s).
    pub ts: f64,
    /// Stance duration T_st (s).
    pub stance_duration: f64,
    /// Per-axis step-size bound; the z entry may be infinite (the terrain
    /// plane equality pins it).
    pub step_max: Vector3<f64>,
    /// Leg-extension bound r_max on x/y.
    pub leg_reach: Vector2<f64>,
    /// Big-M constant deactivating the leg-extension rows off-switch.
    pub big_m: f64,
    /// Nominal CoM height above the stance plane.
    pub nominal_height: f64,
    /// Raibert feedback gain on the velocity error.
    pub raibert_gain: f64,
    /// Lateral stance-width offset of the stepping heuristic (m).
    pub lateral_offset: f64,
    /// Orientation feedback of the stepping heuristic (m per rad): shifts
    /// the step reference toward the tipping direction so a sustained lean
    /// is caught by foot placement. Zero keeps the plain Raibert rule.
    pub tip_compensation: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for MpcWeights {
    fn default() -> Self {
        MpcWeights {
            q_com_pos: Vector3::new(8e2, 2e3, 3e4),
            q_com_vel: Vector3::new(5e2, 5e3, 5e2),
            q_rpy: Vector3::new(750.0, 75.0, 1250.0),
            q_rpy_rate: Vector3::new(8e2, 2e3, 3e4),
            r_force: Vector3::new(0.01, 0.01, 0.1),
            r_moment: Vector3::new(0.1, 0.1, 0.1),
            r_step: Vector3::new(1e5, 1e6, 0.0),
            decay_com_pos: 1.0,
            decay_com_vel: 0.9,
            decay_rpy: 0.8,
            decay_rpy_rate: 0.8,
            decay_force: 0.7,
            decay_moment: 0.5,
            horizon: 14,
            leg_horizon: 3,
            ts: 0.04,
            stance_duration: 0.38,
            step_max: Vector3::new(0.5, 0.4, f64::INFINITY),
            leg_reach: Vector2::new(0.4, 0.3),
            big_m: 100.0,
            nominal_height: 0.6,
            raibert_gain: 0.35,
            lateral_offset: 0.05,
            tip_compensation: 0.0,
            qp_tol: 1e-6,
            qp_max_iter: 200,
        }
    }
}

impl MpcWeights {
    pub fn num_vars(&self) -> usize {
        self.horizon * VARS_PER_STAGE + 6
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be positive".into());
        }
        if self.leg_horizon >= self.horizon {
            return Err("leg-extension horizon must be below the prediction horizon".into());
        }
        if !(self.ts > 0.0) || !(self.stance_duration > 0.0) {
            return Err("time constants must be positive".into());
        }
        for d in [
            self.decay_com_pos,
            self.decay_com_vel,
            self.decay_rpy,
            self.decay_rpy_rate,
            self.decay_force,
            self.decay_moment,
        ] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(format!("decay rate {d} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Stance bookkeeping the MPC needs: which foot, for how long, where, and
/// the local terrain plane `A_P c = b_P`.
#[derive(Clone, Debug)]
pub struct GaitState {
    pub stance_foot: Side,
    pub time_in_stance: f64,
    pub stance_position: Vector3<f64>,
    pub stance_yaw: f64,
    /// Unit plane row `A_P` (positive z component).
    pub plane_row: Vector3<f64>,
    pub plane_rhs: f64,
}

impl GaitState {
    pub fn flat(stance_foot: Side, stance_position: Vector3<f64>) -> Self {
        GaitState {
            stance_foot,
            time_in_stance: 0.0,
            stance_position,
            stance_yaw: 0.0,
            plane_row: Vector3::z(),
            plane_rhs: 0.0,
        }
    }

    /// Plane height at horizontal coordinates `(x, y)`.
    pub fn plane_height(&self, x: f64, y: f64) -> f64 {
        (self.plane_rhs - self.plane_row.x * x - self.plane_row.y * y) / self.plane_row.z
    }

    /// Foot frame rotation: z along the plane normal, x along the stance
    /// yaw heading projected onto the plane.
    pub fn foot_rotation(&self) -> Matrix3<f64> {
        let z = self.plane_row.normalize();
        let heading = yaw_rotation(self.stance_yaw) * Vector3::x();
        let x = (heading - z * heading.dot(&z)).normalize();
        let y = z.cross(&x);
        Matrix3::from_columns(&[x, y, z])
    }
}

/// Scheduled contact switches inside the horizon.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaitIndicator {
    /// `eta[k] = true` at prediction steps where a touchdown is scheduled.
    pub eta: Vec<bool>,
    pub first_switch: Option<usize>,
    pub second_switch: Option<usize>,
}

/// Build the boolean switch schedule: the j-th future touchdown lands at
/// the first prediction step whose time stamp has passed `j * T_st`, i.e.
/// `k_j = ceil((j T_st - t_el) / Ts)`. A switch beyond the horizon is
/// absent; an overdue touchdown maps to k = 0.
pub fn build_gait_indicator(g: &GaitState, w: &MpcWeights) -> GaitIndicator {
    let n = w.horizon;
    let mut eta = vec![false; n];
    let mut switches = [None, None];
    for (j, slot) in switches.iter_mut().enumerate() {
        let remaining = (j + 1) as f64 * w.stance_duration - g.time_in_stance;
        let k = (remaining / w.ts - 1e-9).ceil().max(0.0) as usize;
        if k < n {
            eta[k] = true;
            *slot = Some(k);
        }
    }
    GaitIndicator {
        eta,
        first_switch: switches[0],
        second_switch: switches[1],
    }
}

/// Planar velocity command in the heading frame plus a yaw rate.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

/// Reference trajectory for one horizon.
#[derive(Clone, Debug)]
pub struct Reference {
    /// Desired states for k = 1..N.
    pub states: Vec<SVector<f64, STATE_DIM>>,
    pub wrench: SVector<f64, CONTROL_DIM>,
    /// Desired absolute location of the first and second planned steps.
    pub step_targets: [Vector3<f64>; 2],
}

/// Build state, wrench and footstep references from the current state and
/// the velocity command. The CoM reference integrates the command in the
/// heading frame; the height reference rides `nominal_height` above the
/// stance plane; the wrench reference points from the stance foot to the
/// CoM with vertical component equal to the weight; the footstep reference
/// is a Raibert-style heuristic with a lateral stance-width offset.
pub fn build_reference(
    x_t: &AsrbmState,
    cmd: &VelocityCommand,
    g: &GaitState,
    w: &MpcWeights,
    p: &SrbmParams,
) -> Reference {
    let n = w.horizon;
    let mut states = Vec::with_capacity(n);

    let yaw0 = x_t.rpy.z;
    let mut pos = Vector2::new(x_t.com_position.x, x_t.com_position.y);
    let mut yaw = yaw0;
    for _ in 1..=n {
        let heading = yaw_rotation(yaw) * Vector3::new(cmd.vx, cmd.vy, 0.0);
        pos += Vector2::new(heading.x, heading.y) * w.ts;
        yaw += cmd.yaw_rate * w.ts;
        let vel = yaw_rotation(yaw) * Vector3::new(cmd.vx, cmd.vy, 0.0);
        let mut x = SVector::<f64, STATE_DIM>::zeros();
        x[0] = pos.x;
        x[1] = pos.y;
        x[2] = g.plane_height(pos.x, pos.y) + w.nominal_height;
        x[3] = vel.x;
        x[4] = vel.y;
        // roll/pitch reference zero; yaw wrapped to the branch nearest the
        // current yaw.
        x[8] = wrap_angle_near(yaw, yaw0);
        x[11] = cmd.yaw_rate;
        x[12] = x_t.step_location.x;
        x[13] = x_t.step_location.y;
        x[14] = x_t.step_location.z;
        states.push(x);
    }

    // Wrench reference: direction stance foot -> CoM, vertical force Mg.
    let weight = p.mass * p.gravity;
    let dir = x_t.com_position - g.stance_position;
    let force = if dir.z > 0.05 {
        dir * (weight / dir.z)
    } else {
        Vector3::new(0.0, 0.0, weight)
    };
    let mut wrench = SVector::<f64, CONTROL_DIM>::zeros();
    wrench.fixed_rows_mut::<3>(0).copy_from(&force);

    // Raibert-style footstep targets for the next two touchdowns.
    let v_now = Vector2::new(x_t.com_velocity.x, x_t.com_velocity.y);
    let vel_cmd_world = yaw_rotation(yaw0) * Vector3::new(cmd.vx, cmd.vy, 0.0);
    let v_des = Vector2::new(vel_cmd_world.x, vel_cmd_world.y);
    let t_remaining = (w.stance_duration - g.time_in_stance).max(0.0);
    let com_xy = Vector2::new(x_t.com_position.x, x_t.com_position.y);
    let mut step_targets = [Vector3::zeros(); 2];
    let mut swing_side = g.stance_foot.other();
    for (i, target) in step_targets.iter_mut().enumerate() {
        let touchdown_time = t_remaining + i as f64 * w.stance_duration;
        let projected = com_xy + v_now * touchdown_time;
        let offset_local = Vector3::new(0.0, swing_side.lateral_sign() * w.lateral_offset, 0.0);
        let offset_world = yaw_rotation(yaw0) * offset_local;
        let tip_local = Vector3::new(
            w.tip_compensation * x_t.rpy.y.clamp(-1.0, 1.0),
            -w.tip_compensation * x_t.rpy.x.clamp(-1.0, 1.0),
            0.0,
        );
        let tip_world = yaw_rotation(yaw0) * tip_local;
        let xy = projected
            + v_des * (w.stance_duration / 2.0)
            + (v_now - v_des) * w.raibert_gain
            + Vector2::new(offset_world.x, offset_world.y)
            + Vector2::new(tip_world.x, tip_world.y);
        *target = Vector3::new(xy.x, xy.y, g.plane_height(xy.x, xy.y));
        swing_side = swing_side.other();
    }

    Reference { states, wrench, step_targets }
}

/// Index helpers over the packed decision vector.
#[derive(Clone, Copy, Debug)]
pub struct DecisionLayout {
    pub horizon: usize,
}

impl DecisionLayout {
    pub fn num_vars(&self) -> usize {
        self.horizon * VARS_PER_STAGE + 6
    }

    /// Offset of `u_k`, k in `0..N`.
    pub fn wrench(&self, k: usize) -> usize {
        debug_assert!(k < self.horizon);
        k * VARS_PER_STAGE
    }

    /// Offset of `x_k`, k in `1..=N`.
    pub fn state(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon);
        6 + (k - 1) * VARS_PER_STAGE
    }

    /// Offset of `dc_i`, i in `1..=2`.
    pub fn step(&self, i: usize) -> usize {
        debug_assert!(i == 1 || i == 2);
        self.horizon * VARS_PER_STAGE + 3 * (i - 1)
    }

    pub fn pack(
        &self,
        wrenches: &[SVector<f64, CONTROL_DIM>],
        states: &[SVector<f64, STATE_DIM>],
        dc1: &Vector3<f64>,
        dc2: &Vector3<f64>,
    ) -> DVector<f64> {
        assert_eq!(wrenches.len(), self.horizon);
        assert_eq!(states.len(), self.horizon);
        let mut z = DVector::zeros(self.num_vars());
        for k in 0..self.horizon {
            z.rows_mut(self.wrench(k), CONTROL_DIM)
                .copy_from_slice(wrenches[k].as_slice());
            z.rows_mut(self.state(k + 1), STATE_DIM)
                .copy_from_slice(states[k].as_slice());
        }
        z.rows_mut(self.step(1), 3).copy_from_slice(dc1.as_slice());
        z.rows_mut(self.step(2), 3).copy_from_slice(dc2.as_slice());
        z
    }

    #[allow(clippy::type_complexity)]
    pub fn unpack(
        &self,
        z: &DVector<f64>,
    ) -> (
        Vec<SVector<f64, CONTROL_DIM>>,
        Vec<SVector<f64, STATE_DIM>>,
        Vector3<f64>,
        Vector3<f64>,
    ) {
        assert_eq!(z.len(), self.num_vars());
        let mut wrenches = Vec::with_capacity(self.horizon);
        let mut states = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            wrenches.push(SVector::from_column_slice(
                z.rows(self.wrench(k), CONTROL_DIM).as_slice(),
            ));
            states.push(SVector::from_column_slice(
                z.rows(self.state(k + 1), STATE_DIM).as_slice(),
            ));
        }
        let dc1 = Vector3::from_column_slice(z.rows(self.step(1), 3).as_slice());
        let dc2 = Vector3::from_column_slice(z.rows(self.step(2), 3).as_slice());
        (wrenches, states, dc1, dc2)
    }
}

/// Row bookkeeping of the assembled QP, for diagnostics and tests.
#[derive(Clone, Debug)]
pub struct MpcQpInfo {
    pub layout: DecisionLayout,
    /// Row ranges inside the equality block.
    pub dynamics_rows: std::ops::Range<usize>,
    pub plane_rows: std::ops::Range<usize>,
    pub roll_rows: std::ops::Range<usize>,
    /// Row ranges inside the inequality block.
    pub cwc_rows: std::ops::Range<usize>,
    pub leg_rows: std::ops::Range<usize>,
}

/// Assemble the full MPC QP at one operating point.
pub fn assemble_mpc_qp(
    x_t: &AsrbmState,
    refs: &Reference,
    eta: &GaitIndicator,
    g: &GaitState,
    cone: &WrenchCone,
    w: &MpcWeights,
    lin: &LinearizedDynamics,
) -> (QpProblem, MpcQpInfo) {
    let n = w.horizon;
    let layout = DecisionLayout { horizon: n };
    let nv = layout.num_vars();
    assert_eq!(refs.states.len(), n, "reference horizon mismatch");
    assert_eq!(eta.eta.len(), n, "gait indicator horizon mismatch");

    let mut p = QpProblem::new(nv);

    // --- Cost ---
    let decay = |base: &Vector3<f64>, rate: f64, k: usize| base * rate.powi(k as i32);
    let mut q_diag = SVector::<f64, STATE_DIM>::zeros();
    for k in 1..=n {
        let qp_pos = decay(&w.q_com_pos, w.decay_com_pos, k);
        let qp_vel = decay(&w.q_com_vel, w.decay_com_vel, k);
        let qp_rpy = decay(&w.q_rpy, w.decay_rpy, k);
        let qp_rate = decay(&w.q_rpy_rate, w.decay_rpy_rate, k);
        for i in 0..3 {
            q_diag[i] = qp_pos[i];
            q_diag[3 + i] = qp_vel[i];
            q_diag[6 + i] = qp_rpy[i];
            q_diag[9 + i] = qp_rate[i];
            q_diag[12 + i] = 0.0;
        }
        let xo = layout.state(k);
        let x_ref = &refs.states[k - 1];
        for i in 0..STATE_DIM {
            p.h[(xo + i, xo + i)] += q_diag[i];
            p.g[xo + i] -= q_diag[i] * x_ref[i];
        }
    }
    for k in 0..n {
        let rf = decay(&w.r_force, w.decay_force, k);
        let rm = decay(&w.r_moment, w.decay_moment, k);
        let uo = layout.wrench(k);
        for i in 0..3 {
            p.h[(uo + i, uo + i)] += rf[i];
            p.g[uo + i] -= rf[i] * refs.wrench[i];
            p.h[(uo + 3 + i, uo + 3 + i)] += rm[i];
            p.g[uo + 3 + i] -= rm[i] * refs.wrench[3 + i];
        }
    }
    // Footstep regularization: ||c_ref_i - (c + sum_j<=i dc_j)||^2_{R_step}.
    let c0 = x_t.step_location;
    let t1 = refs.step_targets[0] - c0;
    let t2 = refs.step_targets[1] - c0;
    let d1 = layout.step(1);
    let d2 = layout.step(2);
    for i in 0..3 {
        let r = w.r_step[i];
        p.h[(d1 + i, d1 + i)] += r;
        p.g[d1 + i] -= r * t1[i];
        p.h[(d1 + i, d1 + i)] += r;
        p.h[(d2 + i, d2 + i)] += r;
        p.h[(d1 + i, d2 + i)] += r;
        p.h[(d2 + i, d1 + i)] += r;
        p.g[d1 + i] -= r * t2[i];
        p.g[d2 + i] -= r * t2[i];
    }

    // --- Equalities ---
    let me = STATE_DIM * n + 2 + n;
    p.a_eq = DMatrix::zeros(me, nv);
    p.b_eq = DVector::zeros(me);

    let a = &lin.a;
    let b = &lin.b;
    let d = &lin.d;
    let a_c = lin.step_columns();

    // Dynamics rows: x_{k+1} - A x_k - B u_k - eta_k A_c dc = d  (k = 0
    // substitutes x_0 = x_t into the right-hand side).
    for k in 0..n {
        let row0 = STATE_DIM * k;
        let xo_next = layout.state(k + 1);
        for i in 0..STATE_DIM {
            p.a_eq[(row0 + i, xo_next + i)] = 1.0;
        }
        let uo = layout.wrench(k);
        for i in 0..STATE_DIM {
            for j in 0..CONTROL_DIM {
                p.a_eq[(row0 + i, uo + j)] = -b[(i, j)];
            }
        }
        if k == 0 {
            let ax = a * x_t.to_vector();
            for i in 0..STATE_DIM {
                p.b_eq[row0 + i] = d[i] + ax[i];
            }
        } else {
            let xo = layout.state(k);
            for i in 0..STATE_DIM {
                for j in 0..STATE_DIM {
                    p.a_eq[(row0 + i, xo + j)] = -a[(i, j)];
                }
                p.b_eq[row0 + i] = d[i];
            }
        }
        if eta.eta[k] {
            let dci = if Some(k) == eta.first_switch { d1 } else { d2 };
            for i in 0..STATE_DIM {
                for j in 0..3 {
                    p.a_eq[(row0 + i, dci + j)] = -a_c[(i, j)];
                }
            }
        }
    }

    // Terrain-plane rows on both planned steps.
    let plane0 = STATE_DIM * n;
    for j in 0..3 {
        p.a_eq[(plane0, d1 + j)] = g.plane_row[j];
        p.a_eq[(plane0 + 1, d1 + j)] = g.plane_row[j];
        p.a_eq[(plane0 + 1, d2 + j)] = g.plane_row[j];
    }
    let plane_rhs = g.plane_rhs - g.plane_row.dot(&c0);
    p.b_eq[plane0] = plane_rhs;
    p.b_eq[plane0 + 1] = plane_rhs;

    // Roll-moment equality per stage, expressed on the world-frame wrench:
    // m_x^foot = m_world . (R_F e_x) = 0.
    let r_f = g.foot_rotation();
    let roll0 = plane0 + 2;
    let fx = r_f * Vector3::x();
    for k in 0..n {
        let uo = layout.wrench(k);
        for j in 0..3 {
            p.a_eq[(roll0 + k, uo + 3 + j)] = fx[j];
        }
    }

    // --- Inequalities ---
    let cwc_per_stage = cone.b_in.len();
    let mi = cwc_per_stage * n + 4 * w.leg_horizon;
    p.a_in = DMatrix::zeros(mi, nv);
    p.b_in = DVector::zeros(mi);

    // CWC rows act on the foot-frame wrench: A_in * blkdiag(R_F', R_F') u.
    let rt = r_f.transpose();
    let mut cwc_world = DMatrix::zeros(cwc_per_stage, CONTROL_DIM);
    for r in 0..cwc_per_stage {
        for c in 0..3 {
            let mut acc_f = 0.0;
            let mut acc_m = 0.0;
            for k in 0..3 {
                acc_f += cone.a_in[(r, k)] * rt[(k, c)];
                acc_m += cone.a_in[(r, 3 + k)] * rt[(k, c)];
            }
            cwc_world[(r, c)] = acc_f;
            cwc_world[(r, 3 + c)] = acc_m;
        }
    }
    for k in 0..n {
        let uo = layout.wrench(k);
        for r in 0..cwc_per_stage {
            for c in 0..CONTROL_DIM {
                p.a_in[(cwc_per_stage * k + r, uo + c)] = cwc_world[(r, c)];
            }
            p.b_in[cwc_per_stage * k + r] = cone.b_in[r];
        }
    }

    // Leg extension: |c + dc_1 - p_{c,k}|_{x/y} <= r_max + (1 - eta_k) M_b,
    // imposed for k = 1..N_le.
    let leg0 = cwc_per_stage * n;
    for k in 1..=w.leg_horizon {
        let slack = if eta.eta[k] { 0.0 } else { w.big_m };
        let xo = layout.state(k);
        for axis in 0..2 {
            let bound = w.leg_reach[axis] + slack;
            let row_p = leg0 + 4 * (k - 1) + 2 * axis;
            let row_m = row_p + 1;
            p.a_in[(row_p, d1 + axis)] = 1.0;
            p.a_in[(row_p, xo + axis)] = -1.0;
            p.b_in[row_p] = bound - c0[axis];
            p.a_in[(row_m, d1 + axis)] = -1.0;
            p.a_in[(row_m, xo + axis)] = 1.0;
            p.b_in[row_m] = bound + c0[axis];
        }
    }

    // Step-size bounds as box constraints on the dc variables.
    for i in 0..3 {
        if w.step_max[i].is_finite() {
            p.lower[d1 + i] = -w.step_max[i];
            p.upper[d1 + i] = w.step_max[i];
            p.lower[d2 + i] = -w.step_max[i];
            p.upper[d2 + i] = w.step_max[i];
        }
    }

    let info = MpcQpInfo {
        layout,
        dynamics_rows: 0..STATE_DIM * n,
        plane_rows: plane0..plane0 + 2,
        roll_rows: roll0..roll0 + n,
        cwc_rows: 0..cwc_per_stage * n,
        leg_rows: leg0..mi,
    };
    (p, info)
}

/// Output of one MPC tick.
#[derive(Clone, Debug)]
pub struct MpcOutput {
    /// World-frame wrench command for the current tick.
    pub wrench: GroundWrench,
    pub dc1: Vector3<f64>,
    pub dc2: Vector3<f64>,
    /// Planned absolute footstep locations `c + dc_1` and `c + dc_1 + dc_2`.
    pub step_target_1: Vector3<f64>,
    pub step_target_2: Vector3<f64>,
    pub predicted: Vec<AsrbmState>,
    pub status: QpStatus,
    /// The solver failed and the previous tick's plan was reused.
    pub fallback: bool,
    pub solve_time: f64,
    pub iterations: usize,
}

/// Receding-horizon controller instance: owns the QP workspace, the
/// previously applied wrench (linearization point) and the fallback plan.
pub struct MpcController {
    pub weights: MpcWeights,
    pub params: SrbmParams,
    cone: WrenchCone,
    solver: QpSolver,
    u_prev: GroundWrench,
    last_output: Option<MpcOutput>,
    warm: Option<WarmStart>,
}

impl MpcController {
    pub fn new(weights: MpcWeights, params: SrbmParams, cone: WrenchCone) -> Self {
        weights.validate().expect("invalid MPC weights");
        let u0 = GroundWrench::new(
            Vector3::new(0.0, 0.0, params.mass * params.gravity),
            Vector3::zeros(),
            WrenchFrame::World,
        );
        MpcController {
            weights,
            params,
            cone,
            solver: QpSolver::new(),
            u_prev: u0,
            last_output: None,
            warm: None,
        }
    }

    pub fn cone(&self) -> &WrenchCone {
        &self.cone
    }

    /// Reset the linearization wrench and fallback plan (scenario start).
    pub fn reset(&mut self) {
        self.u_prev = GroundWrench::new(
            Vector3::new(0.0, 0.0, self.params.mass * self.params.gravity),
            Vector3::zeros(),
            WrenchFrame::World,
        );
        self.last_output = None;
        self.warm = None;
    }

    /// One control tick: linearize at the current state and the previously
    /// applied wrench, build references, assemble and solve. On solver
    /// failure the previous plan is returned with `fallback` set; the loop
    /// never aborts.
    pub fn solve(&mut self, x_t: &AsrbmState, cmd: &VelocityCommand, g: &GaitState) -> MpcOutput {
        let start = Instant::now();
        let lin = match linearize_discretize(x_t, &self.u_prev, self.weights.ts, &self.params) {
            Ok(l) => l,
            Err(_) => {
                let dt = start.elapsed().as_secs_f64();
                return self.fallback_output(QpStatus::NumericalFailure, dt);
            }
        };
        let eta = build_gait_indicator(g, &self.weights);
        let refs = build_reference(x_t, cmd, g, &self.weights, &self.params);
        let (qp, info) = assemble_mpc_qp(x_t, &refs, &eta, g, &self.cone, &self.weights, &lin);
        let sol =
            self.solver
                .solve_warm(&qp, self.weights.qp_tol, self.weights.qp_max_iter, self.warm.as_ref());

        if sol.status != QpStatus::Optimal {
            let dt = start.elapsed().as_secs_f64();
            return self.fallback_output(sol.status, dt);
        }
        self.warm = Some(WarmStart::from(&sol));

        // The plan must satisfy the dynamics recursion and plane equalities
        // to well below the solver tolerance; when the interior-point
        // residual is not already tiny, project the iterate onto the
        // equality manifold (least-norm correction).
        let mut z = sol.z;
        let residual = &qp.b_eq - &qp.a_eq * &z;
        if residual.amax() > 1e-10 {
            let aat = &qp.a_eq * qp.a_eq.transpose();
            if let Some(chol) = nalgebra::Cholesky::new(aat) {
                let y = chol.solve(&residual);
                z += qp.a_eq.tr_mul(&y);
            }
        }

        let (wrenches, states, dc1, dc2) = info.layout.unpack(&z);
        let wrench = GroundWrench::from_vector(&wrenches[0], WrenchFrame::World);
        let predicted = states.iter().map(AsrbmState::from_vector).collect();
        let c0 = x_t.step_location;
        let out = MpcOutput {
            wrench,
            dc1,
            dc2,
            step_target_1: c0 + dc1,
            step_target_2: c0 + dc1 + dc2,
            predicted,
            status: sol.status,
            fallback: false,
            solve_time: start.elapsed().as_secs_f64(),
            iterations: sol.iterations,
        };
        self.u_prev = wrench;
        self.last_output = Some(out.clone());
        out
    }

    fn fallback_output(&mut self, status: QpStatus, elapsed: f64) -> MpcOutput {
        let mut out = match &self.last_output {
            Some(prev) => prev.clone(),
            None => MpcOutput {
                wrench: self.u_prev,
                dc1: Vector3::zeros(),
                dc2: Vector3::zeros(),
                step_target_1: Vector3::zeros(),
                step_target_2: Vector3::zeros(),
                predicted: Vec::new(),
                status,
                fallback: true,
                solve_time: elapsed,
                iterations: 0,
            },
        };
        out.status = status;
        out.fallback = true;
        out.solve_time = elapsed;
        self.last_output = Some(out.clone());
        out
    }
}
