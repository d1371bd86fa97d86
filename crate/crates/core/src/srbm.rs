//! Augmented single-rigid-body model (aSRBM).
//!
//! The reduced-order state is 15-dimensional:
//! `x = (p_c, v_c, Theta, Theta_dot, c)` — CoM position and velocity,
//! roll-pitch-yaw and rates, and the current step location `c`. The step
//! location has zero continuous dynamics and jumps only through
//! [`apply_step_reset`] at touchdown, which is what lets the MPC treat a
//! step change as a decision variable acting through the last three state
//! columns.

use crate::orient::{rpy_rotation_partial, rpy_to_rotation, skew};
use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 15;
pub const CONTROL_DIM: usize = 6;

pub type StateVector = SVector<f64, STATE_DIM>;

#[derive(Debug, Error)]
pub enum SrbmError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("state invalid: {0}")]
    InvalidState(String),
    #[error("world-frame inertia is numerically singular")]
    SingularInertia,
}

/// Lumped-mass model parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SrbmParams {
    /// Total mass (kg).
    pub mass: f64,
    /// Body-frame inertia tensor about the CoM (kg m^2), symmetric positive
    /// definite.
    pub inertia_body: Matrix3<f64>,
    /// Gravity magnitude (m/s^2), acting along -z.
    pub gravity: f64,
}

impl SrbmParams {
    pub fn new(mass: f64, inertia_body: Matrix3<f64>, gravity: f64) -> Result<Self, SrbmError> {
        if !(mass > 0.0) {
            return Err(SrbmError::InvalidParams(format!("mass {mass} must be positive")));
        }
        if !(gravity > 0.0) {
            return Err(SrbmError::InvalidParams(format!("gravity {gravity} must be positive")));
        }
        let sym_err = (inertia_body - inertia_body.transpose()).amax();
        if sym_err > 1e-9 * inertia_body.amax().max(1.0) {
            return Err(SrbmError::InvalidParams("inertia tensor not symmetric".into()));
        }
        if nalgebra::Cholesky::new(inertia_body).is_none() {
            return Err(SrbmError::InvalidParams("inertia tensor not positive definite".into()));
        }
        Ok(SrbmParams { mass, inertia_body, gravity })
    }

    /// World-frame inertia `R I_b R'` at the given orientation.
    pub fn inertia_world(&self, rpy: &Vector3<f64>) -> Matrix3<f64> {
        let r = rpy_to_rotation(rpy);
        r * self.inertia_body * r.transpose()
    }

    pub fn gravity_accel(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }
}

/// Frame a ground wrench is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WrenchFrame {
    World,
    Foot,
}

/// Ground reaction wrench: contact force and moment.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GroundWrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
    pub frame: WrenchFrame,
}

impl GroundWrench {
    pub fn new(force: Vector3<f64>, moment: Vector3<f64>, frame: WrenchFrame) -> Self {
        GroundWrench { force, moment, frame }
    }

    pub fn zero(frame: WrenchFrame) -> Self {
        GroundWrench::new(Vector3::zeros(), Vector3::zeros(), frame)
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.moment.iter()).all(|v| v.is_finite())
    }

    /// Stack as `[F; m]`.
    pub fn as_vector(&self) -> SVector<f64, 6> {
        let mut v = SVector::<f64, 6>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.force);
        v.fixed_rows_mut::<3>(3).copy_from(&self.moment);
        v
    }

    pub fn from_vector(v: &SVector<f64, 6>, frame: WrenchFrame) -> Self {
        GroundWrench::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into(), frame)
    }
}

/// aSRBM state. Layout inside the packed vector:
/// `[p_c(0..3), v_c(3..6), rpy(6..9), rpy_dot(9..12), step(12..15)]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AsrbmState {
    pub com_position: Vector3<f64>,
    pub com_velocity: Vector3<f64>,
    pub rpy: Vector3<f64>,
    pub rpy_rate: Vector3<f64>,
    pub step_location: Vector3<f64>,
}

impl AsrbmState {
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.com_position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.com_velocity);
        x.fixed_rows_mut::<3>(6).copy_from(&self.rpy);
        x.fixed_rows_mut::<3>(9).copy_from(&self.rpy_rate);
        x.fixed_rows_mut::<3>(12).copy_from(&self.step_location);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        AsrbmState {
            com_position: x.fixed_rows::<3>(0).into(),
            com_velocity: x.fixed_rows::<3>(3).into(),
            rpy: x.fixed_rows::<3>(6).into(),
            rpy_rate: x.fixed_rows::<3>(9).into(),
            step_location: x.fixed_rows::<3>(12).into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// The Euler chart is valid only for `|roll|, |pitch| < pi/2`; violations
    /// are reported, not silently accepted.
    pub fn check_chart(&self) -> Result<(), SrbmError> {
        if !self.is_finite() {
            return Err(SrbmError::InvalidState("non-finite entries".into()));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if self.rpy.x.abs() >= half_pi || self.rpy.y.abs() >= half_pi {
            return Err(SrbmError::InvalidState(format!(
                "roll/pitch outside Euler chart: roll={}, pitch={}",
                self.rpy.x, self.rpy.y
            )));
        }
        Ok(())
    }
}

/// Continuous dynamics of the augmented model with the wrench in the world
/// frame:
/// ```text
/// d/dt (p_c, v_c, Theta, Theta_dot, c)
///   = (v_c, F/M + a_g, Theta_dot, I_w^{-1}(r x F + m), 0)
/// ```
/// with `r = c - p_c` and `I_w = R I_b R'`. The step location derivative is
/// exactly zero: the stance foot remains stationary between touchdowns.
pub fn srbm_dynamics(
    x: &AsrbmState,
    u: &GroundWrench,
    p: &SrbmParams,
) -> Result<StateVector, SrbmError> {
    assert_eq!(u.frame, WrenchFrame::World, "srbm_dynamics expects a world-frame wrench");
    if !x.is_finite() {
        return Err(SrbmError::InvalidState("non-finite state".into()));
    }
    if !u.is_finite() {
        return Err(SrbmError::InvalidState("non-finite wrench".into()));
    }

    let i_w = p.inertia_world(&x.rpy);
    let lu = i_w.lu();
    let r = x.step_location - x.com_position;
    let torque = r.cross(&u.force) + u.moment;
    let ang_acc = lu.solve(&torque).ok_or(SrbmError::SingularInertia)?;

    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&x.com_velocity);
    dx.fixed_rows_mut::<3>(3)
        .copy_from(&(u.force / p.mass + p.gravity_accel()));
    dx.fixed_rows_mut::<3>(6).copy_from(&x.rpy_rate);
    dx.fixed_rows_mut::<3>(9).copy_from(&ang_acc);
    // rows 12..15 stay exactly zero
    Ok(dx)
}

/// Discrete linear dynamics `x_{k+1} = A x_k + B u_k + d` produced by
/// linearizing about an operating point and integrating with forward Euler.
#[derive(Clone, Debug)]
pub struct LinearizedDynamics {
    pub a: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub b: SMatrix<f64, STATE_DIM, CONTROL_DIM>,
    pub d: StateVector,
    pub ts: f64,
}

impl LinearizedDynamics {
    /// The sub-matrix multiplying a step change: the last three columns of
    /// `A`. Its step-location rows are the identity, so `eta_k * A_c * dc`
    /// reproduces the touchdown jump `c+ = c- + dc` inside the prediction.
    pub fn step_columns(&self) -> SMatrix<f64, STATE_DIM, 3> {
        self.a.fixed_view::<STATE_DIM, 3>(0, 12).into_owned()
    }

    pub fn a_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(STATE_DIM, STATE_DIM, self.a.as_slice())
    }

    pub fn b_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(STATE_DIM, CONTROL_DIM, self.b.as_slice())
    }

    pub fn d_dyn(&self) -> DVector<f64> {
        DVector::from_column_slice(self.d.as_slice())
    }
}

/// Analytic Jacobian linearization of [`srbm_dynamics`] at `(x_t, u_t)`,
/// discretized with forward Euler at step `ts`:
/// `A = I + Ts df/dx`, `B = Ts df/du`, and `d` is the affine remainder that
/// makes the model exact at the operating point:
/// `A x_t + B u_t + d = x_t + Ts f(x_t, u_t)`.
pub fn linearize_discretize(
    x_t: &AsrbmState,
    u_t: &GroundWrench,
    ts: f64,
    p: &SrbmParams,
) -> Result<LinearizedDynamics, SrbmError> {
    assert!(ts > 0.0, "prediction step must be positive");
    let f0 = srbm_dynamics(x_t, u_t, p)?;

    let i_w = p.inertia_world(&x_t.rpy);
    let lu = i_w.lu();
    let r = x_t.step_location - x_t.com_position;
    let torque = r.cross(&u_t.force) + u_t.moment;
    let ang_acc = lu.solve(&torque).ok_or(SrbmError::SingularInertia)?;

    // Continuous-time Jacobians.
    let mut df_dx = SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
    let mut df_du = SMatrix::<f64, STATE_DIM, CONTROL_DIM>::zeros();

    // d(p_c_dot)/d(v_c) = I, d(Theta_dot)/d(Theta_dot) = I.
    df_dx.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    df_dx.fixed_view_mut::<3, 3>(6, 9).fill_with_identity();

    // Angular acceleration block: alpha = I_w^{-1} ((c - p_c) x F + m).
    let f_skew = skew(&u_t.force);
    let inv_f_skew_cols = {
        // I_w^{-1} [F]x computed column by column through the factorization.
        let mut m = Matrix3::zeros();
        for j in 0..3 {
            let col: Vector3<f64> = f_skew.column(j).into();
            m.set_column(j, &lu.solve(&col).ok_or(SrbmError::SingularInertia)?);
        }
        m
    };
    // d alpha / d p_c = +I_w^{-1} [F]x  (r depends on p_c with a minus sign,
    // and d(r x F)/dr = -[F]x).
    df_dx.fixed_view_mut::<3, 3>(9, 0).copy_from(&inv_f_skew_cols);
    // d alpha / d c = -I_w^{-1} [F]x.
    df_dx.fixed_view_mut::<3, 3>(9, 12).copy_from(&(-inv_f_skew_cols));
    // d alpha / d Theta_j = -I_w^{-1} (dI_w/dTheta_j) alpha.
    for j in 0..3 {
        let dr = rpy_rotation_partial(&x_t.rpy, j);
        let rmat = rpy_to_rotation(&x_t.rpy);
        let di_w = dr * p.inertia_body * rmat.transpose() + rmat * p.inertia_body * dr.transpose();
        let col = lu
            .solve(&(-(di_w * ang_acc)))
            .ok_or(SrbmError::SingularInertia)?;
        df_dx.fixed_view_mut::<3, 1>(9, 6 + j).copy_from(&col);
    }

    // Control Jacobian: v_c_dot w.r.t. F, alpha w.r.t. (F, m).
    let inv_mass = 1.0 / p.mass;
    for j in 0..3 {
        df_du[(3 + j, j)] = inv_mass;
    }
    let r_skew = skew(&r);
    for j in 0..3 {
        let col: Vector3<f64> = r_skew.column(j).into();
        let solved = lu.solve(&col).ok_or(SrbmError::SingularInertia)?;
        df_du.fixed_view_mut::<3, 1>(9, j).copy_from(&solved);
        let ej = Vector3::ith(j, 1.0);
        let solved_m = lu.solve(&ej).ok_or(SrbmError::SingularInertia)?;
        df_du.fixed_view_mut::<3, 1>(9, 3 + j).copy_from(&solved_m);
    }

    let a = SMatrix::<f64, STATE_DIM, STATE_DIM>::identity() + ts * df_dx;
    let b = ts * df_du;
    let xv = x_t.to_vector();
    let d = xv + ts * f0 - a * xv - b * u_t.as_vector();

    Ok(LinearizedDynamics { a, b, d, ts })
}

/// Touchdown reset: only the step location changes, `c <- c + dc`. The
/// continuous states pass through untouched (massless-leg assumption).
pub fn apply_step_reset(x: &AsrbmState, dc: &Vector3<f64>) -> AsrbmState {
    let mut out = *x;
    out.step_location += dc;
    out
}
