//! Locomotion-control engine for a line-foot biped: an orientation-aware
//! convex MPC over the augmented single-rigid-body model (footstep locations
//! as decision variables), a whole-body task-space QP controller on the
//! full-order model, and a hybrid closed-loop simulator with terrain and
//! disturbance injection.
//!
//! Module map:
//! - [`srbm`]: augmented single-rigid-body dynamics, analytic linearization,
//!   touchdown reset.
//! - [`contact`]: line-foot contact wrench cone and a heel/toe feasibility
//!   oracle.
//! - [`qp`]: dense convex QP solver (primal-dual interior point) with KKT
//!   certification.
//! - [`mpc`]: receding-horizon QP transcription with gait indicator, terrain
//!   plane and kinematic constraints.
//! - [`rbd`]: rigid-body dynamics kernel (CRBA, RNEA, Jacobians, centroidal
//!   momentum, impact map) on a parsed kinematic tree.
//! - [`tsc`]: task-space controller QP (torso, swing foot, wrench tracking,
//!   centroidal momentum damping).
//! - [`sim`]: event-based hybrid simulation with two plant options, terrain
//!   height fields and disturbance schedules.

pub mod contact;
pub mod mpc;
pub mod orient;
pub mod qp;
pub mod rbd;
pub mod sim;
pub mod srbm;
pub mod tsc;

pub use contact::{FootGeometry, WrenchCone};
pub use mpc::{GaitState, MpcController, MpcOutput, MpcWeights};
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use rbd::{JointState, RobotModel};
pub use sim::{ScenarioConfig, Terrain, TrajectoryLog};
pub use srbm::{AsrbmState, GroundWrench, LinearizedDynamics, SrbmParams, WrenchFrame};
pub use tsc::{TscController, TscWeights};
