//! Rigid-body dynamics kernel for the full-order model: model parsing,
//! mass matrix (CRBA), bias forces (RNEA), frame Jacobians with drift
//! terms, centroidal momentum, the plastic impact map and energy
//! accounting.

mod algorithms;
mod model;
pub mod spatial;

pub use algorithms::{
    bias_forces, centroidal_momentum, com_position, com_position_cached, com_velocity,
    config_derivative, contact_point_jacobian, forward_dynamics, forward_kinematics,
    frame_jacobian, frame_jacobian_cached, frame_pose, impact_map, mass_matrix, rnea,
    total_energy, ImpactResult, Kinematics,
};
pub use model::{parse_model, Body, Frame, JointKind, JointState, ModelError, RobotModel};
