//! Event-based gait finite state machine: touchdown detection with
//! debounce and timeout, stance bookkeeping, tangent-plane refitting and
//! the torso-height failure rule.

use super::terrain::{fit_tangent_plane, Terrain};
use crate::mpc::Side;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FsmParams {
    pub stance_duration: f64,
    /// Touchdowns are ignored before `debounce * stance_duration`.
    pub debounce: f64,
    /// A touchdown is forced at `timeout * stance_duration`.
    pub timeout: f64,
    /// Failure when torso height above local terrain drops below this.
    pub min_torso_clearance: f64,
}

impl Default for FsmParams {
    fn default() -> Self {
        FsmParams {
            stance_duration: 0.38,
            debounce: 0.5,
            timeout: 1.5,
            min_torso_clearance: 0.3,
        }
    }
}

/// Simulation clock plus gait phase.
#[derive(Clone, Debug)]
pub struct FsmState {
    pub t: f64,
    pub stance: Side,
    pub phase_elapsed: f64,
    pub stance_position: Vector3<f64>,
    pub stance_yaw: f64,
    pub plane_row: Vector3<f64>,
    pub plane_rhs: f64,
    /// Where the current swing foot lifted off (previous stance location).
    pub swing_start: Vector3<f64>,
    pub failure: Option<String>,
    pub touchdown_count: usize,
    /// Duration of the most recently completed swing phase.
    pub last_swing_duration: f64,
    /// Planned landing position of the last completed touchdown.
    pub last_touchdown: Vector3<f64>,
}

impl FsmState {
    pub fn new(stance: Side, stance_position: Vector3<f64>, terrain: &Terrain) -> Self {
        let plane = fit_tangent_plane(terrain, &Vector2::new(stance_position.x, stance_position.y));
        FsmState {
            t: 0.0,
            stance,
            phase_elapsed: 0.0,
            stance_position,
            stance_yaw: 0.0,
            plane_row: plane.row,
            plane_rhs: plane.rhs,
            swing_start: stance_position,
            failure: None,
            touchdown_count: 0,
            last_swing_duration: 0.0,
            last_touchdown: stance_position,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FsmEvent {
    None,
    Touchdown {
        position: Vector3<f64>,
        /// Set when the timeout forced the touchdown.
        forced: bool,
    },
    Failure(String),
}

/// Advance the state machine by one simulation step.
///
/// Touchdown is declared when the swing foot reaches the terrain while
/// moving downward after the debounce window; the timeout forces one at the
/// current foot location projected to the terrain. Failure is declared when
/// the torso drops below the clearance threshold above the local terrain.
pub fn step_fsm(
    fsm: &mut FsmState,
    swing_position: &Vector3<f64>,
    swing_velocity_z: f64,
    torso_position: &Vector3<f64>,
    body_yaw: f64,
    terrain: &Terrain,
    dt: f64,
    params: &FsmParams,
) -> FsmEvent {
    if fsm.failure.is_some() {
        return FsmEvent::Failure(fsm.failure.clone().unwrap());
    }
    fsm.t += dt;
    fsm.phase_elapsed += dt;

    let ground = terrain.height(torso_position.x, torso_position.y);
    if torso_position.z - ground < params.min_torso_clearance {
        let reason = "height_threshold".to_string();
        fsm.failure = Some(reason.clone());
        return FsmEvent::Failure(reason);
    }

    let terrain_z = terrain.height(swing_position.x, swing_position.y);
    let debounced = fsm.phase_elapsed >= params.debounce * params.stance_duration;
    let timed_out = fsm.phase_elapsed >= params.timeout * params.stance_duration;

    let (touchdown, forced, position) = if debounced
        && swing_position.z <= terrain_z
        && swing_velocity_z < 0.0
    {
        (true, false, *swing_position)
    } else if timed_out {
        (
            true,
            true,
            Vector3::new(swing_position.x, swing_position.y, terrain_z),
        )
    } else {
        (false, false, Vector3::zeros())
    };

    if !touchdown {
        return FsmEvent::None;
    }

    fsm.last_swing_duration = fsm.phase_elapsed;
    fsm.swing_start = fsm.stance_position;
    fsm.stance = fsm.stance.other();
    fsm.stance_position = position;
    fsm.stance_yaw = body_yaw;
    fsm.phase_elapsed = 0.0;
    fsm.touchdown_count += 1;
    fsm.last_touchdown = position;
    let plane = fit_tangent_plane(terrain, &Vector2::new(position.x, position.y));
    fsm.plane_row = plane.row;
    fsm.plane_rhs = plane.rhs;

    FsmEvent::Touchdown { position, forced }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> FsmParams {
        FsmParams::default()
    }

    #[test]
    fn debounce_blocks_early_contact() {
        let terrain = Terrain::Flat;
        let mut fsm = FsmState::new(Side::Right, Vector3::zeros(), &terrain);
        // Foot on the ground moving down immediately after liftoff: ignored.
        let ev = step_fsm(
            &mut fsm,
            &Vector3::new(0.1, 0.0, -0.001),
            -0.1,
            &Vector3::new(0.0, 0.0, 0.6),
            0.0,
            &terrain,
            0.001,
            &params(),
        );
        assert_eq!(ev, FsmEvent::None);

        // Past the debounce window the same contact fires.
        fsm.phase_elapsed = 0.5 * 0.38;
        let ev = step_fsm(
            &mut fsm,
            &Vector3::new(0.1, 0.0, -0.001),
            -0.1,
            &Vector3::new(0.0, 0.0, 0.6),
            0.0,
            &terrain,
            0.001,
            &params(),
        );
        assert!(matches!(ev, FsmEvent::Touchdown { forced: false, .. }));
        assert_eq!(fsm.stance, Side::Left);
        assert_eq!(fsm.touchdown_count, 1);
    }

    #[test]
    fn timeout_forces_touchdown() {
        let terrain = Terrain::Flat;
        let mut fsm = FsmState::new(Side::Left, Vector3::zeros(), &terrain);
        fsm.phase_elapsed = 1.5 * 0.38;
        let ev = step_fsm(
            &mut fsm,
            &Vector3::new(0.2, 0.1, 0.05), // still above ground
            0.2,                           // even moving up
            &Vector3::new(0.0, 0.0, 0.6),
            0.0,
            &terrain,
            0.001,
            &params(),
        );
        match ev {
            FsmEvent::Touchdown { position, forced } => {
                assert!(forced);
                // Projected onto the terrain.
                assert_eq!(position.z, 0.0);
            }
            other => panic!("expected forced touchdown, got {other:?}"),
        }
    }

    #[test]
    fn torso_below_threshold_fails() {
        let terrain = Terrain::Flat;
        let mut fsm = FsmState::new(Side::Left, Vector3::zeros(), &terrain);
        let ev = step_fsm(
            &mut fsm,
            &Vector3::new(0.0, 0.0, 0.2),
            0.0,
            &Vector3::new(0.0, 0.0, 0.29),
            0.0,
            &terrain,
            0.001,
            &params(),
        );
        assert_eq!(ev, FsmEvent::Failure("height_threshold".into()));
        assert!(fsm.failure.is_some());
    }
}
