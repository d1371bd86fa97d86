//! Closed-loop integration checks on the reduced-order plant: ballistic
//! sanity, determinism, event timing, terrain consistency and the
//! forward-Euler prediction-order study. The long walking / disturbance /
//! wave scenarios live in the acceptance suite.

use nalgebra::{Matrix3, Vector3};
use stride_core::mpc::Side;
use stride_core::sim::{integrate_nonlinear, simulate, ScenarioConfig, Terrain};
use stride_core::srbm::{AsrbmState, GroundWrench, SrbmParams, WrenchFrame};

fn desk_params() -> SrbmParams {
    SrbmParams::new(
        24.0,
        Matrix3::from_diagonal(&Vector3::new(1.43, 1.30, 0.24)),
        9.81,
    )
    .unwrap()
}

#[test]
fn free_fall_follows_ballistic_arc() {
    let p = desk_params();
    let x0 = AsrbmState {
        com_position: Vector3::new(0.0, 0.0, 1.0),
        com_velocity: Vector3::zeros(),
        rpy: Vector3::zeros(),
        rpy_rate: Vector3::zeros(),
        step_location: Vector3::zeros(),
    };
    let u = GroundWrench::zero(WrenchFrame::World);
    let t = 0.4;
    let xf = integrate_nonlinear(&x0, &u, &p, t, 400).unwrap();
    let expected = 1.0 - 0.5 * 9.81 * t * t;
    assert!(
        (xf.com_position.z - expected).abs() < 1e-10,
        "z = {} vs {expected}",
        xf.com_position.z
    );
}

#[test]
fn identical_configs_give_bit_identical_logs() {
    let mut cfg = ScenarioConfig::default();
    cfg.name = "det".into();
    cfg.command.vx = 0.3;
    cfg.duration = 1.2;
    let mut bufs = Vec::new();
    for _ in 0..2 {
        let log = simulate(&cfg).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        bufs.push(buf);
    }
    assert_eq!(bufs[0], bufs[1], "logs differ between identical runs");
}

#[test]
fn flat_ground_touchdowns_near_schedule() {
    let mut cfg = ScenarioConfig::default();
    cfg.name = "timing".into();
    cfg.command.vx = 0.2;
    cfg.duration = 3.0;
    let log = simulate(&cfg).unwrap();
    assert!(log.failure.is_none());
    assert!(log.touchdowns >= 6);
    // After the start-up step every swing lasts one nominal stance within
    // a couple of integration steps.
    for (dur, _, _) in log.swing_records.iter().skip(1) {
        assert!(
            (dur - cfg.mpc.stance_duration).abs() <= 2.0 * cfg.dt_sim + 1e-9,
            "swing duration {dur}"
        );
    }
}

#[test]
fn touchdowns_land_on_the_terrain() {
    let mut cfg = ScenarioConfig::default();
    cfg.name = "landing".into();
    cfg.command.vx = 0.3;
    cfg.duration = 3.0;
    let log = simulate(&cfg).unwrap();
    for (_, landing, _) in &log.swing_records {
        // Flat terrain: the event-detection band is 2 dt |v_z| with the
        // descent bounded by the swing profile; allow a conservative band.
        assert!(
            landing.z.abs() < 2.0 * cfg.dt_sim * 1.0,
            "landing height {}",
            landing.z
        );
    }
}

#[test]
fn planned_steps_sit_on_the_plane() {
    let mut cfg = ScenarioConfig::default();
    cfg.name = "plane".into();
    cfg.command.vx = 0.3;
    cfg.duration = 2.0;
    let log = simulate(&cfg).unwrap();
    let mut checked = 0;
    for row in &log.rows {
        if row.status == "optimal" && row.event.is_empty() {
            // Flat terrain plane: z = 0.
            assert!(row.step_target.z.abs() < 1e-9, "plane residual {}", row.step_target.z);
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn one_step_prediction_is_second_order() {
    // Forward-Euler consistency: halving Ts twice from 0.04 s shrinks the
    // one-step prediction error with observed order >= 1.9.
    let mut means = Vec::new();
    for ts in [0.04, 0.02, 0.01] {
        let mut cfg = ScenarioConfig::default();
        cfg.name = format!("pred_{ts}");
        cfg.duration = 1.2;
        cfg.measure_prediction = true;
        cfg.mpc.ts = ts;
        cfg.dt_mpc = ts;
        cfg.command.vx = 0.2;
        cfg.start.com_velocity = [0.1, 0.0, 0.0];
        let log = simulate(&cfg).unwrap();
        let errs: Vec<f64> = log
            .rows
            .iter()
            .filter(|r| r.prediction_error >= 0.0 && r.t > 0.1)
            .map(|r| r.prediction_error)
            .collect();
        assert!(errs.len() > 10, "too few measurements at ts={ts}");
        means.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    // Observed order across the full 4x refinement (Ts halved twice).
    let order = (means[0] / means[2]).log2() / 2.0;
    assert!(order >= 1.9, "observed order {order:.2} (errors {means:?})");
}

#[test]
fn fullbody_stand_holds() {
    let path = format!("{}/../../configs/fullbody_stand.toml", env!("CARGO_MANIFEST_DIR"));
    let mut cfg = ScenarioConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    cfg.model_path = format!("{}/../../models/desk_biped.model", env!("CARGO_MANIFEST_DIR"));
    cfg.duration = 1.0;
    cfg.mpc.stance_duration = 10.0;
    let log = simulate(&cfg).unwrap();
    let s = log.summary((0.0, 1.0));
    assert!(s.survived, "failure: {:?}", s.failure);
    assert!(s.min_torso_height > 0.5, "min height {}", s.min_torso_height);
    assert!(s.max_abs_pitch < 0.05, "pitch {}", s.max_abs_pitch);
}

#[test]
fn stance_sides_alternate() {
    let mut cfg = ScenarioConfig::default();
    cfg.name = "alternate".into();
    cfg.command.vx = 0.2;
    cfg.duration = 2.5;
    let log = simulate(&cfg).unwrap();
    let mut last: Option<Side> = None;
    let mut switches = 0;
    for row in &log.rows {
        if row.event == "touchdown" {
            if let Some(prev) = last {
                assert_ne!(prev, row.stance, "stance failed to alternate");
            }
            last = Some(row.stance);
            switches += 1;
        }
    }
    assert!(switches >= 5);
}
