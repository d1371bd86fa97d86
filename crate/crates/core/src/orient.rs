//! Roll-pitch-yaw rotation helpers shared by the reduced-order model, the
//! controllers and the simulator.
//!
//! Convention used everywhere in this crate: extrinsic x-y-z, i.e.
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`, with angles stored as
//! `[roll, pitch, yaw]`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

/// Skew-symmetric cross-product matrix, `skew(a) * b == a x b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation about the world z axis.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix()
}

/// Body-to-world rotation from roll-pitch-yaw angles.
pub fn rpy_to_rotation(rpy: &Vector3<f64>) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), rpy.x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), rpy.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), rpy.z);
    *(rz * ry * rx).matrix()
}

/// Extract roll-pitch-yaw from a rotation matrix (pitch in (-pi/2, pi/2)).
pub fn rotation_to_rpy(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(2, 0)]).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

/// Roll-pitch-yaw of a unit quaternion.
pub fn quat_to_rpy(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    rotation_to_rpy(q.to_rotation_matrix().matrix())
}

/// Partial derivative of the rotation matrix with respect to one of the
/// roll-pitch-yaw angles (`axis` = 0 roll, 1 pitch, 2 yaw).
///
/// For a rotation about a fixed axis, `d/da Ra(a) = skew(axis) * Ra(a)`, so
/// the chain factors stay closed form.
pub fn rpy_rotation_partial(rpy: &Vector3<f64>, axis: usize) -> Matrix3<f64> {
    let rx = *Rotation3::from_axis_angle(&Vector3::x_axis(), rpy.x).matrix();
    let ry = *Rotation3::from_axis_angle(&Vector3::y_axis(), rpy.y).matrix();
    let rz = *Rotation3::from_axis_angle(&Vector3::z_axis(), rpy.z).matrix();
    match axis {
        0 => rz * ry * (skew(&Vector3::x()) * rx),
        1 => rz * (skew(&Vector3::y()) * ry) * rx,
        2 => (skew(&Vector3::z()) * rz) * ry * rx,
        _ => panic!("rpy axis index out of range: {axis}"),
    }
}

/// Map from roll-pitch-yaw rates to the world-frame angular velocity:
/// `omega_world = euler_rate_map(rpy) * rpy_dot`.
pub fn euler_rate_map(rpy: &Vector3<f64>) -> Matrix3<f64> {
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), rpy.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), rpy.z);
    let col0 = (rz * ry) * Vector3::x();
    let col1 = rz * Vector3::y();
    let col2 = Vector3::z();
    Matrix3::from_columns(&[col0, col1, col2])
}

/// Roll-pitch-yaw rates corresponding to a world-frame angular velocity.
/// Valid away from the `|pitch| = pi/2` singularity of the Euler chart.
pub fn omega_world_to_euler_rates(rpy: &Vector3<f64>, omega: &Vector3<f64>) -> Vector3<f64> {
    euler_rate_map(rpy)
        .lu()
        .solve(omega)
        .expect("euler rate map singular (pitch at +/- pi/2)")
}

/// Rotation-vector logarithm of `r`, the axis-angle vector `w` with
/// `exp(skew(w)) == r`. Robust near the identity, where round-off can push
/// the trace past 3 (products like `R R'` of nearly equal rotations).
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
    let s = w.norm(); // sin(theta)
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if s > 1e-9 {
        w * (theta / s)
    } else if c > 0.0 {
        // Near identity: log(R) ~ skew part to first order.
        w
    } else {
        // Near pi: recover the axis from the symmetric part.
        let diag = Vector3::new(
            ((r[(0, 0)] + 1.0) * 0.5).max(0.0).sqrt(),
            ((r[(1, 1)] + 1.0) * 0.5).max(0.0).sqrt(),
            ((r[(2, 2)] + 1.0) * 0.5).max(0.0).sqrt(),
        );
        let mut axis = diag;
        if axis.x >= axis.y && axis.x >= axis.z {
            axis.y = axis.y.copysign(r[(0, 1)]);
            axis.z = axis.z.copysign(r[(0, 2)]);
        } else if axis.y >= axis.z {
            axis.x = axis.x.copysign(r[(0, 1)]);
            axis.z = axis.z.copysign(r[(1, 2)]);
        } else {
            axis.x = axis.x.copysign(r[(0, 2)]);
            axis.y = axis.y.copysign(r[(1, 2)]);
        }
        if axis.norm() > 1e-12 {
            axis.normalize() * theta
        } else {
            Vector3::zeros()
        }
    }
}

/// Wrap `angle` to the representative nearest `reference` (same branch of
/// the circle), so consecutive yaw targets never jump by 2*pi.
pub fn wrap_angle_near(angle: f64, reference: f64) -> f64 {
    let mut a = angle;
    let two_pi = 2.0 * std::f64::consts::PI;
    while a - reference > std::f64::consts::PI {
        a -= two_pi;
    }
    while a - reference < -std::f64::consts::PI {
        a += two_pi;
    }
    a
}
