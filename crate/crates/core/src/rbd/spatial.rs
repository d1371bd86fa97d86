//! Minimal spatial (6D) algebra for the rigid-body kernel.
//!
//! Spatial vectors are ordered `[angular; linear]`. Each body works in its
//! own frame; [`SpatialTransform`] moves motions, forces and inertias
//! between a parent frame and a child frame.

use crate::orient::skew;
use nalgebra::{Matrix3, Vector3, Vector6};

/// Motion or force vector in Plucker coordinates `[angular; linear]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SpatialVec {
    pub ang: Vector3<f64>,
    pub lin: Vector3<f64>,
}

impl SpatialVec {
    pub fn new(ang: Vector3<f64>, lin: Vector3<f64>) -> Self {
        SpatialVec { ang, lin }
    }

    pub fn zero() -> Self {
        SpatialVec::default()
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(self.ang.x, self.ang.y, self.ang.z, self.lin.x, self.lin.y, self.lin.z)
    }

    pub fn dot(&self, other: &SpatialVec) -> f64 {
        self.ang.dot(&other.ang) + self.lin.dot(&other.lin)
    }

    /// Motion-cross-motion: `self x m`.
    pub fn cross_motion(&self, m: &SpatialVec) -> SpatialVec {
        SpatialVec {
            ang: self.ang.cross(&m.ang),
            lin: self.ang.cross(&m.lin) + self.lin.cross(&m.ang),
        }
    }

    /// Motion-cross-force: `self x* f`.
    pub fn cross_force(&self, f: &SpatialVec) -> SpatialVec {
        SpatialVec {
            ang: self.ang.cross(&f.ang) + self.lin.cross(&f.lin),
            lin: self.ang.cross(&f.lin),
        }
    }

    pub fn scale(&self, s: f64) -> SpatialVec {
        SpatialVec { ang: self.ang * s, lin: self.lin * s }
    }

    pub fn add(&self, other: &SpatialVec) -> SpatialVec {
        SpatialVec { ang: self.ang + other.ang, lin: self.lin + other.lin }
    }

    pub fn sub(&self, other: &SpatialVec) -> SpatialVec {
        SpatialVec { ang: self.ang - other.ang, lin: self.lin - other.lin }
    }
}

/// Pose of a child frame in a parent frame: `p_parent = rot * p_child + trans`.
#[derive(Clone, Copy, Debug)]
pub struct SpatialTransform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl SpatialTransform {
    pub fn identity() -> Self {
        SpatialTransform { rot: Matrix3::identity(), trans: Vector3::zeros() }
    }

    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        SpatialTransform { rot, trans }
    }

    /// Compose: `self` maps B->A, `other` maps C->B, result maps C->A.
    pub fn compose(&self, other: &SpatialTransform) -> SpatialTransform {
        SpatialTransform {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// Motion vector from child coordinates to parent coordinates.
    pub fn apply_motion(&self, m: &SpatialVec) -> SpatialVec {
        let ang = self.rot * m.ang;
        SpatialVec { ang, lin: self.rot * m.lin + self.trans.cross(&ang) }
    }

    /// Motion vector from parent coordinates to child coordinates.
    pub fn inv_apply_motion(&self, m: &SpatialVec) -> SpatialVec {
        SpatialVec {
            ang: self.rot.transpose() * m.ang,
            lin: self.rot.transpose() * (m.lin + m.ang.cross(&self.trans)),
        }
    }

    /// Force vector from child coordinates to parent coordinates.
    pub fn apply_force(&self, f: &SpatialVec) -> SpatialVec {
        let lin = self.rot * f.lin;
        SpatialVec { ang: self.rot * f.ang + self.trans.cross(&lin), lin }
    }

    /// Force vector from parent coordinates to child coordinates.
    pub fn inv_apply_force(&self, f: &SpatialVec) -> SpatialVec {
        SpatialVec {
            ang: self.rot.transpose() * (f.ang - self.trans.cross(&f.lin)),
            lin: self.rot.transpose() * f.lin,
        }
    }
}

/// Spatial inertia about the body-frame origin: mass, first moment
/// `h = m * com`, and rotational inertia `I` about the origin.
#[derive(Clone, Copy, Debug)]
pub struct SpatialInertia {
    pub mass: f64,
    pub h: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

impl SpatialInertia {
    /// Build from center-of-mass quantities: `i_com` is the rotational
    /// inertia about the CoM, `com` the CoM offset in the body frame.
    pub fn from_com(mass: f64, com: Vector3<f64>, i_com: Matrix3<f64>) -> Self {
        let cx = skew(&com);
        SpatialInertia {
            mass,
            h: mass * com,
            inertia: i_com - mass * (cx * cx),
        }
    }

    pub fn zero() -> Self {
        SpatialInertia { mass: 0.0, h: Vector3::zeros(), inertia: Matrix3::zeros() }
    }

    pub fn com(&self) -> Vector3<f64> {
        if self.mass > 0.0 {
            self.h / self.mass
        } else {
            Vector3::zeros()
        }
    }

    /// Momentum (a force-type vector) from a motion: `I v`.
    pub fn apply(&self, v: &SpatialVec) -> SpatialVec {
        SpatialVec {
            ang: self.inertia * v.ang + self.h.cross(&v.lin),
            lin: self.mass * v.lin - self.h.cross(&v.ang),
        }
    }

    pub fn add(&self, other: &SpatialInertia) -> SpatialInertia {
        SpatialInertia {
            mass: self.mass + other.mass,
            h: self.h + other.h,
            inertia: self.inertia + other.inertia,
        }
    }

    /// Re-express in the parent frame through the child-in-parent pose `x`.
    pub fn transform_to_parent(&self, x: &SpatialTransform) -> SpatialInertia {
        let r = &x.rot;
        let t = &x.trans;
        let rh = r * self.h;
        let h_p = rh + self.mass * t;
        let tx = skew(t);
        let rhx = skew(&rh);
        SpatialInertia {
            mass: self.mass,
            h: h_p,
            inertia: r * self.inertia * r.transpose() - rhx * tx - tx * rhx - self.mass * (tx * tx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn example_transform() -> SpatialTransform {
        let rot = *Rotation3::from_euler_angles(0.3, -0.2, 0.9).matrix();
        SpatialTransform::new(rot, Vector3::new(0.4, -0.1, 0.7))
    }

    #[test]
    fn motion_round_trip() {
        let x = example_transform();
        let m = SpatialVec::new(Vector3::new(0.1, 0.2, -0.3), Vector3::new(1.0, -2.0, 0.5));
        let back = x.inv_apply_motion(&x.apply_motion(&m));
        assert_relative_eq!(back.ang, m.ang, epsilon = 1e-14);
        assert_relative_eq!(back.lin, m.lin, epsilon = 1e-14);
    }

    #[test]
    fn force_round_trip_and_power_invariance() {
        let x = example_transform();
        let m = SpatialVec::new(Vector3::new(0.5, 0.1, -0.2), Vector3::new(0.3, 0.9, -1.2));
        let f = SpatialVec::new(Vector3::new(-0.4, 1.3, 0.8), Vector3::new(2.0, -0.6, 0.1));
        let back = x.inv_apply_force(&x.apply_force(&f));
        assert_relative_eq!(back.ang, f.ang, epsilon = 1e-14);
        assert_relative_eq!(back.lin, f.lin, epsilon = 1e-14);
        // Power f . m is frame invariant.
        let p_child = f.dot(&m);
        let p_parent = x.apply_force(&f).dot(&x.apply_motion(&m));
        assert_relative_eq!(p_child, p_parent, epsilon = 1e-12);
    }

    #[test]
    fn inertia_transport_preserves_kinetic_energy() {
        let x = example_transform();
        let inertia = SpatialInertia::from_com(
            3.0,
            Vector3::new(0.05, -0.02, 0.1),
            Matrix3::new(0.02, 0.0, 0.0, 0.0, 0.03, 0.0, 0.0, 0.0, 0.015),
        );
        let v_child = SpatialVec::new(Vector3::new(0.7, -0.3, 0.2), Vector3::new(0.1, 0.9, -0.4));
        let ke_child = 0.5 * v_child.dot(&inertia.apply(&v_child));
        let v_parent = x.apply_motion(&v_child);
        let i_parent = inertia.transform_to_parent(&x);
        let ke_parent = 0.5 * v_parent.dot(&i_parent.apply(&v_parent));
        assert_relative_eq!(ke_child, ke_parent, epsilon = 1e-12);
    }
}
