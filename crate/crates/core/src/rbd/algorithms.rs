//! Rigid-body dynamics algorithms on the parsed kinematic tree: composite
//! rigid body algorithm for the mass matrix, recursive Newton-Euler for the
//! bias vector, world-frame Jacobians with their drift terms, centroidal
//! momentum, the plastic impact map and energy accounting.
//!
//! Velocity-space layout: base angular (0..3, body frame), base linear
//! (3..6, body frame), then one rate per revolute joint in body order.

use super::model::{JointKind, JointState, ModelError, RobotModel};
use super::spatial::{SpatialInertia, SpatialTransform, SpatialVec};
use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::orient::skew;

/// Per-body pose bookkeeping shared by every algorithm below.
pub struct Kinematics {
    /// Child-in-parent transform for each body at the given configuration.
    pub local: Vec<SpatialTransform>,
    /// World pose of each body.
    pub world: Vec<SpatialTransform>,
}

pub fn forward_kinematics(model: &RobotModel, state: &JointState) -> Kinematics {
    let nb = model.num_bodies();
    let mut local = Vec::with_capacity(nb);
    let mut world: Vec<SpatialTransform> = Vec::with_capacity(nb);
    for (i, body) in model.bodies.iter().enumerate() {
        let x = match (&body.joint, body.parent) {
            (JointKind::FloatingBase, _) => SpatialTransform::new(
                state.base_orientation.to_rotation_matrix().into_inner(),
                state.base_position,
            ),
            (JointKind::Revolute(axis), _) => {
                let q = model.joint_angle(i, state);
                let rot = UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_normalize(*axis),
                    q,
                )
                .to_rotation_matrix()
                .into_inner();
                SpatialTransform::new(body.placement.rot * rot, body.placement.trans)
            }
        };
        let w = match body.parent {
            None => x,
            Some(p) => world[p].compose(&x),
        };
        local.push(x);
        world.push(w);
    }
    Kinematics { local, world }
}

/// Motion subspace of a body's joint in its own frame.
fn subspace(body: &super::model::Body) -> SpatialVec {
    match &body.joint {
        JointKind::FloatingBase => unreachable!("base handled separately"),
        JointKind::Revolute(axis) => SpatialVec::new(*axis, Vector3::zeros()),
    }
}

fn base_velocity(state: &JointState) -> SpatialVec {
    SpatialVec::new(
        Vector3::new(state.velocity[0], state.velocity[1], state.velocity[2]),
        Vector3::new(state.velocity[3], state.velocity[4], state.velocity[5]),
    )
}

/// Joint-space mass matrix via the composite rigid body algorithm, with
/// reflected rotor inertia added on the revolute diagonals.
pub fn mass_matrix(model: &RobotModel, state: &JointState) -> DMatrix<f64> {
    let nb = model.num_bodies();
    let nv = model.num_velocities();
    let kin = forward_kinematics(model, state);
    let mut h = DMatrix::zeros(nv, nv);

    let mut composite: Vec<SpatialInertia> = model.bodies.iter().map(|b| b.inertia).collect();

    for i in (1..nb).rev() {
        let body = &model.bodies[i];
        let s_i = subspace(body);
        let f = composite[i].apply(&s_i);
        let di = model.velocity_index(i);
        h[(di, di)] = s_i.dot(&f) + body.rotor_inertia;

        // Walk the force up the tree, filling couplings.
        let mut f_cur = f;
        let mut j = i;
        while let Some(p) = model.bodies[j].parent {
            f_cur = kin.local[j].apply_force(&f_cur);
            j = p;
            if j == 0 {
                let v6 = f_cur.to_vector6();
                for k in 0..6 {
                    h[(di, k)] = v6[k];
                    h[(k, di)] = v6[k];
                }
            } else {
                let s_j = subspace(&model.bodies[j]);
                let hij = s_j.dot(&f_cur);
                let dj = model.velocity_index(j);
                h[(di, dj)] = hij;
                h[(dj, di)] = hij;
            }
        }

        let parent = model.bodies[i].parent.unwrap();
        let transported = composite[i].transform_to_parent(&kin.local[i]);
        composite[parent] = composite[parent].add(&transported);
    }

    // Base block: the locked spatial inertia of the whole tree.
    let ic = &composite[0];
    let hx = skew(&ic.h);
    for r in 0..3 {
        for c in 0..3 {
            h[(r, c)] = ic.inertia[(r, c)];
            h[(r, 3 + c)] = hx[(r, c)];
            h[(3 + r, c)] = -hx[(r, c)];
            h[(3 + r, 3 + c)] = if r == c { ic.mass } else { 0.0 };
        }
    }
    h
}

/// Inverse dynamics: generalized forces for the motion `(q, qd, qdd)`.
/// With `gravity` enabled the usual base-acceleration trick is applied.
pub fn rnea(model: &RobotModel, state: &JointState, qdd: &DVector<f64>, gravity: bool) -> DVector<f64> {
    let nb = model.num_bodies();
    let nv = model.num_velocities();
    assert_eq!(qdd.len(), nv);
    let kin = forward_kinematics(model, state);

    let mut vel = vec![SpatialVec::zero(); nb];
    let mut acc = vec![SpatialVec::zero(); nb];
    let mut force = vec![SpatialVec::zero(); nb];

    let a_world = if gravity {
        SpatialVec::new(Vector3::zeros(), Vector3::new(0.0, 0.0, model.gravity))
    } else {
        SpatialVec::zero()
    };

    for i in 0..nb {
        let body = &model.bodies[i];
        match body.parent {
            None => {
                vel[i] = base_velocity(state);
                let qdd_base = SpatialVec::new(
                    Vector3::new(qdd[0], qdd[1], qdd[2]),
                    Vector3::new(qdd[3], qdd[4], qdd[5]),
                );
                acc[i] = kin.local[i].inv_apply_motion(&a_world).add(&qdd_base);
            }
            Some(p) => {
                let s_i = subspace(body);
                let di = model.velocity_index(i);
                let vj = s_i.scale(state.velocity[di]);
                vel[i] = kin.local[i].inv_apply_motion(&vel[p]).add(&vj);
                acc[i] = kin.local[i]
                    .inv_apply_motion(&acc[p])
                    .add(&s_i.scale(qdd[di]))
                    .add(&vel[i].cross_motion(&vj));
            }
        }
        let momentum = model.bodies[i].inertia.apply(&vel[i]);
        force[i] = model.bodies[i]
            .inertia
            .apply(&acc[i])
            .add(&vel[i].cross_force(&momentum));
    }

    let mut tau = DVector::zeros(nv);
    for i in (0..nb).rev() {
        let body = &model.bodies[i];
        match body.parent {
            None => {
                let v6 = force[i].to_vector6();
                for k in 0..6 {
                    tau[k] = v6[k];
                }
            }
            Some(p) => {
                let di = model.velocity_index(i);
                tau[di] = subspace(body).dot(&force[i]) + body.rotor_inertia * qdd[di];
                let f_parent = kin.local[i].apply_force(&force[i]);
                force[p] = force[p].add(&f_parent);
            }
        }
    }
    tau
}

/// Bias forces `C(q, qd)`: centripetal, Coriolis and gravity terms
/// (inverse dynamics at zero acceleration).
pub fn bias_forces(model: &RobotModel, state: &JointState) -> DVector<f64> {
    rnea(model, state, &DVector::zeros(model.num_velocities()), true)
}

/// World pose of a named frame.
pub fn frame_pose(model: &RobotModel, kin: &Kinematics, frame_id: usize) -> (Matrix3<f64>, Vector3<f64>) {
    let frame = &model.frames[frame_id];
    let w = &kin.world[frame.body];
    (w.rot, w.transform_point(&frame.offset))
}

/// World-origin Plucker column of one velocity DoF, and the body it is
/// rigidly attached to.
fn dof_screws(model: &RobotModel, kin: &Kinematics) -> Vec<(SpatialVec, usize)> {
    let nv = model.num_velocities();
    let mut screws = Vec::with_capacity(nv);
    let base = &kin.world[0];
    for k in 0..3 {
        let axis = base.rot.column(k).into_owned();
        screws.push((SpatialVec::new(axis, base.trans.cross(&axis)), 0));
    }
    for k in 0..3 {
        let axis = base.rot.column(k).into_owned();
        screws.push((SpatialVec::new(Vector3::zeros(), axis), 0));
    }
    for i in 1..model.num_bodies() {
        if let JointKind::Revolute(axis_local) = &model.bodies[i].joint {
            let w = &kin.world[i];
            let axis = w.rot * axis_local;
            screws.push((SpatialVec::new(axis, w.trans.cross(&axis)), i));
        }
    }
    screws
}

/// Conventional world-frame Jacobian of a named frame: rows `[omega; v_p]`
/// where `v_p` is the velocity of the body point at the frame origin, plus
/// the drift term `Jdot*qd` (classical acceleration of that point at zero
/// joint acceleration).
pub fn frame_jacobian(
    model: &RobotModel,
    state: &JointState,
    frame: &str,
) -> Result<(DMatrix<f64>, Vector6<f64>), ModelError> {
    let frame_id = model.frame_id(frame)?;
    let kin = forward_kinematics(model, state);
    Ok(frame_jacobian_cached(model, state, &kin, frame_id))
}

pub fn frame_jacobian_cached(
    model: &RobotModel,
    state: &JointState,
    kin: &Kinematics,
    frame_id: usize,
) -> (DMatrix<f64>, Vector6<f64>) {
    let nv = model.num_velocities();
    let (_, p_f) = frame_pose(model, kin, frame_id);
    let screws = dof_screws(model, kin);

    // Restrict columns to the ancestor chain of the frame's body.
    let mut on_path = vec![false; model.num_bodies()];
    let mut b = model.frames[frame_id].body;
    loop {
        on_path[b] = true;
        match model.bodies[b].parent {
            Some(p) => b = p,
            None => break,
        }
    }

    let mut j = DMatrix::zeros(6, nv);
    for (col, (s, body)) in screws.iter().enumerate() {
        if !on_path[*body] {
            continue;
        }
        let lin_at_p = s.lin + s.ang.cross(&p_f);
        for r in 0..3 {
            j[(r, col)] = s.ang[r];
            j[(3 + r, col)] = lin_at_p[r];
        }
    }

    // Body velocities at the world origin, accumulated down the tree.
    let nb = model.num_bodies();
    let mut v_body = vec![SpatialVec::zero(); nb];
    {
        let mut vb = SpatialVec::zero();
        for k in 0..6 {
            vb = vb.add(&screws[k].0.scale(state.velocity[k]));
        }
        v_body[0] = vb;
    }
    let mut col = 6;
    for i in 1..nb {
        let p = model.bodies[i].parent.unwrap();
        let di = model.velocity_index(i);
        v_body[i] = v_body[p].add(&screws[col].0.scale(state.velocity[di]));
        col += 1;
    }

    // Drift: sum of (v_body x screw) * qd over the frame's ancestor chain,
    // converted from world-origin spatial to classical at the point.
    let mut bias = SpatialVec::zero();
    for (col, (s, body)) in screws.iter().enumerate() {
        if !on_path[*body] {
            continue;
        }
        let dof_rate = state.velocity[col];
        if dof_rate != 0.0 {
            bias = bias.add(&v_body[*body].cross_motion(s).scale(dof_rate));
        }
    }
    let v_frame_spatial = v_body[model.frames[frame_id].body];
    let omega = v_frame_spatial.ang;
    let v_point = v_frame_spatial.lin + omega.cross(&p_f);
    let lin = bias.lin + bias.ang.cross(&p_f) + omega.cross(&v_point);

    let mut jdqd = Vector6::zeros();
    for r in 0..3 {
        jdqd[r] = bias.ang[r];
        jdqd[3 + r] = lin[r];
    }
    (j, jdqd)
}

/// 3-row point Jacobians for each contact point of a frame, stacked.
pub fn contact_point_jacobian(
    model: &RobotModel,
    state: &JointState,
    frame_id: usize,
) -> DMatrix<f64> {
    let kin = forward_kinematics(model, state);
    let frame = &model.frames[frame_id];
    let points: Vec<Vector3<f64>> = if frame.contact_points.is_empty() {
        vec![frame.offset]
    } else {
        frame
            .contact_points
            .iter()
            .map(|cp| frame.offset + cp)
            .collect()
    };
    let nv = model.num_velocities();
    let screws = dof_screws(model, &kin);
    let mut on_path = vec![false; model.num_bodies()];
    let mut b = frame.body;
    loop {
        on_path[b] = true;
        match model.bodies[b].parent {
            Some(p) => b = p,
            None => break,
        }
    }
    let body_world = &kin.world[frame.body];
    let mut j = DMatrix::zeros(3 * points.len(), nv);
    for (pi, pt) in points.iter().enumerate() {
        let p_w = body_world.transform_point(pt);
        for (col, (s, body)) in screws.iter().enumerate() {
            if !on_path[*body] {
                continue;
            }
            let lin = s.lin + s.ang.cross(&p_w);
            for r in 0..3 {
                j[(3 * pi + r, col)] = lin[r];
            }
        }
    }
    j
}

/// Centroidal momentum `k_G = [angular; linear]`, world-aligned about the
/// whole-robot CoM. Computed from the locked-inertia identity: the base
/// rows of `H qd` are the system momentum about the base frame.
pub fn centroidal_momentum(model: &RobotModel, state: &JointState) -> Vector6<f64> {
    let h = mass_matrix(model, state);
    let qd = DVector::from_column_slice(&state.velocity);
    let hq = h * qd;
    let base_momentum = SpatialVec::new(
        Vector3::new(hq[0], hq[1], hq[2]),
        Vector3::new(hq[3], hq[4], hq[5]),
    );
    let kin = forward_kinematics(model, state);
    // Momentum about the world origin, world axes.
    let m_world = kin.world[0].apply_force(&base_momentum);
    let com = com_position_cached(model, &kin);
    let ang = m_world.ang - com.cross(&m_world.lin);
    let mut out = Vector6::zeros();
    for r in 0..3 {
        out[r] = ang[r];
        out[3 + r] = m_world.lin[r];
    }
    out
}

pub fn com_position(model: &RobotModel, state: &JointState) -> Vector3<f64> {
    let kin = forward_kinematics(model, state);
    com_position_cached(model, &kin)
}

pub fn com_position_cached(model: &RobotModel, kin: &Kinematics) -> Vector3<f64> {
    let mut weighted = Vector3::zeros();
    let mut mass = 0.0;
    for (i, b) in model.bodies.iter().enumerate() {
        weighted += kin.world[i].transform_point(&b.inertia.com()) * b.inertia.mass;
        mass += b.inertia.mass;
    }
    weighted / mass
}

pub fn com_velocity(model: &RobotModel, state: &JointState) -> Vector3<f64> {
    let k = centroidal_momentum(model, state);
    Vector3::new(k[3], k[4], k[5]) / model.total_mass()
}

/// Result of the plastic impact resolution.
#[derive(Clone, Debug)]
pub struct ImpactResult {
    pub velocity_plus: Vec<f64>,
    /// Stacked contact-point impulses.
    pub impulse: DVector<f64>,
    pub kinetic_energy_loss: f64,
    /// The contact inertia was rank deficient and a regularized solve was
    /// used.
    pub regularized: bool,
}

/// Plastic impact at the given frame's contact points:
/// `qd+ = qd- - H^{-1} J' (J H^{-1} J')^{-1} J qd-`.
pub fn impact_map(
    model: &RobotModel,
    state: &JointState,
    frame: &str,
) -> Result<ImpactResult, ModelError> {
    let frame_id = model.frame_id(frame)?;
    let h = mass_matrix(model, state);
    let j = contact_point_jacobian(model, state, frame_id);
    let qd = DVector::from_column_slice(&state.velocity);

    let chol_h = nalgebra::Cholesky::new(h.clone())
        .ok_or_else(|| ModelError::Invalid("mass matrix not positive definite".into()))?;
    let hinv_jt = chol_h.solve(&j.transpose());
    let lambda = &j * &hinv_jt;
    let jv = &j * &qd;

    let (impulse, regularized) = match nalgebra::Cholesky::new(lambda.clone()) {
        Some(c) => (-c.solve(&jv), false),
        None => {
            let k = lambda.nrows();
            let reg = 1e-10 * lambda.trace().max(1e-12) / k as f64;
            let mut lam = lambda;
            for i in 0..k {
                lam[(i, i)] += reg;
            }
            let c = nalgebra::Cholesky::new(lam)
                .ok_or_else(|| ModelError::Invalid("contact inertia unrecoverable".into()))?;
            (-c.solve(&jv), true)
        }
    };

    let dqd = &hinv_jt * &impulse;
    let qd_plus = &qd + &dqd;
    let ke_minus = 0.5 * qd.dot(&(&h * &qd));
    let ke_plus = 0.5 * qd_plus.dot(&(&h * &qd_plus));

    Ok(ImpactResult {
        velocity_plus: qd_plus.iter().copied().collect(),
        impulse,
        kinetic_energy_loss: ke_minus - ke_plus,
        regularized,
    })
}

/// Kinetic plus gravitational potential energy (datum at z = 0).
pub fn total_energy(model: &RobotModel, state: &JointState) -> f64 {
    let h = mass_matrix(model, state);
    let qd = DVector::from_column_slice(&state.velocity);
    let ke = 0.5 * qd.dot(&(&h * &qd));
    let kin = forward_kinematics(model, state);
    let pe: f64 = model
        .bodies
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let com_w = kin.world[i].transform_point(&b.inertia.com());
            b.inertia.mass * model.gravity * com_w.z
        })
        .sum();
    ke + pe
}

/// Unconstrained forward dynamics: `qdd = H^{-1} (tau_gen - C)`.
pub fn forward_dynamics(
    model: &RobotModel,
    state: &JointState,
    tau_gen: &DVector<f64>,
) -> DVector<f64> {
    let h = mass_matrix(model, state);
    let c = bias_forces(model, state);
    nalgebra::Cholesky::new(h)
        .expect("mass matrix not positive definite")
        .solve(&(tau_gen - c))
}

/// Time derivative of the configuration coordinates for the current
/// velocity: base position rate, base quaternion rate (body-frame angular
/// velocity convention) and joint rates.
pub fn config_derivative(state: &JointState) -> (Vector3<f64>, Quaternion<f64>, Vec<f64>) {
    let omega_b = Vector3::new(state.velocity[0], state.velocity[1], state.velocity[2]);
    let v_b = Vector3::new(state.velocity[3], state.velocity[4], state.velocity[5]);
    let r = state.base_orientation.to_rotation_matrix();
    let pos_dot = r * v_b;
    let quat_dot = state.base_orientation.into_inner()
        * Quaternion::from_parts(0.0, omega_b)
        * 0.5;
    let angle_rates = state.velocity[6..].to_vec();
    (pos_dot, quat_dot, angle_rates)
}
