//! Kinematic tree description and the structured-text model file parser.
//!
//! File format: line oriented, `#` starts a comment. A `body <name> ... end`
//! block describes one link; bodies must appear after their parent (tree
//! order). A `pose <name> ... end` block lists joint angles by joint name.
//!
//! ```text
//! model desk_biped
//! gravity 9.81
//!
//! body torso
//!   parent world
//!   joint floating
//!   mass 13.6
//!   com 0 0 0.05
//!   inertia 0.12 0.10 0.06 0 0 0      # xx yy zz xy xz yz, about the CoM
//!   frame torso 0 0 0
//! end
//!
//! body l_hip_pitch
//!   parent torso
//!   joint revolute 0 1 0
//!   placement 0 0.09 -0.06  0 0 0     # xyz, then rpy of the joint frame
//!   mass 2.0
//!   com 0 0 -0.17
//!   inertia 0.02 0.02 0.004 0 0 0
//!   rotor 0.02
//!   tau_max 60
//!   qdd_max 200
//! end
//!
//! pose standing
//!   l_hip_pitch -0.30
//! end
//! ```

use crate::orient::rpy_to_rotation;
use crate::rbd::spatial::{SpatialInertia, SpatialTransform};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model has no body named '{0}'")]
    UnknownBody(String),
    #[error("model has no frame named '{0}'")]
    UnknownFrame(String),
    #[error("model validation failed: {0}")]
    Invalid(String),
}

fn perr(line: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Parse { line, msg: msg.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub enum JointKind {
    /// Six-DoF root joint; exactly one, at the tree root.
    FloatingBase,
    /// One-DoF hinge about `axis` (unit vector in the joint frame).
    Revolute(Vector3<f64>),
}

#[derive(Clone, Debug)]
pub struct Body {
    pub name: String,
    /// Index of the parent body; `None` for the floating-base root.
    pub parent: Option<usize>,
    pub joint: JointKind,
    /// Joint frame in the parent body frame.
    pub placement: SpatialTransform,
    pub inertia: SpatialInertia,
    /// Reflected rotor inertia added on this joint's diagonal (revolute only).
    pub rotor_inertia: f64,
    pub tau_max: f64,
    pub qdd_max: f64,
}

/// Named frame rigidly attached to a body (orientation equals the body's).
#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub body: usize,
    pub offset: Vector3<f64>,
    /// Contact points in frame coordinates (e.g. heel and toe of a foot).
    pub contact_points: Vec<Vector3<f64>>,
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    pub name: String,
    pub gravity: f64,
    pub bodies: Vec<Body>,
    pub frames: Vec<Frame>,
    frame_index: HashMap<String, usize>,
    joint_index: HashMap<String, usize>,
    /// Joint angles of the named `standing` pose (zeros if absent).
    pub standing_pose: Vec<f64>,
}

/// Floating-base configuration and velocity. The base pose is position plus
/// a unit quaternion; the base velocity is the body twist `[omega_b; v_b]`.
#[derive(Clone, Debug)]
pub struct JointState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    /// Base body twist `[omega; v]` in base coordinates, then joint rates.
    pub velocity: Vec<f64>,
    pub joint_angles: Vec<f64>,
}

impl JointState {
    pub fn zeros(model: &RobotModel) -> Self {
        JointState {
            base_position: Vector3::zeros(),
            base_orientation: UnitQuaternion::identity(),
            velocity: vec![0.0; model.num_velocities()],
            joint_angles: vec![0.0; model.num_joints()],
        }
    }

    pub fn check(&self, model: &RobotModel) -> Result<(), ModelError> {
        if self.joint_angles.len() != model.num_joints() {
            return Err(ModelError::Invalid(format!(
                "expected {} joint angles, got {}",
                model.num_joints(),
                self.joint_angles.len()
            )));
        }
        if self.velocity.len() != model.num_velocities() {
            return Err(ModelError::Invalid(format!(
                "expected {} velocities, got {}",
                model.num_velocities(),
                self.velocity.len()
            )));
        }
        if (self.base_orientation.norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::Invalid("base quaternion not normalized".into()));
        }
        Ok(())
    }
}

impl RobotModel {
    pub fn num_bodies(&self) -> usize {
        self.bodies.len()
    }

    /// Number of one-DoF joints (bodies minus the floating base).
    pub fn num_joints(&self) -> usize {
        self.bodies.len() - 1
    }

    /// Velocity-space dimension: 6 for the base plus one per joint.
    pub fn num_velocities(&self) -> usize {
        6 + self.num_joints()
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.inertia.mass).sum()
    }

    pub fn frame_id(&self, name: &str) -> Result<usize, ModelError> {
        self.frame_index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn joint_id(&self, name: &str) -> Option<usize> {
        self.joint_index.get(name).copied()
    }

    /// Velocity index of a body's joint (6 + joint number for revolute).
    pub fn velocity_index(&self, body: usize) -> usize {
        // Body 0 is the base (indices 0..6); revolute body i maps to 5 + i.
        assert!(body > 0);
        5 + body
    }

    /// Joint angle of `body`'s revolute joint inside a state.
    pub fn joint_angle(&self, body: usize, state: &JointState) -> f64 {
        state.joint_angles[body - 1]
    }

    /// The `standing` pose from the model file as a full state at the given
    /// base height.
    pub fn standing_state(&self, base_height: f64) -> JointState {
        let mut st = JointState::zeros(self);
        st.joint_angles.copy_from_slice(&self.standing_pose);
        st.base_position.z = base_height;
        st
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.bodies.is_empty() {
            return Err(ModelError::Invalid("no bodies".into()));
        }
        if self.bodies[0].parent.is_some() || self.bodies[0].joint != JointKind::FloatingBase {
            return Err(ModelError::Invalid("first body must be the floating base".into()));
        }
        for (i, b) in self.bodies.iter().enumerate().skip(1) {
            match b.parent {
                Some(p) if p < i => {}
                _ => return Err(ModelError::Invalid(format!("body '{}' breaks tree order", b.name))),
            }
            if b.joint == JointKind::FloatingBase {
                return Err(ModelError::Invalid("only the root may be a floating base".into()));
            }
        }
        for b in &self.bodies {
            if !(b.inertia.mass > 0.0) {
                return Err(ModelError::Invalid(format!("body '{}' has nonpositive mass", b.name)));
            }
        }
        Ok(())
    }
}

struct BodyDraft {
    name: String,
    parent: Option<String>,
    joint: Option<JointKind>,
    placement: SpatialTransform,
    mass: Option<f64>,
    com: Vector3<f64>,
    inertia_com: Option<Matrix3<f64>>,
    rotor: f64,
    tau_max: f64,
    qdd_max: f64,
    frames: Vec<(String, Vector3<f64>)>,
    contacts: Vec<(String, Vector3<f64>)>,
    line: usize,
}

/// Parse a model file. Errors carry the offending line number.
pub fn parse_model(text: &str) -> Result<RobotModel, ModelError> {
    let mut name = String::from("unnamed");
    let mut gravity = 9.81;
    let mut bodies: Vec<Body> = Vec::new();
    let mut frames: Vec<Frame> = Vec::new();
    let mut body_index: HashMap<String, usize> = HashMap::new();
    let mut frame_index: HashMap<String, usize> = HashMap::new();
    let mut pose_entries: Vec<(String, f64, usize)> = Vec::new();

    let mut draft: Option<BodyDraft> = None;
    let mut in_pose = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let tok: Vec<&str> = stripped.split_whitespace().collect();
        let parse_f = |s: &str| -> Result<f64, ModelError> {
            s.parse::<f64>().map_err(|_| perr(line, format!("expected a number, got '{s}'")))
        };
        let parse_vec3 = |t: &[&str]| -> Result<Vector3<f64>, ModelError> {
            if t.len() != 3 {
                return Err(perr(line, "expected three numbers"));
            }
            Ok(Vector3::new(parse_f(t[0])?, parse_f(t[1])?, parse_f(t[2])?))
        };

        if in_pose {
            if tok[0] == "end" {
                in_pose = false;
            } else {
                if tok.len() != 2 {
                    return Err(perr(line, "pose entry must be '<joint> <angle>'"));
                }
                pose_entries.push((tok[0].to_string(), parse_f(tok[1])?, line));
            }
            continue;
        }

        if let Some(d) = draft.as_mut() {
            match tok[0] {
                "parent" => d.parent = Some(tok.get(1).ok_or_else(|| perr(line, "missing parent name"))?.to_string()),
                "joint" => {
                    let kind = tok.get(1).ok_or_else(|| perr(line, "missing joint type"))?;
                    d.joint = Some(match *kind {
                        "floating" => JointKind::FloatingBase,
                        "revolute" => {
                            let axis = parse_vec3(&tok[2..])?;
                            let n = axis.norm();
                            if n < 1e-9 {
                                return Err(perr(line, "revolute axis must be nonzero"));
                            }
                            JointKind::Revolute(axis / n)
                        }
                        other => return Err(perr(line, format!("unknown joint type '{other}'"))),
                    });
                }
                "placement" => {
                    if tok.len() != 7 {
                        return Err(perr(line, "placement needs 6 numbers: xyz rpy"));
                    }
                    let xyz = parse_vec3(&tok[1..4])?;
                    let rpy = parse_vec3(&tok[4..7])?;
                    d.placement = SpatialTransform::new(rpy_to_rotation(&rpy), xyz);
                }
                "mass" => {
                    let m = parse_f(tok.get(1).ok_or_else(|| perr(line, "missing mass value"))?)?;
                    if !(m > 0.0) {
                        return Err(perr(line, format!("mass must be positive, got {m}")));
                    }
                    d.mass = Some(m);
                }
                "com" => d.com = parse_vec3(&tok[1..])?,
                "inertia" => {
                    if tok.len() != 7 {
                        return Err(perr(line, "inertia needs 6 numbers: xx yy zz xy xz yz"));
                    }
                    let v: Vec<f64> = tok[1..].iter().map(|s| parse_f(s)).collect::<Result<_, _>>()?;
                    d.inertia_com = Some(Matrix3::new(
                        v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2],
                    ));
                }
                "rotor" => d.rotor = parse_f(tok.get(1).ok_or_else(|| perr(line, "missing rotor value"))?)?,
                "tau_max" => d.tau_max = parse_f(tok.get(1).ok_or_else(|| perr(line, "missing value"))?)?,
                "qdd_max" => d.qdd_max = parse_f(tok.get(1).ok_or_else(|| perr(line, "missing value"))?)?,
                "frame" => {
                    if tok.len() != 5 {
                        return Err(perr(line, "frame needs a name and xyz offset"));
                    }
                    d.frames.push((tok[1].to_string(), parse_vec3(&tok[2..])?));
                }
                "contact" => {
                    if tok.len() != 5 {
                        return Err(perr(line, "contact needs a frame name and xyz offset"));
                    }
                    d.contacts.push((tok[1].to_string(), parse_vec3(&tok[2..])?));
                }
                "end" => {
                    let d = draft.take().unwrap();
                    let idx = bodies.len();
                    let parent = match d.parent.as_deref() {
                        None => return Err(perr(d.line, format!("body '{}' has no parent line", d.name))),
                        Some("world") => None,
                        Some(p) => match body_index.get(p) {
                            Some(&pi) => Some(pi),
                            None => {
                                return Err(perr(
                                    d.line,
                                    format!("body '{}' listed before its parent '{}' (tree order required)", d.name, p),
                                ))
                            }
                        },
                    };
                    let joint = d.joint.ok_or_else(|| perr(d.line, format!("body '{}' has no joint line", d.name)))?;
                    if parent.is_none() && joint != JointKind::FloatingBase {
                        return Err(perr(d.line, "the root body must use a floating joint"));
                    }
                    if parent.is_some() && joint == JointKind::FloatingBase {
                        return Err(perr(d.line, "floating joints are only allowed at the root"));
                    }
                    let mass = d.mass.ok_or_else(|| perr(d.line, format!("body '{}' has no mass", d.name)))?;
                    let i_com = d.inertia_com.ok_or_else(|| perr(d.line, format!("body '{}' has no inertia", d.name)))?;
                    if nalgebra::Cholesky::new(i_com).is_none() {
                        return Err(perr(d.line, format!("body '{}' rotational inertia is not SPD", d.name)));
                    }
                    if body_index.contains_key(&d.name) {
                        return Err(perr(d.line, format!("duplicate body '{}'", d.name)));
                    }
                    body_index.insert(d.name.clone(), idx);
                    bodies.push(Body {
                        name: d.name.clone(),
                        parent,
                        joint,
                        placement: d.placement,
                        inertia: SpatialInertia::from_com(mass, d.com, i_com),
                        rotor_inertia: d.rotor,
                        tau_max: d.tau_max,
                        qdd_max: d.qdd_max,
                    });
                    for (fname, offset) in d.frames {
                        if frame_index.contains_key(&fname) {
                            return Err(perr(d.line, format!("duplicate frame '{fname}'")));
                        }
                        frame_index.insert(fname.clone(), frames.len());
                        frames.push(Frame { name: fname, body: idx, offset, contact_points: Vec::new() });
                    }
                    for (fname, offset) in d.contacts {
                        let fi = *frame_index
                            .get(&fname)
                            .ok_or_else(|| perr(d.line, format!("contact references unknown frame '{fname}'")))?;
                        frames[fi].contact_points.push(offset);
                    }
                }
                other => return Err(perr(line, format!("unknown body field '{other}'"))),
            }
            continue;
        }

        match tok[0] {
            "model" => name = tok.get(1).unwrap_or(&"unnamed").to_string(),
            "gravity" => gravity = parse_f(tok.get(1).ok_or_else(|| perr(line, "missing gravity value"))?)?,
            "body" => {
                let bname = tok.get(1).ok_or_else(|| perr(line, "body needs a name"))?.to_string();
                draft = Some(BodyDraft {
                    name: bname,
                    parent: None,
                    joint: None,
                    placement: SpatialTransform::identity(),
                    mass: None,
                    com: Vector3::zeros(),
                    inertia_com: None,
                    rotor: 0.0,
                    tau_max: f64::INFINITY,
                    qdd_max: f64::INFINITY,
                    frames: Vec::new(),
                    contacts: Vec::new(),
                    line,
                });
            }
            "pose" => in_pose = true,
            other => return Err(perr(line, format!("unknown directive '{other}'"))),
        }
    }
    if draft.is_some() {
        return Err(ModelError::Invalid("unterminated body block".into()));
    }
    if in_pose {
        return Err(ModelError::Invalid("unterminated pose block".into()));
    }

    let mut joint_index = HashMap::new();
    for (i, b) in bodies.iter().enumerate() {
        if i > 0 {
            joint_index.insert(b.name.clone(), i - 1);
        }
    }
    let mut standing_pose = vec![0.0; bodies.len().saturating_sub(1)];
    for (jname, angle, line) in pose_entries {
        match joint_index.get(&jname) {
            Some(&j) => standing_pose[j] = angle,
            None => return Err(perr(line, format!("pose references unknown joint '{jname}'"))),
        }
    }

    let model = RobotModel {
        name,
        gravity,
        bodies,
        frames,
        frame_index,
        joint_index,
        standing_pose,
    };
    model.validate()?;
    Ok(model)
}
