//! Line-foot contact wrench cone.
//!
//! A foot contacting the ground along its heel-toe line can produce any
//! wrench except a roll moment. In the foot frame the admissible set is a
//! polytope: friction bounds on the shear forces, a vertical-force range,
//! pitch-moment bounds from the heel/toe lever arms, `m_x = 0`, and four
//! yaw-moment rows obtained by eliminating the heel/toe force decomposition
//!
//! ```text
//!     F_y = F_y^h + F_y^t        m_y = F_z^h l_h - F_z^t l_t
//!     F_z = F_z^h + F_z^t        m_z = F_y^t l_t - F_y^h l_h
//! ```
//!
//! against `|F_y^{h/t}| <= mu F_z^{h/t}`. Solving for the four unknowns:
//!
//! ```text
//!     F_z^h = (m_y + F_z l_t) / (l_h + l_t)     F_y^h = (F_y l_t - m_z) / (l_h + l_t)
//!     F_z^t = (F_z l_h - m_y) / (l_h + l_t)     F_y^t = (F_y l_h + m_z) / (l_h + l_t)
//! ```
//!
//! and substituting gives four linear rows coupling `m_z, m_y, F_y, F_z`.

use crate::srbm::{GroundWrench, WrenchFrame};
use nalgebra::{DMatrix, DVector, Matrix3, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("invalid foot geometry: {0}")]
    InvalidGeometry(String),
    #[error("rotation matrix is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
}

/// Line-foot geometry: friction coefficient, heel/toe lever lengths and the
/// vertical force cap. Desk defaults, not measured values.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FootGeometry {
    pub friction: f64,
    pub heel_length: f64,
    pub toe_length: f64,
    pub max_normal_force: f64,
}

impl Default for FootGeometry {
    fn default() -> Self {
        FootGeometry {
            friction: 0.5,
            heel_length: 0.06,
            toe_length: 0.06,
            max_normal_force: 500.0,
        }
    }
}

impl FootGeometry {
    pub fn validate(&self) -> Result<(), ContactError> {
        if !(self.friction > 0.0) {
            return Err(ContactError::InvalidGeometry("friction must be positive".into()));
        }
        if !(self.heel_length > 0.0) || !(self.toe_length > 0.0) {
            return Err(ContactError::InvalidGeometry("lever lengths must be positive".into()));
        }
        if !(self.max_normal_force > 0.0) {
            return Err(ContactError::InvalidGeometry("force cap must be positive".into()));
        }
        Ok(())
    }
}

/// Polytope `{u : A u <= b}` over foot-frame wrenches `u = [F; m]`, with the
/// roll-moment equality carried both ways: as a tagged equality row
/// (`roll_equality`) for QPs that take equality blocks, and as two opposing
/// inequality rows inside the stacked `a`/`b` for generic membership checks.
#[derive(Clone, Debug)]
pub struct WrenchCone {
    /// All rows, the `+/- m_x` pair first.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Strict inequality rows only (everything but the `m_x` pair).
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Coefficient row of the `m_x = 0` equality (right-hand side zero).
    pub roll_equality: SVector<f64, 6>,
    geometry: FootGeometry,
}

impl WrenchCone {
    pub fn geometry(&self) -> &FootGeometry {
        &self.geometry
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    /// Membership check with tolerance band `tol` on every row.
    pub fn contains(&self, u: &GroundWrench, tol: f64) -> bool {
        assert_eq!(u.frame, WrenchFrame::Foot, "cone membership is a foot-frame test");
        let v = DVector::from_column_slice(u.as_vector().as_slice());
        let residual = &self.a * &v - &self.b;
        residual.iter().all(|&r| r <= tol)
    }

    /// Worst violation of the strict inequality rows (positive = outside)
    /// and the absolute roll-moment residual, reported separately so a
    /// boundary band can be applied to each.
    pub fn split_violation(&self, u: &GroundWrench) -> (f64, f64) {
        assert_eq!(u.frame, WrenchFrame::Foot);
        let v = DVector::from_column_slice(u.as_vector().as_slice());
        let ineq = (&self.a_in * &v - &self.b_in).max();
        (ineq, u.moment.x.abs())
    }

    /// Worst constraint violation over all stacked rows.
    pub fn max_violation(&self, u: &GroundWrench) -> f64 {
        let v = DVector::from_column_slice(u.as_vector().as_slice());
        (&self.a * &v - &self.b).max()
    }
}

/// Build the line-foot contact wrench cone for the given geometry.
///
/// Row layout (all `<= 0` unless noted):
/// 0-1    +/- m_x (equality written as two opposing rows)
/// 2      -F_z          3  F_z - F_z_max
/// 4-5    +/- F_x - mu F_z
/// 6-7    +/- F_y - mu F_z
/// 8      m_y - l_h F_z
/// 9      -m_y - l_t F_z
/// 10-13  heel/toe yaw-moment rows
pub fn build_line_cwc(geom: &FootGeometry) -> Result<WrenchCone, ContactError> {
    geom.validate()?;
    let mu = geom.friction;
    let (lh, lt) = (geom.heel_length, geom.toe_length);

    let mut rows: Vec<[f64; 6]> = Vec::with_capacity(14);
    let mut rhs: Vec<f64> = Vec::with_capacity(14);
    let mut push = |row: [f64; 6], b: f64| {
        rows.push(row);
        rhs.push(b);
    };

    // m_x = 0 as two opposing inequalities.
    push([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 0.0);
    push([0.0, 0.0, 0.0, -1.0, 0.0, 0.0], 0.0);
    // 0 <= F_z <= F_z_max.
    push([0.0, 0.0, -1.0, 0.0, 0.0, 0.0], 0.0);
    push([0.0, 0.0, 1.0, 0.0, 0.0, 0.0], geom.max_normal_force);
    // |F_x| <= mu F_z.
    push([1.0, 0.0, -mu, 0.0, 0.0, 0.0], 0.0);
    push([-1.0, 0.0, -mu, 0.0, 0.0, 0.0], 0.0);
    // |F_y| <= mu F_z.
    push([0.0, 1.0, -mu, 0.0, 0.0, 0.0], 0.0);
    push([0.0, -1.0, -mu, 0.0, 0.0, 0.0], 0.0);
    // -l_t F_z <= m_y <= l_h F_z.
    push([0.0, 0.0, -lh, 0.0, 1.0, 0.0], 0.0);
    push([0.0, 0.0, -lt, 0.0, -1.0, 0.0], 0.0);
    // Heel: |F_y l_t - m_z| <= mu (m_y + F_z l_t), scaled by (l_h + l_t).
    push([0.0, lt, -mu * lt, 0.0, -mu, -1.0], 0.0);
    push([0.0, -lt, -mu * lt, 0.0, -mu, 1.0], 0.0);
    // Toe: |F_y l_h + m_z| <= mu (F_z l_h - m_y), scaled by (l_h + l_t).
    push([0.0, lh, -mu * lh, 0.0, mu, 1.0], 0.0);
    push([0.0, -lh, -mu * lh, 0.0, mu, -1.0], 0.0);

    let n = rows.len();
    let mut a = DMatrix::zeros(n, 6);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..6 {
            a[(i, j)] = row[j];
        }
    }
    let a_in = a.rows(2, n - 2).into_owned();
    let b = DVector::from_vec(rhs);
    let b_in = b.rows(2, n - 2).into_owned();
    Ok(WrenchCone {
        a,
        b,
        a_in,
        b_in,
        roll_equality: SVector::<f64, 6>::from_column_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        geometry: *geom,
    })
}

/// Brute-force feasibility test through the heel/toe decomposition: solve
/// the four decomposition equations, split `F_x` proportionally to the
/// normal-force shares, and check every point-contact friction condition
/// directly.
///
/// Degenerate case: with `F_z = 0`, any nonzero shear or moment is reported
/// infeasible.
pub fn wrench_feasible_oracle(u: &GroundWrench, geom: &FootGeometry) -> bool {
    assert_eq!(u.frame, WrenchFrame::Foot, "oracle expects a foot-frame wrench");
    if geom.validate().is_err() {
        return false;
    }
    let mu = geom.friction;
    let (lh, lt) = (geom.heel_length, geom.toe_length);
    let (f, m) = (u.force, u.moment);

    if m.x != 0.0 {
        return false;
    }
    if f.z < 0.0 || f.z > geom.max_normal_force {
        return false;
    }
    if f.z == 0.0 {
        return f.x == 0.0 && f.y == 0.0 && m.y == 0.0 && m.z == 0.0;
    }

    let denom = lh + lt;
    let fz_h = (m.y + f.z * lt) / denom;
    let fz_t = (f.z * lh - m.y) / denom;
    let fy_h = (f.y * lt - m.z) / denom;
    let fy_t = (f.y * lh + m.z) / denom;
    if fz_h < 0.0 || fz_t < 0.0 {
        return false;
    }
    // F_x split proportionally to the normal-force shares, so the x-friction
    // conditions reduce to |F_x| <= mu F_z.
    let fx_h = f.x * fz_h / f.z;
    let fx_t = f.x * fz_t / f.z;
    fx_h.abs() <= mu * fz_h && fx_t.abs() <= mu * fz_t && fy_h.abs() <= mu * fz_h && fy_t.abs() <= mu * fz_t
}

/// Rotate a world-frame wrench into the foot frame given the foot's
/// world rotation `R_F` (columns are the foot axes in world coordinates).
pub fn world_to_foot_wrench(u: &GroundWrench, r_f: &Matrix3<f64>) -> Result<GroundWrench, ContactError> {
    assert_eq!(u.frame, WrenchFrame::World);
    let dev = (r_f.transpose() * r_f - Matrix3::identity()).amax();
    if dev > 1e-9 {
        return Err(ContactError::NotOrthonormal(dev));
    }
    Ok(GroundWrench::new(
        r_f.transpose() * u.force,
        r_f.transpose() * u.moment,
        WrenchFrame::Foot,
    ))
}

/// Inverse of [`world_to_foot_wrench`].
pub fn foot_to_world_wrench(u: &GroundWrench, r_f: &Matrix3<f64>) -> Result<GroundWrench, ContactError> {
    assert_eq!(u.frame, WrenchFrame::Foot);
    let dev = (r_f.transpose() * r_f - Matrix3::identity()).amax();
    if dev > 1e-9 {
        return Err(ContactError::NotOrthonormal(dev));
    }
    Ok(GroundWrench::new(r_f * u.force, r_f * u.moment, WrenchFrame::World))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orient::yaw_rotation;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> FootGeometry {
        FootGeometry::default()
    }

    fn foot_wrench(f: [f64; 3], m: [f64; 3]) -> GroundWrench {
        GroundWrench::new(Vector3::from_column_slice(&f), Vector3::from_column_slice(&m), WrenchFrame::Foot)
    }

    #[test]
    fn nominal_wrench_is_feasible() {
        let cone = build_line_cwc(&geom()).unwrap();
        let u = foot_wrench([0.0, 0.0, 100.0], [0.0, 2.0, 0.0]);
        assert!(cone.contains(&u, 1e-12));
        assert!(wrench_feasible_oracle(&u, &geom()));
    }

    #[test]
    fn roll_moment_is_rejected() {
        let cone = build_line_cwc(&geom()).unwrap();
        let u = foot_wrench([0.0, 0.0, 100.0], [0.01, 2.0, 0.0]);
        assert!(!cone.contains(&u, 1e-9));
        assert!(!wrench_feasible_oracle(&u, &geom()));
    }

    #[test]
    fn origin_is_feasible() {
        let cone = build_line_cwc(&geom()).unwrap();
        let u = foot_wrench([0.0; 3], [0.0; 3]);
        assert!(cone.contains(&u, 0.0));
        assert!(wrench_feasible_oracle(&u, &geom()));
    }

    #[test]
    fn tipping_limit() {
        // m_y just over the heel lever capacity tips the foot: the heel
        // normal force would have to go negative.
        let g = geom();
        let u = foot_wrench([0.0, 0.0, 100.0], [0.0, 100.0 * g.heel_length + 1e-6, 0.0]);
        assert!(!wrench_feasible_oracle(&u, &g));
        let cone = build_line_cwc(&g).unwrap();
        assert!(!cone.contains(&u, 1e-9));
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut g = geom();
        g.heel_length = 0.0;
        assert!(build_line_cwc(&g).is_err());
        g = geom();
        g.friction = -0.2;
        assert!(build_line_cwc(&g).is_err());
    }

    fn random_wrench(rng: &mut impl Rng) -> GroundWrench {
        // Shears and moments scaled to the friction/lever capacity at the
        // sampled normal force, slightly past the boundary, so the samples
        // straddle every face of the cone.
        let g = geom();
        let fz: f64 = rng.random_range(0.0..200.0);
        let f_cap = 1.4 * g.friction * fz;
        let my_cap = 1.4 * fz * g.heel_length.max(g.toe_length);
        let mz_cap = 1.8 * g.friction * fz * g.heel_length.max(g.toe_length);
        foot_wrench(
            [
                rng.random_range(-1.0..1.0) * f_cap,
                rng.random_range(-1.0..1.0) * f_cap,
                fz,
            ],
            [
                if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-1.0..1.0) },
                rng.random_range(-1.0..1.0) * my_cap,
                rng.random_range(-1.0..1.0) * mz_cap,
            ],
        )
    }

    #[test]
    fn oracle_equivalence_on_random_wrenches() {
        let g = geom();
        let cone = build_line_cwc(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let band = 1e-9;
        let mut inside = 0usize;
        for _ in 0..100_000 {
            let u = random_wrench(&mut rng);
            let (ineq, roll) = cone.split_violation(&u);
            // Boundary band: skip samples where either family sits within
            // the band of its own boundary.
            if ineq.abs() <= band || (roll != 0.0 && roll <= band) {
                continue;
            }
            let cone_ok = ineq < 0.0 && roll <= band;
            let oracle_ok = wrench_feasible_oracle(&u, &g);
            assert_eq!(cone_ok, oracle_ok, "disagreement at u = {u:?}, violation {ineq}");
            if cone_ok {
                inside += 1;
            }
        }
        assert!(inside > 1000, "sampling produced too few interior wrenches ({inside})");
    }

    #[test]
    fn forward_constructed_decompositions_are_feasible() {
        // Sample heel/toe point forces satisfying their own friction cones,
        // recombine into a wrench; both checks must accept it.
        let g = geom();
        let cone = build_line_cwc(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20_000 {
            let fz_h: f64 = rng.random_range(0.0..120.0);
            let fz_t: f64 = rng.random_range(0.0..120.0);
            let fy_h = rng.random_range(-1.0..1.0) * g.friction * fz_h;
            let fy_t = rng.random_range(-1.0..1.0) * g.friction * fz_t;
            let fx = rng.random_range(-1.0..1.0) * g.friction * (fz_h + fz_t);
            let u = foot_wrench(
                [fx, fy_h + fy_t, fz_h + fz_t],
                [
                    0.0,
                    fz_h * g.heel_length - fz_t * g.toe_length,
                    fy_t * g.toe_length - fy_h * g.heel_length,
                ],
            );
            assert!(wrench_feasible_oracle(&u, &g), "forward-constructed wrench rejected: {u:?}");
            assert!(cone.contains(&u, 1e-9));
        }
    }

    #[test]
    fn flat_foot_sanity() {
        // With zero moment and positive F_z, feasibility reduces to the
        // friction and force-cap conditions.
        let g = geom();
        let cone = build_line_cwc(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10_000 {
            let fz: f64 = rng.random_range(1.0..600.0);
            let fx: f64 = rng.random_range(-300.0..300.0);
            let fy: f64 = rng.random_range(-300.0..300.0);
            let u = foot_wrench([fx, fy, fz], [0.0; 3]);
            let expected = fx.abs() <= g.friction * fz
                && fy.abs() <= g.friction * fz
                && fz <= g.max_normal_force;
            if (fx.abs() - g.friction * fz).abs() < 1e-9
                || (fy.abs() - g.friction * fz).abs() < 1e-9
                || (fz - g.max_normal_force).abs() < 1e-9
            {
                continue;
            }
            assert_eq!(cone.contains(&u, 1e-9), expected);
            assert_eq!(wrench_feasible_oracle(&u, &g), expected);
        }
    }

    #[test]
    fn world_foot_rotations() {
        let u = GroundWrench::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), WrenchFrame::World);
        let r = yaw_rotation(std::f64::consts::FRAC_PI_2);
        let uf = world_to_foot_wrench(&u, &r).unwrap();
        assert_relative_eq!(uf.force, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-14);

        let id = Matrix3::identity();
        let same = world_to_foot_wrench(&u, &id).unwrap();
        assert_eq!(same.force, u.force);

        // Round trip.
        let back = foot_to_world_wrench(&uf, &r).unwrap();
        assert_relative_eq!(back.force, u.force, epsilon = 1e-14);

        // Non-orthonormal rotation is rejected.
        let mut bad = id;
        bad[(0, 0)] = 1.1;
        assert!(world_to_foot_wrench(&u, &bad).is_err());
    }

    proptest! {
        /// Scaling a feasible wrench toward the origin keeps it feasible as
        /// long as the force cap was inactive (cone property).
        #[test]
        fn cone_scaling_property(seed in 0u64..5000, lambda in 0.0f64..1.0) {
            let g = geom();
            let cone = build_line_cwc(&g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_wrench(&mut rng);
            if cone.contains(&u, 0.0) && u.force.z < g.max_normal_force {
                let scaled = foot_wrench(
                    [u.force.x * lambda, u.force.y * lambda, u.force.z * lambda],
                    [u.moment.x * lambda, u.moment.y * lambda, u.moment.z * lambda],
                );
                prop_assert!(cone.contains(&scaled, 1e-12));
            }
        }
    }
}
