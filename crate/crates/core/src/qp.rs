//! Dense convex quadratic programming.
//!
//! Solves
//! ```text
//!     minimize    1/2 z' H z + g' z
//!     subject to  A_eq z  = b_eq
//!                 A_in z <= b_in
//!                 lower <= z <= upper
//! ```
//! with a Mehrotra predictor-corrector primal-dual interior point method.
//! Finite box bounds are folded into the inequality block internally; the
//! reported duals keep the three constraint families separate.
//!
//! Every `Optimal` return is self-certifying: the solution carries the
//! stationarity, primal and complementarity residual norms evaluated at the
//! returned iterate.

use nalgebra::{DMatrix, DVector};
use std::io::Write;

/// Dense QP data. `lower`/`upper` entries may be infinite.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained template: all constraint blocks empty, bounds infinite.
    pub fn new(n: usize) -> Self {
        QpProblem {
            h: DMatrix::zeros(n, n),
            g: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    /// Check dimension consistency and symmetry of `H` (to 1e-10 relative).
    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(format!("H is {}x{}, expected {n}x{n}", self.h.nrows(), self.h.ncols()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err("equality block dimensions inconsistent".into());
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return Err("inequality block dimensions inconsistent".into());
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err("bound dimensions inconsistent".into());
        }
        let scale = if n > 0 { self.h.amax().max(1.0) } else { 1.0 };
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-10 * scale {
                    return Err(format!("H not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(())
    }

    /// Write the problem in a plain text matrix format (header with
    /// dimensions, then each block row-major, one row per line).
    pub fn dump_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        let n = self.num_vars();
        writeln!(w, "qp n={} m_eq={} m_in={}", n, self.b_eq.len(), self.b_in.len())?;
        let write_mat = |w: &mut dyn Write, name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
            writeln!(w, "{name} {}x{}", m.nrows(), m.ncols())?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        let write_vec = |w: &mut dyn Write, name: &str, v: &DVector<f64>| -> std::io::Result<()> {
            writeln!(w, "{name} {}", v.len())?;
            let row: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", row.join(" "))?;
            Ok(())
        };
        write_mat(w, "H", &self.h)?;
        write_vec(w, "g", &self.g)?;
        write_mat(w, "A_eq", &self.a_eq)?;
        write_vec(w, "b_eq", &self.b_eq)?;
        write_mat(w, "A_in", &self.a_in)?;
        write_vec(w, "b_in", &self.b_in)?;
        write_vec(w, "lower", &self.lower)?;
        write_vec(w, "upper", &self.upper)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    PrimalInfeasible,
    NumericalFailure,
}

/// Scalar norms of the KKT conditions at the returned iterate.
#[derive(Clone, Copy, Debug, Default)]
pub struct KktResiduals {
    /// `|| H z + g + A_eq' lam + A_in' mu + bound duals ||_inf`
    pub stationarity: f64,
    /// max of equality residual and positive part of inequality violation
    pub primal: f64,
    /// `max_i |mu_i s_i|` over all inequality/bound rows
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of `A_eq z = b_eq`.
    pub eq_duals: DVector<f64>,
    /// Multipliers of `A_in z <= b_in` (nonnegative).
    pub in_duals: DVector<f64>,
    /// Multipliers of `-z <= -lower` (nonnegative, full length `n`).
    pub lower_duals: DVector<f64>,
    /// Multipliers of `z <= upper` (nonnegative, full length `n`).
    pub upper_duals: DVector<f64>,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

/// One-shot convenience wrapper around [`QpSolver`].
pub fn qp_solve(p: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    QpSolver::new().solve(p, tol, max_iter)
}

/// Warm-start data: primal and inequality-family duals of a previous solve.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub in_duals: DVector<f64>,
    pub lower_duals: DVector<f64>,
    pub upper_duals: DVector<f64>,
}

impl From<&QpSolution> for WarmStart {
    fn from(s: &QpSolution) -> Self {
        WarmStart {
            z: s.z.clone(),
            in_duals: s.in_duals.clone(),
            lower_duals: s.lower_duals.clone(),
            upper_duals: s.upper_duals.clone(),
        }
    }
}

/// Interior-point solver with reusable workspace. One instance per thread;
/// instances hold no global state and can be moved between threads.
pub struct QpSolver {
    kkt: DMatrix<f64>,
    kkt_unreg: DMatrix<f64>,
    diag: DVector<f64>,
}

const STATIC_REG: f64 = 1e-9;
const PSD_SHIFT: f64 = 1e-9;

impl Default for QpSolver {
    fn default() -> Self {
        Self::new()
    }
}

impl QpSolver {
    pub fn new() -> Self {
        QpSolver {
            kkt: DMatrix::zeros(0, 0),
            kkt_unreg: DMatrix::zeros(0, 0),
            diag: DVector::zeros(0),
        }
    }

    pub fn solve(&mut self, p: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
        self.solve_warm(p, tol, max_iter, None)
    }

    pub fn solve_warm(
        &mut self,
        p: &QpProblem,
        tol: f64,
        max_iter: usize,
        warm: Option<&WarmStart>,
    ) -> QpSolution {
        if let Err(e) = p.validate() {
            panic!("invalid QP: {e}");
        }
        assert!(tol > 0.0, "tolerance must be positive");

        let n = p.num_vars();
        let m_in = p.b_in.len();
        let me = p.b_eq.len();

        // Ruiz equilibration: variable scaling d_var and row scalings for
        // the two constraint blocks, bringing badly mixed weight magnitudes
        // toward O(1) so the regularized KKT factorization stays accurate.
        let mut d_var = DVector::from_element(n, 1.0);
        let mut e_eq = DVector::from_element(me, 1.0);
        let mut e_in = DVector::from_element(m_in, 1.0);
        {
            let mut h = p.h.clone();
            let mut aeq = p.a_eq.clone();
            let mut ain = p.a_in.clone();
            // Jacobi-style sweeps, organized column-major throughout.
            for _ in 0..3 {
                let mut col_scale = vec![1.0f64; n];
                for j in 0..n {
                    let mut cmax = h.column(j).amax();
                    if me > 0 {
                        cmax = cmax.max(aeq.column(j).amax());
                    }
                    if m_in > 0 {
                        cmax = cmax.max(ain.column(j).amax());
                    }
                    col_scale[j] = if cmax > 1e-12 { 1.0 / cmax.sqrt() } else { 1.0 };
                    d_var[j] *= col_scale[j];
                }
                for j in 0..n {
                    let sj = col_scale[j];
                    let mut col = h.column_mut(j);
                    for i in 0..n {
                        col[i] *= sj * col_scale[i];
                    }
                    if me > 0 {
                        let mut col = aeq.column_mut(j);
                        for i in 0..me {
                            col[i] *= sj;
                        }
                    }
                    if m_in > 0 {
                        let mut col = ain.column_mut(j);
                        for i in 0..m_in {
                            col[i] *= sj;
                        }
                    }
                }
                // Row maxima accumulated in one column-major sweep.
                let mut row_eq = vec![0.0f64; me];
                let mut row_in = vec![0.0f64; m_in];
                for j in 0..n {
                    let col = aeq.column(j);
                    for i in 0..me {
                        row_eq[i] = row_eq[i].max(col[i].abs());
                    }
                    let col = ain.column(j);
                    for i in 0..m_in {
                        row_in[i] = row_in[i].max(col[i].abs());
                    }
                }
                let row_eq: Vec<f64> =
                    row_eq.iter().map(|&m| if m > 1e-12 { 1.0 / m } else { 1.0 }).collect();
                let row_in: Vec<f64> =
                    row_in.iter().map(|&m| if m > 1e-12 { 1.0 / m } else { 1.0 }).collect();
                for i in 0..me {
                    e_eq[i] *= row_eq[i];
                }
                for i in 0..m_in {
                    e_in[i] *= row_in[i];
                }
                for j in 0..n {
                    let mut col = aeq.column_mut(j);
                    for i in 0..me {
                        col[i] *= row_eq[i];
                    }
                    let mut col = ain.column_mut(j);
                    for i in 0..m_in {
                        col[i] *= row_in[i];
                    }
                }
            }
        }

        // Scaled problem data.
        let mut sp = QpProblem::new(n);
        sp.h = p.h.clone();
        for i in 0..n {
            for j in 0..n {
                sp.h[(i, j)] *= d_var[i] * d_var[j];
            }
        }
        sp.g = p.g.component_mul(&d_var);
        sp.a_eq = p.a_eq.clone();
        sp.b_eq = p.b_eq.component_mul(&e_eq);
        for i in 0..me {
            for j in 0..n {
                sp.a_eq[(i, j)] *= e_eq[i] * d_var[j];
            }
        }
        sp.a_in = p.a_in.clone();
        sp.b_in = p.b_in.component_mul(&e_in);
        for i in 0..m_in {
            for j in 0..n {
                sp.a_in[(i, j)] *= e_in[i] * d_var[j];
            }
        }
        for j in 0..n {
            sp.lower[j] = p.lower[j] / d_var[j];
            sp.upper[j] = p.upper[j] / d_var[j];
        }

        // Fold finite bounds of the scaled problem into C z <= d.
        // Row order: a_in rows, then upper-bound rows, then lower-bound rows.
        let mut upper_rows = Vec::new();
        let mut lower_rows = Vec::new();
        for j in 0..n {
            if sp.upper[j].is_finite() {
                upper_rows.push(j);
            }
            if sp.lower[j].is_finite() {
                lower_rows.push(j);
            }
        }
        let mi = m_in + upper_rows.len() + lower_rows.len();
        let mut c = DMatrix::zeros(mi, n);
        let mut d = DVector::zeros(mi);
        c.view_mut((0, 0), (m_in, n)).copy_from(&sp.a_in);
        d.rows_mut(0, m_in).copy_from(&sp.b_in);
        for (k, &j) in upper_rows.iter().enumerate() {
            let r = m_in + k;
            c[(r, j)] = 1.0;
            d[r] = sp.upper[j];
        }
        for (k, &j) in lower_rows.iter().enumerate() {
            let r = m_in + upper_rows.len() + k;
            c[(r, j)] = -1.0;
            d[r] = -sp.lower[j];
        }
        // Row scale of each C row back to original units.
        let mut e_row = DVector::from_element(mi, 1.0);
        for i in 0..m_in {
            e_row[i] = e_in[i];
        }
        for (k, &j) in upper_rows.iter().enumerate() {
            e_row[m_in + k] = 1.0 / d_var[j];
        }
        for (k, &j) in lower_rows.iter().enumerate() {
            e_row[m_in + upper_rows.len() + k] = 1.0 / d_var[j];
        }

        // Scale any warm start into the equilibrated space.
        let warm_scaled = warm.map(|ws| WarmStart {
            z: DVector::from_fn(n, |j, _| ws.z.get(j).copied().unwrap_or(0.0) / d_var[j]),
            in_duals: DVector::from_fn(m_in, |i, _| {
                ws.in_duals.get(i).copied().unwrap_or(1.0) / e_in[i]
            }),
            lower_duals: DVector::from_fn(n, |j, _| {
                ws.lower_duals.get(j).copied().unwrap_or(1.0) * d_var[j]
            }),
            upper_duals: DVector::from_fn(n, |j, _| {
                ws.upper_duals.get(j).copied().unwrap_or(1.0) * d_var[j]
            }),
        });

        let scaling = Scaling { d_var, e_eq, e_row };
        self.run_ipm(
            p,
            &sp,
            &c,
            &d,
            &scaling,
            tol,
            max_iter,
            warm_scaled.as_ref(),
            &upper_rows,
            &lower_rows,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn run_ipm(
        &mut self,
        orig: &QpProblem,
        p: &QpProblem,
        c: &DMatrix<f64>,
        d: &DVector<f64>,
        scaling: &Scaling,
        tol: f64,
        max_iter: usize,
        warm: Option<&WarmStart>,
        upper_rows: &[usize],
        lower_rows: &[usize],
    ) -> QpSolution {
        let n = p.num_vars();
        let me = p.b_eq.len();
        let mi = d.len();
        let dim = n + me;

        if self.kkt.nrows() != dim {
            self.kkt = DMatrix::zeros(dim, dim);
            self.kkt_unreg = DMatrix::zeros(dim, dim);
            self.diag = DVector::zeros(dim);
        }

        // Initial point: regularized equality-constrained Newton step, then
        // slacks/duals shifted strictly inside the cone.
        let mut z = DVector::zeros(n);
        let mut lam = DVector::zeros(me);
        let mut mu = DVector::from_element(mi, 1.0);
        let mut s = DVector::from_element(mi, 1.0);

        let w_init = DVector::zeros(mi);
        if self.factor_kkt(p, c, &w_init).is_err() {
            return self.finish(
                orig, scaling, z, lam, mu, QpStatus::NumericalFailure, 0, upper_rows, lower_rows,
            );
        }
        {
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&p.g));
            rhs.rows_mut(n, me).copy_from(&p.b_eq);
            let sol = self.solve_kkt(&rhs, 2);
            z.copy_from(&sol.rows(0, n).into_owned());
            lam.copy_from(&sol.rows(n, me).into_owned());
        }
        if let Some(ws) = warm {
            if ws.z.len() == n {
                z.copy_from(&ws.z);
                let m_in = p.b_in.len();
                for k in 0..m_in {
                    mu[k] = ws.in_duals.get(k).copied().unwrap_or(1.0).max(1e-3);
                }
                for (k, &j) in upper_rows.iter().enumerate() {
                    mu[m_in + k] = ws.upper_duals.get(j).copied().unwrap_or(1.0).max(1e-3);
                }
                for (k, &j) in lower_rows.iter().enumerate() {
                    mu[m_in + upper_rows.len() + k] =
                        ws.lower_duals.get(j).copied().unwrap_or(1.0).max(1e-3);
                }
            }
        }
        if mi > 0 {
            let slack = d - c * &z;
            let shift = (-slack.min()).max(0.0) + 1.0;
            for i in 0..mi {
                s[i] = slack[i] + shift;
                // Start centered: s_i mu_i equal across rows.
                mu[i] = (1.0 / s[i]).clamp(1e-6, 1e6);
            }
        }

        let mut status = QpStatus::MaxIter;
        let mut iter_count = 0;
        let mut polished = false;

        let mut w = DVector::zeros(mi);
        let mut rhs = DVector::zeros(dim);
        let mut tmp = DVector::zeros(mi);

        for iter in 0..max_iter {
            iter_count = iter + 1;

            // Residuals at the current iterate (scaled space).
            let r_d = &p.h * &z + &p.g + p.a_eq.tr_mul(&lam) + c.tr_mul(&mu);
            let r_e = &p.a_eq * &z - &p.b_eq;
            let cz = c * &z;
            let r_i = &cz + &s - d;
            let comp_gap = if mi > 0 { mu.dot(&s) / mi as f64 } else { 0.0 };
            // Complementarity products are invariant under the scaling.
            let comp_max = (0..mi).map(|i| (mu[i] * s[i]).abs()).fold(0.0, f64::max);

            // Convergence is judged on unscaled residuals, recovered
            // componentwise from the scaled ones.
            let stat_u = (0..n)
                .map(|j| (r_d[j] / scaling.d_var[j]).abs())
                .fold(0.0, f64::max);
            let prim_eq_u = (0..me)
                .map(|i| (r_e[i] / scaling.e_eq[i]).abs())
                .fold(0.0, f64::max);
            let viol_u = (0..mi)
                .map(|i| ((cz[i] - d[i]).max(0.0) / scaling.e_row[i]).abs())
                .fold(0.0, f64::max);
            let primal = prim_eq_u.max(viol_u);

            if std::env::var_os("QP_TRACE").is_some() {
                eprintln!(
                    "iter {iter:3}  stat {stat_u:9.3e}  primal {primal:9.3e}  comp {comp_max:9.3e}"
                );
            }
            if stat_u <= tol && primal <= tol && comp_max <= tol {
                status = QpStatus::Optimal;
                break;
            }
            // The condensed system loses accuracy once the barrier is
            // essentially closed; stop and let the active-set polish finish.
            if comp_max <= 1e-4 * tol && iter >= 4 {
                break;
            }
            // Once primal feasibility and complementarity are in, the
            // active set is usually settled: try finishing with a polish
            // solve instead of grinding the stationarity floor down.
            if primal <= tol && comp_max <= tol && iter >= 6 && iter % 2 == 0 {
                if let Some((zp, lamp, mup)) = self.polish(p, c, d, &s, &mu) {
                    if kkt_worst(p, c, d, scaling, &zp, &lamp, &mup) <= tol {
                        z = zp;
                        lam = lamp;
                        mu = mup;
                        status = QpStatus::Optimal;
                        polished = true;
                        break;
                    }
                }
            }
            if !z.iter().all(|v| v.is_finite()) || !mu.iter().all(|v| v.is_finite()) {
                status = QpStatus::NumericalFailure;
                break;
            }

            // Farkas-type certificate: duals diverging while combining into
            // a separating direction for the primal constraints.
            let dual_scale = lam.amax_or_zero().max(mu.amax_or_zero());
            if dual_scale > 1e8 {
                let cert = p.a_eq.tr_mul(&lam) + c.tr_mul(&mu);
                let cert_obj = p.b_eq.dot(&lam) + d.dot(&mu);
                if cert.amax_or_zero() <= 1e-8 * dual_scale && cert_obj < -1e-10 * dual_scale {
                    status = QpStatus::PrimalInfeasible;
                    break;
                }
            }

            // Scaling matrix W = diag(mu / s), clamped to keep the condensed
            // system factorable near the boundary (the polish step removes
            // the resulting complementarity bias).
            for i in 0..mi {
                w[i] = (mu[i] / s[i]).min(1e8);
            }
            if self.factor_kkt(p, c, &w).is_err() {
                status = QpStatus::NumericalFailure;
                break;
            }

            // Predictor (affine) direction: r_c = S mu, so S^{-1} r_c = mu.
            for i in 0..mi {
                tmp[i] = w[i] * r_i[i] - mu[i];
            }
            {
                let top = -&r_d - c.tr_mul(&tmp);
                rhs.rows_mut(0, n).copy_from(&top);
                rhs.rows_mut(n, me).copy_from(&(-&r_e));
            }
            let sol = self.solve_kkt(&rhs, 1);
            let dz_aff = sol.rows(0, n).into_owned();
            let mut dmu_aff = DVector::zeros(mi);
            let mut ds_aff = DVector::zeros(mi);
            let c_dz_aff = c * &dz_aff;
            for i in 0..mi {
                dmu_aff[i] = w[i] * (c_dz_aff[i] + r_i[i]) - mu[i];
                ds_aff[i] = -(s[i] * mu[i] + s[i] * dmu_aff[i]) / mu[i];
            }

            let alpha_p_aff = max_step(&s, &ds_aff);
            let alpha_d_aff = max_step(&mu, &dmu_aff);
            let mu_aff = if mi > 0 {
                (0..mi)
                    .map(|i| (mu[i] + alpha_d_aff * dmu_aff[i]) * (s[i] + alpha_p_aff * ds_aff[i]))
                    .sum::<f64>()
                    / mi as f64
            } else {
                0.0
            };
            let sigma = if comp_gap > 0.0 {
                (mu_aff / comp_gap).clamp(0.0, 1.0).powi(3)
            } else {
                0.0
            };

            // Corrector: r_c = S mu + ds_aff .* dmu_aff - sigma*gap.
            for i in 0..mi {
                let r_c = s[i] * mu[i] + ds_aff[i] * dmu_aff[i] - sigma * comp_gap;
                tmp[i] = w[i] * r_i[i] - r_c / s[i];
            }
            {
                let top = -&r_d - c.tr_mul(&tmp);
                rhs.rows_mut(0, n).copy_from(&top);
                rhs.rows_mut(n, me).copy_from(&(-&r_e));
            }
            let sol = self.solve_kkt(&rhs, 1);
            let dz = sol.rows(0, n).into_owned();
            let dlam = sol.rows(n, me).into_owned();
            let mut dmu = DVector::zeros(mi);
            let mut ds = DVector::zeros(mi);
            let c_dz = c * &dz;
            for i in 0..mi {
                let r_c = s[i] * mu[i] + ds_aff[i] * dmu_aff[i] - sigma * comp_gap;
                dmu[i] = w[i] * (c_dz[i] + r_i[i]) - r_c / s[i];
                ds[i] = -(r_c + s[i] * dmu[i]) / mu[i];
            }

            // A common step length keeps all linear residuals contracting
            // together by (1 - alpha).
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&mu, &dmu))).min(1.0);
            z += alpha * &dz;
            s += alpha * &ds;
            lam += alpha * &dlam;
            mu += alpha * &dmu;
        }

        // Active-set polish: re-solve with the apparently active rows as
        // equalities through a well-conditioned KKT system. Accept only if
        // it does not make anything worse.
        if !polished && status != QpStatus::PrimalInfeasible && status != QpStatus::NumericalFailure
        {
            if let Some((zp, lamp, mup)) = self.polish(p, c, d, &s, &mu) {
                let worst_before = kkt_worst(p, c, d, scaling, &z, &lam, &mu);
                let worst_after = kkt_worst(p, c, d, scaling, &zp, &lamp, &mup);
                if worst_after <= worst_before {
                    z = zp;
                    lam = lamp;
                    mu = mup;
                }
            }
            let worst = kkt_worst(p, c, d, scaling, &z, &lam, &mu);
            status = if worst <= tol {
                QpStatus::Optimal
            } else {
                // Residual infeasibility: try to build an explicit Farkas
                // certificate from the rows the iterate crashed into.
                let cz = c * &z;
                let crash: Vec<usize> = (0..mi).filter(|&i| s[i] < 1e-6 || cz[i] > d[i]).collect();
                if farkas_certificate(p, c, d, &crash) {
                    QpStatus::PrimalInfeasible
                } else {
                    QpStatus::MaxIter
                }
            };
        }

        self.finish(orig, scaling, z, lam, mu, status, iter_count, upper_rows, lower_rows)
    }

    /// Equality-solve on the active set guessed from the slack/dual split,
    /// with a few drop-and-resolve passes: rows whose multiplier comes out
    /// negative are removed (degenerate pairs such as opposing bound rows
    /// otherwise split their dual with arbitrary signs).
    fn polish(
        &mut self,
        p: &QpProblem,
        c: &DMatrix<f64>,
        d: &DVector<f64>,
        s: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = p.num_vars();
        let me = p.b_eq.len();
        let mi = d.len();
        let mut active: Vec<usize> = (0..mi).filter(|&i| mu[i] > s[i]).collect();

        for _pass in 0..4 {
            let na = active.len();
            let dim = n + me + na;

            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
            kkt.view_mut((n, 0), (me, n)).copy_from(&p.a_eq);
            kkt.view_mut((0, n), (n, me)).copy_from(&p.a_eq.transpose());
            for (k, &row) in active.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + me + k, j)] = c[(row, j)];
                    kkt[(j, n + me + k)] = c[(row, j)];
                }
            }
            let scale = kkt.amax().max(1.0);
            let unreg = kkt.clone();
            for j in 0..n {
                kkt[(j, j)] += (STATIC_REG + PSD_SHIFT) * scale;
            }
            for j in n..dim {
                kkt[(j, j)] -= STATIC_REG * scale;
            }
            let mut diag = DVector::zeros(dim);
            ldl_factor(&mut kkt, &mut diag, n, scale).ok()?;

            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&p.g));
            rhs.rows_mut(n, me).copy_from(&p.b_eq);
            for (k, &row) in active.iter().enumerate() {
                rhs[n + me + k] = d[row];
            }
            let mut x = rhs.clone();
            ldl_solve(&kkt, &diag, &mut x);
            for _ in 0..2 {
                let mut r = &rhs - &unreg * &x;
                ldl_solve(&kkt, &diag, &mut r);
                x += r;
            }
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }

            let drop_tol = -1e-9;
            let negatives: Vec<usize> = (0..active.len())
                .filter(|&k| x[n + me + k] < drop_tol)
                .collect();
            if negatives.is_empty() {
                let zp = x.rows(0, n).into_owned();
                let lamp = x.rows(n, me).into_owned();
                let mut mup = DVector::zeros(mi);
                for (k, &row) in active.iter().enumerate() {
                    mup[row] = x[n + me + k].max(0.0);
                }
                return Some((zp, lamp, mup));
            }
            for &k in negatives.iter().rev() {
                active.remove(k);
            }
        }
        None
    }

    /// Map a scaled iterate back to the original problem, recompute the
    /// KKT residuals against the original data, and package the solution.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        orig: &QpProblem,
        scaling: &Scaling,
        z_s: DVector<f64>,
        lam_s: DVector<f64>,
        mu_s: DVector<f64>,
        status: QpStatus,
        iterations: usize,
        upper_rows: &[usize],
        lower_rows: &[usize],
    ) -> QpSolution {
        let n = orig.num_vars();
        let m_in = orig.b_in.len();

        let z = z_s.component_mul(&scaling.d_var);
        let lam = lam_s.component_mul(&scaling.e_eq);
        let mut in_duals = DVector::zeros(m_in);
        for i in 0..m_in {
            in_duals[i] = mu_s[i] * scaling.e_row[i];
        }
        let mut upper_duals = DVector::zeros(n);
        let mut lower_duals = DVector::zeros(n);
        for (k, &j) in upper_rows.iter().enumerate() {
            upper_duals[j] = mu_s[m_in + k] * scaling.e_row[m_in + k];
        }
        for (k, &j) in lower_rows.iter().enumerate() {
            let r = m_in + upper_rows.len() + k;
            lower_duals[j] = mu_s[r] * scaling.e_row[r];
        }

        let r_d = &orig.h * &z
            + &orig.g
            + orig.a_eq.tr_mul(&lam)
            + orig.a_in.tr_mul(&in_duals)
            + &upper_duals
            - &lower_duals;
        let r_e = &orig.a_eq * &z - &orig.b_eq;
        let az = &orig.a_in * &z;
        let mut viol: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..m_in {
            viol = viol.max(az[i] - orig.b_in[i]);
            comp = comp.max(((orig.b_in[i] - az[i]) * in_duals[i]).abs());
        }
        for j in 0..n {
            if orig.upper[j].is_finite() {
                viol = viol.max(z[j] - orig.upper[j]);
                comp = comp.max(((orig.upper[j] - z[j]) * upper_duals[j]).abs());
            }
            if orig.lower[j].is_finite() {
                viol = viol.max(orig.lower[j] - z[j]);
                comp = comp.max(((z[j] - orig.lower[j]) * lower_duals[j]).abs());
            }
        }
        let residuals = KktResiduals {
            stationarity: r_d.amax_or_zero(),
            primal: r_e.amax_or_zero().max(viol.max(0.0)),
            complementarity: comp,
        };

        QpSolution {
            z,
            eq_duals: lam,
            in_duals,
            lower_duals,
            upper_duals,
            status,
            residuals,
            iterations,
        }
    }

    /// Assemble and LDL'-factor the condensed KKT matrix
    /// `[H + C' W C + eps*I,  A_eq'; A_eq, -reg*I]`.
    fn factor_kkt(&mut self, p: &QpProblem, c: &DMatrix<f64>, w: &DVector<f64>) -> Result<(), ()> {
        let n = p.num_vars();
        let me = p.b_eq.len();
        let mi = w.len();
        let dim = n + me;

        self.kkt_unreg.fill(0.0);
        self.kkt_unreg.view_mut((0, 0), (n, n)).copy_from(&p.h);
        if mi > 0 {
            // H += C' W C, accumulated as (sqrt(W) C)' (sqrt(W) C) through
            // the fast gemm path (gemm_tr has no such specialization).
            let w_sqrt: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
            let mut cw = c.clone();
            for j in 0..n {
                let mut col = cw.column_mut(j);
                for i in 0..mi {
                    col[i] *= w_sqrt[i];
                }
            }
            let cwt = cw.transpose();
            let mut block = self.kkt_unreg.view_mut((0, 0), (n, n));
            block.gemm(1.0, &cwt, &cw, 1.0);
        }
        if me > 0 {
            self.kkt_unreg.view_mut((n, 0), (me, n)).copy_from(&p.a_eq);
            self.kkt_unreg
                .view_mut((0, n), (n, me))
                .copy_from(&p.a_eq.transpose());
        }

        self.kkt.copy_from(&self.kkt_unreg);
        // Regularization tied to the problem data, not to the W-inflated
        // KKT entries, so iterative refinement keeps converging when active
        // rows push W toward its clamp.
        let scale = p.h.amax().max(if me > 0 { p.a_eq.amax() } else { 0.0 }).max(1.0);
        for j in 0..n {
            self.kkt[(j, j)] += (STATIC_REG + PSD_SHIFT) * scale;
        }
        for j in n..dim {
            self.kkt[(j, j)] -= STATIC_REG * scale;
        }

        ldl_factor(&mut self.kkt, &mut self.diag, n, scale)
    }

    /// Solve with the current factorization, plus `refine` rounds of
    /// iterative refinement against the unregularized KKT matrix.
    fn solve_kkt(&self, rhs: &DVector<f64>, refine: usize) -> DVector<f64> {
        let mut x = rhs.clone();
        ldl_solve(&self.kkt, &self.diag, &mut x);
        for _ in 0..refine {
            let mut r = rhs - &self.kkt_unreg * &x;
            ldl_solve(&self.kkt, &self.diag, &mut r);
            x += r;
        }
        x
    }
}

/// Search for a Farkas infeasibility certificate supported on the given
/// inequality rows: `(y, mu >= 0)` with `A_eq' y + C_A' mu = 0` and
/// `b_eq' y + d_A' mu < 0`. Returns true only after verifying the
/// certificate explicitly.
fn farkas_certificate(
    p: &QpProblem,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    rows: &[usize],
) -> bool {
    let n = p.num_vars();
    let me = p.b_eq.len();
    let na = rows.len();
    let nv = me + na;
    if nv == 0 {
        return false;
    }
    // Stack M = [A_eq' C_A'] and the affine row c_v = [b_eq; d_A]; minimize
    // |M v|^2 subject to c_v . v = -1 through its KKT system.
    let mut m = DMatrix::zeros(n, nv);
    for i in 0..me {
        for j in 0..n {
            m[(j, i)] = p.a_eq[(i, j)];
        }
    }
    for (k, &row) in rows.iter().enumerate() {
        for j in 0..n {
            m[(j, me + k)] = c[(row, j)];
        }
    }
    let mut cv = DVector::zeros(nv);
    for i in 0..me {
        cv[i] = p.b_eq[i];
    }
    for (k, &row) in rows.iter().enumerate() {
        cv[me + k] = d[row];
    }

    let mut kkt = DMatrix::zeros(nv + 1, nv + 1);
    let mtm = m.tr_mul(&m);
    for i in 0..nv {
        for j in 0..nv {
            kkt[(i, j)] = mtm[(i, j)];
        }
        kkt[(i, i)] += 1e-12 * mtm.amax().max(1.0);
        kkt[(i, nv)] = cv[i];
        kkt[(nv, i)] = cv[i];
    }
    let mut rhs = DVector::zeros(nv + 1);
    rhs[nv] = -1.0;
    let sol = match kkt.lu().solve(&rhs) {
        Some(s) => s,
        None => return false,
    };
    let v = sol.rows(0, nv).into_owned();

    // Verify: nonnegative inequality multipliers, combination annihilates
    // the constraint gradients, and the objective is strictly negative.
    let v_scale = v.amax_or_zero();
    if v_scale <= 0.0 || !v.iter().all(|x| x.is_finite()) {
        return false;
    }
    for k in 0..na {
        if v[me + k] < -1e-9 * v_scale {
            return false;
        }
    }
    let residual = (&m * &v).amax_or_zero();
    let objective = cv.dot(&v);
    residual <= 1e-7 * v_scale && objective < -1e-9 * v_scale
}

/// Row/column scalings of the equilibrated problem and the map back.
struct Scaling {
    d_var: DVector<f64>,
    e_eq: DVector<f64>,
    /// Per-row scale of the folded inequality block (a_in rows then bounds).
    e_row: DVector<f64>,
}

/// Worst unscaled KKT residual of a scaled-space iterate.
fn kkt_worst(
    p: &QpProblem,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    scaling: &Scaling,
    z: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let n = p.num_vars();
    let me = p.b_eq.len();
    let r_d = &p.h * z + &p.g + p.a_eq.tr_mul(lam) + c.tr_mul(mu);
    let r_e = &p.a_eq * z - &p.b_eq;
    let cz = c * z;
    let mi = d.len();
    let stat = (0..n).map(|j| (r_d[j] / scaling.d_var[j]).abs()).fold(0.0, f64::max);
    let prim_eq = (0..me).map(|i| (r_e[i] / scaling.e_eq[i]).abs()).fold(0.0, f64::max);
    let viol = (0..mi)
        .map(|i| (cz[i] - d[i]).max(0.0) / scaling.e_row[i])
        .fold(0.0, f64::max);
    let comp = (0..mi).map(|i| ((d[i] - cz[i]) * mu[i]).abs()).fold(0.0, f64::max);
    let neg_mu = (0..mi).map(|i| (-mu[i]).max(0.0)).fold(0.0, f64::max);
    stat.max(prim_eq).max(viol).max(comp).max(neg_mu)
}

/// Largest step `alpha <= 1` keeping `v + alpha*dv >= 0` strictly feasible.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Unpivoted blocked LDL' factorization in place (lower triangle of `k`).
/// The matrix is quasi-definite by construction: the first `n_pos` pivots
/// should come out positive, the rest negative. Pivots too close to zero
/// are bumped to `+/- tiny` keeping the expected sign; the shift is later
/// absorbed by iterative refinement.
fn ldl_factor(
    k: &mut DMatrix<f64>,
    diag: &mut DVector<f64>,
    n_pos: usize,
    scale: f64,
) -> Result<(), ()> {
    let dim = k.nrows();
    let nb = 32usize;
    let tiny = 1e-13 * scale;

    let mut j0 = 0;
    while j0 < dim {
        let j1 = (j0 + nb).min(dim);

        {
            let data = k.as_mut_slice();
            for j in j0..j1 {
                // Apply updates from earlier panel columns to column j.
                for kcol in j0..j {
                    let ljk = data[j + kcol * dim];
                    let f = ljk * diag[kcol];
                    if f != 0.0 {
                        let (a, b) = data.split_at_mut(j * dim);
                        let kc = &a[kcol * dim + j..kcol * dim + dim];
                        let jc = &mut b[j..dim];
                        for (x, y) in jc.iter_mut().zip(kc) {
                            *x -= y * f;
                        }
                    }
                }
                let mut dj = data[j + j * dim];
                if !dj.is_finite() {
                    return Err(());
                }
                let want_pos = j < n_pos;
                if want_pos && dj < tiny {
                    dj = tiny;
                } else if !want_pos && dj > -tiny {
                    dj = -tiny;
                }
                diag[j] = dj;
                let inv = 1.0 / dj;
                data[j + j * dim] = 1.0;
                for i in (j + 1)..dim {
                    data[i + j * dim] *= inv;
                }
            }
        }

        // Trailing update: K[j1.., j1..] -= L[j1.., j0..j1] * D * L'.
        if j1 < dim {
            let tail = dim - j1;
            let width = j1 - j0;
            let l_panel = k.view((j1, j0), (tail, width)).into_owned();
            let mut ld = l_panel.clone();
            for (col, dj) in (j0..j1).enumerate() {
                let dv = diag[dj];
                for i in 0..tail {
                    ld[(i, col)] *= dv;
                }
            }
            let mut trailing = k.view_mut((j1, j1), (tail, tail));
            trailing.gemm(-1.0, &ld, &l_panel.transpose(), 1.0);
        }

        j0 = j1;
    }
    Ok(())
}

/// Solve `L D L' x = b` in place using factors from [`ldl_factor`].
fn ldl_solve(k: &DMatrix<f64>, diag: &DVector<f64>, b: &mut DVector<f64>) {
    let dim = k.nrows();
    let data = k.as_slice();
    let x = b.as_mut_slice();
    // Forward: L y = b (unit lower triangular).
    for j in 0..dim {
        let yj = x[j];
        if yj != 0.0 {
            let col = &data[j * dim..(j + 1) * dim];
            for i in (j + 1)..dim {
                x[i] -= col[i] * yj;
            }
        }
    }
    for j in 0..dim {
        x[j] /= diag[j];
    }
    // Backward: L' x = y.
    for j in (0..dim).rev() {
        let col = &data[j * dim..(j + 1) * dim];
        let mut xj = x[j];
        for i in (j + 1)..dim {
            xj -= col[i] * x[i];
        }
        x[j] = xj;
    }
}

trait AmaxOrZero {
    fn amax_or_zero(&self) -> f64;
}

impl AmaxOrZero for DVector<f64> {
    fn amax_or_zero(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.amax()
        }
    }
}
