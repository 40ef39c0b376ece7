//! Dense convex QP solver: minimize `0.5 z'Pz + q'z` subject to `l <= Az <= u`.
//!
//! Operator-splitting (ADMM) iteration with over-relaxation, Ruiz
//! equilibration, a larger penalty on equality rows, and residual-ratio
//! penalty adaptation. Deterministic: identical inputs and settings produce
//! bit-identical iterates.

use crate::error::{Error, Result};
use crate::{Mat, Vec64};
use nalgebra::Cholesky;

/// Sentinel for infinite bounds. Anything at or beyond this magnitude is
/// treated as unbounded.
pub const INF_BOUND: f64 = 1e30;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p_mat: Mat,
    pub q_vec: Vec64,
    pub a_mat: Mat,
    pub l_vec: Vec64,
    pub u_vec: Vec64,
}

impl QpProblem {
    pub fn new(p_mat: Mat, q_vec: Vec64, a_mat: Mat, l_vec: Vec64, u_vec: Vec64) -> Result<Self> {
        let n = p_mat.nrows();
        let m = a_mat.nrows();
        if p_mat.ncols() != n || q_vec.len() != n || a_mat.ncols() != n {
            return Err(Error::DimensionMismatch("QP cost/constraint dimensions".into()));
        }
        if l_vec.len() != m || u_vec.len() != m || m == 0 || n == 0 {
            return Err(Error::DimensionMismatch("QP bound dimensions".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (p_mat[(i, j)] - p_mat[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument(format!(
                        "P not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        for i in 0..m {
            if l_vec[i] > u_vec[i] {
                return Err(Error::InvalidArgument(format!(
                    "bounds crossed in row {i}: l={} > u={}",
                    l_vec[i], u_vec[i]
                )));
            }
        }
        Ok(QpProblem { p_mat, q_vec, a_mat, l_vec, u_vec })
    }

    pub fn n(&self) -> usize {
        self.p_mat.nrows()
    }

    pub fn m(&self) -> usize {
        self.a_mat.nrows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Small primal regularization.
    pub sigma: f64,
    /// Over-relaxation parameter in (1, 2).
    pub alpha: f64,
    /// Residuals (and termination) are checked every this many iterations.
    pub check_interval: usize,
    /// Penalty adaptation cadence; the factorization is refreshed on change.
    pub adapt_interval: usize,
    /// Tolerance for the primal-infeasibility certificate.
    pub eps_pinf: f64,
    /// Ruiz equilibration sweeps.
    pub scaling_iters: usize,
    /// Solve the active-set KKT system after convergence for a
    /// high-accuracy solution; falls back silently when it does not improve
    /// the residuals.
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 25,
            adapt_interval: 50,
            eps_pinf: 1e-6,
            scaling_iters: 10,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z_star: Vec64,
    /// Dual multipliers for the `l <= Az <= u` rows (positive on active upper
    /// bounds, negative on active lower bounds).
    pub y_star: Vec64,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

/// Reusable solver: the problem structure is scaled and factorized once;
/// bounds (and the linear cost) may be updated cheaply between solves.
pub struct QpSolver {
    n: usize,
    m: usize,
    settings: QpSettings,
    // Original data, used for residual checks and returned quantities.
    prob: QpProblem,
    // Ruiz-scaled data.
    p_s: Mat,
    q_s: Vec64,
    a_s: Mat,
    l_s: Vec64,
    u_s: Vec64,
    d_scale: Vec64,
    e_scale: Vec64,
    c_scale: f64,
    rho_vec: Vec64,
    rho_base: f64,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

fn is_neg_inf(v: f64) -> bool {
    v <= -INF_BOUND
}

fn is_pos_inf(v: f64) -> bool {
    v >= INF_BOUND
}

impl QpSolver {
    pub fn new(prob: QpProblem, settings: QpSettings) -> Result<Self> {
        let n = prob.n();
        let m = prob.m();

        // Ruiz equilibration of the KKT block [P A'; A 0] plus cost scaling.
        let mut p_s = prob.p_mat.clone();
        let mut q_s = prob.q_vec.clone();
        let mut a_s = prob.a_mat.clone();
        let mut d_scale = Vec64::from_element(n, 1.0);
        let mut e_scale = Vec64::from_element(m, 1.0);
        let mut c_scale = 1.0;
        for _ in 0..settings.scaling_iters {
            let mut dv = Vec64::from_element(n, 1.0);
            for j in 0..n {
                let mut norm: f64 = 0.0;
                for i in 0..n {
                    norm = norm.max(p_s[(i, j)].abs());
                }
                for i in 0..m {
                    norm = norm.max(a_s[(i, j)].abs());
                }
                if norm > 1e-12 {
                    dv[j] = 1.0 / norm.sqrt();
                }
            }
            let mut ev = Vec64::from_element(m, 1.0);
            for i in 0..m {
                let mut norm: f64 = 0.0;
                for j in 0..n {
                    norm = norm.max(a_s[(i, j)].abs());
                }
                if norm > 1e-12 {
                    ev[i] = 1.0 / norm.sqrt();
                }
            }
            for i in 0..n {
                for j in 0..n {
                    p_s[(i, j)] *= dv[i] * dv[j];
                }
                q_s[i] *= dv[i];
            }
            for i in 0..m {
                for j in 0..n {
                    a_s[(i, j)] *= ev[i] * dv[j];
                }
            }
            d_scale.component_mul_assign(&dv);
            e_scale.component_mul_assign(&ev);

            // Cost normalization.
            let mut col_mean = 0.0;
            for j in 0..n {
                let mut norm: f64 = 0.0;
                for i in 0..n {
                    norm = norm.max(p_s[(i, j)].abs());
                }
                col_mean += norm;
            }
            col_mean /= n as f64;
            let denom = col_mean.max(q_s.amax());
            if denom > 1e-12 {
                let gamma = 1.0 / denom;
                p_s *= gamma;
                q_s *= gamma;
                c_scale *= gamma;
            }
        }

        let mut solver = QpSolver {
            n,
            m,
            settings,
            prob,
            p_s,
            q_s,
            a_s,
            l_s: Vec64::zeros(m),
            u_s: Vec64::zeros(m),
            d_scale,
            e_scale,
            c_scale,
            rho_vec: Vec64::zeros(m),
            rho_base: settings.rho,
            chol: Cholesky::new(Mat::identity(1, 1)).expect("identity"),
        };
        solver.rescale_bounds();
        solver.set_rho(settings.rho)?;
        Ok(solver)
    }

    fn rescale_bounds(&mut self) {
        for i in 0..self.m {
            let e = self.e_scale[i];
            self.l_s[i] = if is_neg_inf(self.prob.l_vec[i]) {
                -INF_BOUND
            } else {
                e * self.prob.l_vec[i]
            };
            self.u_s[i] = if is_pos_inf(self.prob.u_vec[i]) {
                INF_BOUND
            } else {
                e * self.prob.u_vec[i]
            };
        }
    }

    /// Replace the bound vectors, keeping scaling and factorization.
    pub fn update_bounds(&mut self, l_vec: Vec64, u_vec: Vec64) -> Result<()> {
        if l_vec.len() != self.m || u_vec.len() != self.m {
            return Err(Error::DimensionMismatch("bound update".into()));
        }
        for i in 0..self.m {
            if l_vec[i] > u_vec[i] {
                return Err(Error::InvalidArgument(format!("bounds crossed in row {i}")));
            }
        }
        // The equality/inequality pattern feeds the per-row penalty; refresh
        // the factorization only if the pattern changed.
        let mut pattern_changed = false;
        for i in 0..self.m {
            let was_eq = self.prob.l_vec[i] == self.prob.u_vec[i];
            let is_eq = l_vec[i] == u_vec[i];
            if was_eq != is_eq {
                pattern_changed = true;
            }
        }
        self.prob.l_vec = l_vec;
        self.prob.u_vec = u_vec;
        self.rescale_bounds();
        if pattern_changed {
            self.set_rho(self.rho_base)?;
        }
        Ok(())
    }

    /// Replace the linear cost term, keeping scaling and factorization.
    pub fn update_linear_cost(&mut self, q_vec: Vec64) -> Result<()> {
        if q_vec.len() != self.n {
            return Err(Error::DimensionMismatch("linear cost update".into()));
        }
        for j in 0..self.n {
            self.q_s[j] = q_vec[j] * self.d_scale[j] * self.c_scale;
        }
        self.prob.q_vec = q_vec;
        Ok(())
    }

    pub fn problem(&self) -> &QpProblem {
        &self.prob
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.rho_base = rho;
        for i in 0..self.m {
            let eq = self.l_s[i] == self.u_s[i];
            self.rho_vec[i] = if eq { (rho * 1e3).min(1e6) } else { rho };
        }
        let mut kkt = self.p_s.clone();
        for j in 0..self.n {
            kkt[(j, j)] += self.settings.sigma;
        }
        // kkt += A' diag(rho) A
        for i in 0..self.m {
            let r = self.rho_vec[i];
            for j in 0..self.n {
                let aij = self.a_s[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                for k in j..self.n {
                    kkt[(j, k)] += r * aij * self.a_s[(i, k)];
                }
            }
        }
        for j in 0..self.n {
            for k in 0..j {
                kkt[(j, k)] = kkt[(k, j)];
            }
        }
        self.chol = Cholesky::new(kkt)
            .ok_or_else(|| Error::QpFailure("KKT matrix factorization failed".into()))?;
        Ok(())
    }

    /// Unscaled residuals at (x, y) with constraint image z.
    fn residuals(&self, x: &Vec64, z: &Vec64, y: &Vec64) -> (f64, f64, f64, f64) {
        let ax = &self.prob.a_mat * x;
        let px = &self.prob.p_mat * x;
        let aty = self.prob.a_mat.transpose() * y;
        let r_prim = (&ax - z).amax();
        let r_dual = (&px + &self.prob.q_vec + &aty).amax();
        let scale_p = ax.amax().max(z.amax()).max(1e-12);
        let scale_d = px.amax().max(self.prob.q_vec.amax()).max(aty.amax()).max(1e-12);
        (r_prim, r_dual, scale_p, scale_d)
    }

    /// Run the ADMM iteration from an optional warm start `(z_star, y_star)`.
    pub fn solve(&mut self, warm: Option<(&Vec64, &Vec64)>) -> Result<QpSolution> {
        if self.rho_base != self.settings.rho {
            self.set_rho(self.settings.rho)?;
        }
        let st = self.settings;
        let n = self.n;
        let m = self.m;

        // Scaled iterates.
        let mut x = Vec64::zeros(n);
        let mut y = Vec64::zeros(m);
        if let Some((x0, y0)) = warm {
            if x0.len() != n || y0.len() != m {
                return Err(Error::DimensionMismatch("warm start".into()));
            }
            for j in 0..n {
                x[j] = x0[j] / self.d_scale[j];
            }
            for i in 0..m {
                y[i] = y0[i] * self.c_scale / self.e_scale[i];
            }
        }
        let mut z = &self.a_s * &x;
        for i in 0..m {
            z[i] = z[i].clamp(self.l_s[i], self.u_s[i]);
        }

        let mut status = QpStatus::MaxIter;
        let mut iterations = st.max_iter;
        let mut r_prim = f64::INFINITY;
        let mut r_dual = f64::INFINITY;
        let mut y_prev_check = y.clone();

        let mut x_out = Vec64::zeros(n);
        let mut y_out = Vec64::zeros(m);
        let mut z_out = Vec64::zeros(m);

        for iter in 1..=st.max_iter {
            // x-update: K x~ = sigma x - q + A'(rho z - y)
            let mut rhs = Vec64::zeros(n);
            for j in 0..n {
                rhs[j] = st.sigma * x[j] - self.q_s[j];
            }
            for i in 0..m {
                let w = self.rho_vec[i] * z[i] - y[i];
                if w == 0.0 {
                    continue;
                }
                for j in 0..n {
                    rhs[j] += self.a_s[(i, j)] * w;
                }
            }
            let x_tilde = self.chol.solve(&rhs);
            let z_tilde = &self.a_s * &x_tilde;

            for j in 0..n {
                x[j] = st.alpha * x_tilde[j] + (1.0 - st.alpha) * x[j];
            }
            for i in 0..m {
                let zb = st.alpha * z_tilde[i] + (1.0 - st.alpha) * z[i];
                let z_new = (zb + y[i] / self.rho_vec[i]).clamp(self.l_s[i], self.u_s[i]);
                y[i] += self.rho_vec[i] * (zb - z_new);
                z[i] = z_new;
            }

            if iter % st.check_interval == 0 || iter == st.max_iter {
                // Unscale for the residual check.
                for j in 0..n {
                    x_out[j] = x[j] * self.d_scale[j];
                }
                for i in 0..m {
                    y_out[i] = y[i] * self.e_scale[i] / self.c_scale;
                    z_out[i] = z[i] / self.e_scale[i];
                }
                let (rp, rd, sp, sd) = self.residuals(&x_out, &z_out, &y_out);
                r_prim = rp;
                r_dual = rd;
                if rp <= st.eps_abs + st.eps_rel * sp && rd <= st.eps_abs + st.eps_rel * sd {
                    status = QpStatus::Solved;
                    iterations = iter;
                    break;
                }

                // Primal infeasibility certificate from the dual drift.
                let mut dy = Vec64::zeros(m);
                for i in 0..m {
                    dy[i] = y_out[i] - y_prev_check[i];
                }
                y_prev_check.copy_from(&y_out);
                let dy_norm = dy.amax();
                if dy_norm > 1e-10 {
                    let aty = self.prob.a_mat.transpose() * &dy;
                    if aty.amax() <= st.eps_pinf * dy_norm {
                        let mut support = 0.0;
                        let mut certified = true;
                        for i in 0..m {
                            let pos = dy[i].max(0.0);
                            let neg = (-dy[i]).max(0.0);
                            if pos > st.eps_pinf * dy_norm && is_pos_inf(self.prob.u_vec[i]) {
                                certified = false;
                                break;
                            }
                            if neg > st.eps_pinf * dy_norm && is_neg_inf(self.prob.l_vec[i]) {
                                certified = false;
                                break;
                            }
                            if !is_pos_inf(self.prob.u_vec[i]) {
                                support += self.prob.u_vec[i] * pos;
                            }
                            if !is_neg_inf(self.prob.l_vec[i]) {
                                support -= self.prob.l_vec[i] * neg;
                            }
                        }
                        if certified && support < -st.eps_pinf * dy_norm {
                            status = QpStatus::PrimalInfeasible;
                            iterations = iter;
                            break;
                        }
                    }
                }

                // Residual-ratio penalty adaptation.
                if iter % st.adapt_interval == 0 {
                    let ratio = ((rp / sp) / (rd / sd).max(1e-16)).sqrt();
                    let rho_new = (self.rho_base * ratio).clamp(1e-6, 1e6);
                    if rho_new > 5.0 * self.rho_base || rho_new < self.rho_base / 5.0 {
                        // Rescale duals so the iterate stays consistent.
                        self.set_rho(rho_new)?;
                    }
                }
            }
        }

        for j in 0..n {
            x_out[j] = x[j] * self.d_scale[j];
        }
        for i in 0..m {
            y_out[i] = y[i] * self.e_scale[i] / self.c_scale;
        }

        if status == QpStatus::Solved && st.polish {
            if let Some((xp, yp, rp, rd)) = self.polish(&x_out, &y_out) {
                if rp.max(rd) < r_prim.max(r_dual) {
                    x_out = xp;
                    y_out = yp;
                    r_prim = rp;
                    r_dual = rd;
                }
            }
        }

        Ok(QpSolution {
            z_star: x_out,
            y_star: y_out,
            status,
            primal_residual: r_prim,
            dual_residual: r_dual,
            iterations,
        })
    }

    /// Active-set polishing: solve the KKT equality system on the rows the
    /// ADMM duals mark active, with light regularization and iterative
    /// refinement.
    fn polish(&self, _x: &Vec64, y: &Vec64) -> Option<(Vec64, Vec64, f64, f64)> {
        let n = self.n;
        let m = self.m;
        let dual_tol = 1e-8 * y.amax().max(1.0);
        let mut active: Vec<(usize, f64)> = Vec::new();
        for i in 0..m {
            let eq = self.prob.l_vec[i] == self.prob.u_vec[i];
            if eq {
                active.push((i, self.prob.u_vec[i]));
            } else if y[i] > dual_tol && !is_pos_inf(self.prob.u_vec[i]) {
                active.push((i, self.prob.u_vec[i]));
            } else if y[i] < -dual_tol && !is_neg_inf(self.prob.l_vec[i]) {
                active.push((i, self.prob.l_vec[i]));
            }
        }
        let ma = active.len();
        let dim = n + ma;
        let mut kkt = Mat::zeros(dim, dim);
        let mut kkt_reg = Mat::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = self.prob.p_mat[(i, j)];
                kkt_reg[(i, j)] = self.prob.p_mat[(i, j)];
            }
            kkt_reg[(i, i)] += 1e-9;
        }
        for (r, &(row, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.prob.a_mat[(row, j)];
                kkt[(j, n + r)] = self.prob.a_mat[(row, j)];
                kkt_reg[(n + r, j)] = self.prob.a_mat[(row, j)];
                kkt_reg[(j, n + r)] = self.prob.a_mat[(row, j)];
            }
            kkt_reg[(n + r, n + r)] = -1e-9;
        }
        let mut rhs = Vec64::zeros(dim);
        for j in 0..n {
            rhs[j] = -self.prob.q_vec[j];
        }
        for (r, &(_, bound)) in active.iter().enumerate() {
            rhs[n + r] = bound;
        }
        let lu = kkt_reg.lu();
        let mut sol = lu.solve(&rhs)?;
        // Iterative refinement against the unregularized system.
        for _ in 0..3 {
            let resid = &rhs - &kkt * &sol;
            let corr = lu.solve(&resid)?;
            sol += corr;
        }
        let xp = Vec64::from_fn(n, |j, _| sol[j]);
        let mut yp = Vec64::zeros(m);
        for (r, &(row, _)) in active.iter().enumerate() {
            yp[row] = sol[n + r];
        }
        // Reject sign-inconsistent multipliers on inequality rows.
        for &(row, _) in &active {
            let eq = self.prob.l_vec[row] == self.prob.u_vec[row];
            if eq {
                continue;
            }
            let at_upper = (self.prob.u_vec[row] - (&self.prob.a_mat.row(row) * &xp)[(0, 0)]).abs()
                <= (self.prob.l_vec[row] - (&self.prob.a_mat.row(row) * &xp)[(0, 0)]).abs();
            if at_upper && yp[row] < -1e-9 {
                return None;
            }
            if !at_upper && yp[row] > 1e-9 {
                return None;
            }
        }
        let az = &self.prob.a_mat * &xp;
        let mut rp: f64 = 0.0;
        for i in 0..m {
            if !is_neg_inf(self.prob.l_vec[i]) {
                rp = rp.max(self.prob.l_vec[i] - az[i]);
            }
            if !is_pos_inf(self.prob.u_vec[i]) {
                rp = rp.max(az[i] - self.prob.u_vec[i]);
            }
        }
        let rd = (&self.prob.p_mat * &xp + &self.prob.q_vec + self.prob.a_mat.transpose() * &yp)
            .amax();
        Some((xp, yp, rp.max(0.0), rd))
    }
}

/// One-shot solve.
pub fn solve(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    QpSolver::new(prob.clone(), *settings)?.solve(None)
}

/// Infinity-norm KKT residuals at a primal/dual pair.
///
/// Returns `(primal_residual, dual_residual, complementarity_gap)`. The
/// primal residual is the largest bound violation of `Az`; the dual residual
/// is the stationarity defect; the gap pairs each multiplier sign with the
/// distance to its bound (a multiplier on an infinite bound counts directly).
pub fn check_kkt(prob: &QpProblem, z: &Vec64, y: &Vec64) -> (f64, f64, f64) {
    let az = &prob.a_mat * z;
    let mut primal: f64 = 0.0;
    let mut gap: f64 = 0.0;
    for i in 0..prob.m() {
        if !is_neg_inf(prob.l_vec[i]) {
            primal = primal.max(prob.l_vec[i] - az[i]);
        }
        if !is_pos_inf(prob.u_vec[i]) {
            primal = primal.max(az[i] - prob.u_vec[i]);
        }
        let up = y[i].max(0.0);
        let lo = (-y[i]).max(0.0);
        let gap_u = if is_pos_inf(prob.u_vec[i]) { up } else { up * (prob.u_vec[i] - az[i]).abs() };
        let gap_l = if is_neg_inf(prob.l_vec[i]) { lo } else { lo * (az[i] - prob.l_vec[i]).abs() };
        gap = gap.max(gap_u).max(gap_l);
    }
    let dual = (&prob.p_mat * z + &prob.q_vec + prob.a_mat.transpose() * y).amax();
    (primal.max(0.0), dual, gap)
}

/// Objective value `0.5 z'Pz + q'z`.
pub fn objective(prob: &QpProblem, z: &Vec64) -> f64 {
    0.5 * (z.transpose() * &prob.p_mat * z)[(0, 0)] + prob.q_vec.dot(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tight() -> QpSettings {
        QpSettings { eps_abs: 1e-8, eps_rel: 1e-8, ..QpSettings::default() }
    }

    #[test]
    fn interior_minimum() {
        // minimize 0.5 z^2 subject to -1 <= z <= 1  ->  z* = 0
        let prob = QpProblem::new(
            Mat::identity(1, 1),
            Vec64::zeros(1),
            Mat::identity(1, 1),
            Vec64::from_element(1, -1.0),
            Vec64::from_element(1, 1.0),
        )
        .unwrap();
        let sol = solve(&prob, &tight()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.z_star[0].abs() < 1e-7, "z* = {}", sol.z_star[0]);
    }

    #[test]
    fn active_bound() {
        // minimize 0.5 (z-2)^2 subject to z <= 1  ->  z* = 1
        let prob = QpProblem::new(
            Mat::identity(1, 1),
            Vec64::from_element(1, -2.0),
            Mat::identity(1, 1),
            Vec64::from_element(1, -INF_BOUND),
            Vec64::from_element(1, 1.0),
        )
        .unwrap();
        let sol = solve(&prob, &tight()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z_star[0] - 1.0).abs() < 1e-6, "z* = {}", sol.z_star[0]);
    }

    /// Random feasible instance generator: the box around `A z0` guarantees a
    /// non-empty interior.
    fn random_instance(rng: &mut ChaCha12Rng, n: usize, m: usize) -> QpProblem {
        let mker = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = &mker * mker.transpose() + Mat::identity(n, n) * 0.1;
        let q = Vec64::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a = Mat::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let z0 = Vec64::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let az0 = &a * &z0;
        let l = Vec64::from_fn(m, |i, _| az0[i] - rng.gen_range(0.3..1.5));
        let u = Vec64::from_fn(m, |i, _| az0[i] + rng.gen_range(0.3..1.5));
        QpProblem::new(p, q, a, l, u).unwrap()
    }

    /// Projected gradient oracle: projection onto `{z : l <= Az <= u}` by
    /// Dykstra's alternating projections onto the row half-spaces.
    fn project_polyhedron(a: &Mat, l: &Vec64, u: &Vec64, v: &Vec64, sweeps: usize) -> Vec64 {
        let m = a.nrows();
        let rows: Vec<Vec64> = (0..m).map(|i| a.row(i).transpose()).collect();
        let norms2: Vec<f64> = rows.iter().map(|r| r.dot(r)).collect();
        let mut z = v.clone();
        // One correction term per half-space (2 per row).
        let mut corr = vec![Vec64::zeros(v.len()); 2 * m];
        for _ in 0..sweeps {
            for i in 0..m {
                if norms2[i] < 1e-14 {
                    continue;
                }
                // Upper half-space a_i z <= u_i.
                let w = &z + &corr[2 * i];
                let viol = rows[i].dot(&w) - u[i];
                let proj = if viol > 0.0 { &w - &rows[i] * (viol / norms2[i]) } else { w.clone() };
                corr[2 * i] = w - &proj;
                z = proj;
                // Lower half-space a_i z >= l_i.
                let w = &z + &corr[2 * i + 1];
                let viol = l[i] - rows[i].dot(&w);
                let proj = if viol > 0.0 { &w + &rows[i] * (viol / norms2[i]) } else { w.clone() };
                corr[2 * i + 1] = w - &proj;
                z = proj;
            }
        }
        z
    }

    fn projected_gradient_oracle(prob: &QpProblem, iters: usize) -> Vec64 {
        // Step size 1/L with L the largest eigenvalue bound of P.
        let lip = prob
            .p_mat
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            .max(1e-6);
        let step = 1.0 / lip;
        let mut z = project_polyhedron(&prob.a_mat, &prob.l_vec, &prob.u_vec, &Vec64::zeros(prob.n()), 400);
        for _ in 0..iters {
            let grad = &prob.p_mat * &z + &prob.q_vec;
            let cand = &z - &grad * step;
            z = project_polyhedron(&prob.a_mat, &prob.l_vec, &prob.u_vec, &cand, 60);
        }
        z
    }

    #[test]
    fn agrees_with_projected_gradient_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..5 {
            let prob = random_instance(&mut rng, 6, 10);
            let sol = solve(&prob, &tight()).unwrap();
            assert_eq!(sol.status, QpStatus::Solved);
            let z_ref = projected_gradient_oracle(&prob, 4000);
            let f_sol = objective(&prob, &sol.z_star);
            let f_ref = objective(&prob, &z_ref);
            assert!(
                (f_sol - f_ref).abs() < 1e-4,
                "objective mismatch: solver {f_sol} vs oracle {f_ref}"
            );
            // The solver should never be worse than the oracle beyond tolerance.
            assert!(f_sol <= f_ref + 1e-4);
        }
    }

    #[test]
    fn kkt_residuals_small_at_solution() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let prob = random_instance(&mut rng, 5, 8);
        let sol = solve(&prob, &tight()).unwrap();
        let (rp, rd, _gap) = check_kkt(&prob, &sol.z_star, &sol.y_star);
        assert!(rp <= 1e-6, "primal residual {rp}");
        assert!(rd <= 1e-6, "dual residual {rd}");
        assert!(sol.primal_residual <= prob_settings_eps(), "reported {}", sol.primal_residual);
        assert!(sol.dual_residual <= prob_settings_eps(), "reported {}", sol.dual_residual);
    }

    fn prob_settings_eps() -> f64 {
        // Absolute bound honored on O(1)-scaled instances.
        1e-6
    }

    #[test]
    fn kkt_detects_perturbation() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let prob = random_instance(&mut rng, 5, 8);
        let sol = solve(&prob, &tight()).unwrap();
        let mut z = sol.z_star.clone();
        z[0] += 0.1;
        let (rp, rd, _) = check_kkt(&prob, &z, &sol.y_star);
        assert!(rp > 1e-3 || rd > 1e-3, "perturbation went unnoticed: {rp} {rd}");
    }

    #[test]
    fn complementarity_zero_for_inactive_rows() {
        // Feasible z strictly inside with zero duals: gap must be exactly 0.
        let prob = QpProblem::new(
            Mat::identity(2, 2),
            Vec64::zeros(2),
            Mat::identity(2, 2),
            Vec64::from_element(2, -1.0),
            Vec64::from_element(2, 1.0),
        )
        .unwrap();
        let (_, _, gap) = check_kkt(&prob, &Vec64::from_element(2, 0.3), &Vec64::zeros(2));
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn repeated_solves_bit_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let prob = random_instance(&mut rng, 6, 9);
        let s1 = solve(&prob, &QpSettings::default()).unwrap();
        let s2 = solve(&prob, &QpSettings::default()).unwrap();
        assert_eq!(s1.z_star, s2.z_star);
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn objective_beats_random_feasible_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..5 {
            let prob = random_instance(&mut rng, 4, 6);
            let sol = solve(&prob, &tight()).unwrap();
            let f_sol = objective(&prob, &sol.z_star);
            let mut found = 0;
            let mut attempts = 0;
            while found < 100 && attempts < 200_000 {
                attempts += 1;
                let z = Vec64::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
                let az = &prob.a_mat * &z;
                let feasible =
                    (0..prob.m()).all(|i| az[i] >= prob.l_vec[i] && az[i] <= prob.u_vec[i]);
                if feasible {
                    found += 1;
                    assert!(objective(&prob, &z) >= f_sol - 1e-6);
                }
            }
            assert!(found >= 20, "rejection sampling starved: {found}");
        }
    }

    #[test]
    fn scaling_invariance_of_argmin() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let prob = random_instance(&mut rng, 5, 7);
        let mut scaled = prob.clone();
        scaled.p_mat *= 37.0;
        scaled.q_vec *= 37.0;
        let s1 = solve(&prob, &tight()).unwrap();
        let s2 = solve(&scaled, &tight()).unwrap();
        assert!((s1.z_star - s2.z_star).amax() < 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // z <= -1 and z >= 1 simultaneously.
        let prob = QpProblem::new(
            Mat::identity(1, 1),
            Vec64::zeros(1),
            Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            Vec64::from_column_slice(&[-INF_BOUND, 1.0]),
            Vec64::from_column_slice(&[-1.0, INF_BOUND]),
        )
        .unwrap();
        let sol = solve(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn warm_start_converges_faster() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let prob = random_instance(&mut rng, 6, 9);
        let mut solver = QpSolver::new(prob, QpSettings::default()).unwrap();
        let cold = solver.solve(None).unwrap();
        let warm = solver.solve(Some((&cold.z_star, &cold.y_star))).unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!(warm.iterations <= cold.iterations);
    }
}
