//! Tube-based robust MPC with adaptive constraint tightening.
//!
//! The controller optimizes a nominal trajectory under constraints tightened
//! by the current learned prediction-error set plus the adaptive safety
//! margin, while an ancillary feedback `K_e` confines the true state to a
//! tube around the nominal plan. Offline pieces: the ancillary gain and its
//! common Lyapunov certificate over the interval uncertainty set, and a
//! maximal constraint-admissible invariant terminal set.

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome};
use crate::qp::{QpProblem, QpSettings, QpSolution, QpSolver, QpStatus, INF_BOUND};
use crate::riccati;
use crate::risk_engine::LpesSupport;
use crate::system::{PolytopeConstraint, UncertainLinearSystem};
use crate::{Mat, Vec64};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// How a polytope row is tightened against the box-plus-ball uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TighteningMode {
    /// `||C_i||_1 (max_j s_k[j] + beta)`: the coarse level-set form.
    PaperL1,
    /// `sum_j |C_ij| s_k[j] + beta ||C_i||_1`: exact support function of the
    /// box Minkowski-summed with the infinity-ball. Never larger than
    /// `PaperL1`.
    ExactSupport,
}

/// Terminal constraint strategy.
///
/// `MaximalAdmissible` is the textbook invariant polytope. For plants whose
/// chance-constrained row passes through the origin it degenerates into a
/// wedge that the input-coupled dynamics cannot reach from the operating
/// region, so the boundary-anchored benchmark uses `Origin` (a terminal
/// equality, the classic special case) instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalMode {
    MaximalAdmissible,
    Origin,
    CostOnly,
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon_n: usize,
    pub q_mat: Mat,
    pub r_mat: Mat,
    pub p_mat: Mat,
    pub rho_slack: f64,
    pub tightening_mode: TighteningMode,
    pub terminal_mode: TerminalMode,
    /// Cap on the mapped input tightening as a fraction of each input bound;
    /// keeps the input rows non-empty when the learned error set spikes.
    pub input_tightening_cap_frac: f64,
    /// Error-feedback design weights; the MPC cost weights are used when
    /// unset. An aggressive cost gain can amplify disturbances into the
    /// constrained channel and blow up the tube, so the two roles are
    /// separable.
    pub ancillary_q: Option<Mat>,
    pub ancillary_r: Option<Mat>,
}

impl MpcConfig {
    pub fn ancillary_weights(&self) -> (&Mat, &Mat) {
        (
            self.ancillary_q.as_ref().unwrap_or(&self.q_mat),
            self.ancillary_r.as_ref().unwrap_or(&self.r_mat),
        )
    }
}

impl MpcConfig {
    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<()> {
        if self.horizon_n == 0 {
            return Err(Error::config("mpc.horizon_n", "horizon must be >= 1"));
        }
        check_symmetric(&self.q_mat, n_x, "mpc.q_mat")?;
        check_symmetric(&self.r_mat, n_u, "mpc.r_mat")?;
        check_symmetric(&self.p_mat, n_x, "mpc.p_mat")?;
        if min_eig(&self.q_mat) < -1e-9 {
            return Err(Error::config("mpc.q_mat", "Q must be positive semi-definite"));
        }
        if min_eig(&self.r_mat) <= 1e-12 {
            return Err(Error::config("mpc.r_mat", "R must be positive definite"));
        }
        if min_eig(&self.p_mat) <= 1e-12 {
            return Err(Error::config("mpc.p_mat", "P must be positive definite"));
        }
        let tr_q = self.q_mat.trace();
        if self.rho_slack < 1e4 * tr_q {
            return Err(Error::config(
                "mpc.rho_slack",
                format!("slack penalty must be >= 1e4 * trace(Q) = {}", 1e4 * tr_q),
            ));
        }
        if !(0.0..=1.0).contains(&self.input_tightening_cap_frac) {
            return Err(Error::config(
                "mpc.input_tightening_cap_frac",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

fn check_symmetric(m: &Mat, dim: usize, field: &str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::config(
            field,
            format!("expected {dim}x{dim}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    if (m - m.transpose()).amax() > 1e-8 {
        return Err(Error::config(field, "matrix must be symmetric"));
    }
    Ok(())
}

fn min_eig(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn max_eig(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Error-feedback gain with a common Lyapunov certificate over the interval
/// uncertainty set.
#[derive(Debug, Clone)]
pub struct AncillaryDesign {
    pub k_e: Mat,
    pub p_e: Mat,
    pub alpha_e: f64,
}

// Beyond 2^VERTEX_CAP vertices the certificate is checked on sampled extreme
// realizations instead of the full enumeration.
const VERTEX_CAP: u32 = 12;
const VERTEX_SAMPLES: usize = 1000;
const LYAP_EIG_TOL: f64 = 1e-8;

fn uncertainty_vertices(sys: &UncertainLinearSystem) -> Vec<(Mat, Mat)> {
    let n_x = sys.n_x();
    let n_u = sys.n_u();
    let mut entries = Vec::new();
    for i in 0..n_x {
        for j in 0..n_x {
            if sys.a_half_width(i, j) > 0.0 {
                entries.push((true, i, j));
            }
        }
        for j in 0..n_u {
            if sys.b_half_width(i, j) > 0.0 {
                entries.push((false, i, j));
            }
        }
    }
    let build = |signs: &dyn Fn(usize) -> f64| {
        let mut a = sys.a_nom().clone();
        let mut b = sys.b_nom().clone();
        for (idx, &(in_a, i, j)) in entries.iter().enumerate() {
            if in_a {
                a[(i, j)] += signs(idx) * sys.a_half_width(i, j);
            } else {
                b[(i, j)] += signs(idx) * sys.b_half_width(i, j);
            }
        }
        (a, b)
    };
    if entries.is_empty() {
        return vec![(sys.a_nom().clone(), sys.b_nom().clone())];
    }
    if entries.len() as u32 <= VERTEX_CAP {
        let count = 1usize << entries.len();
        (0..count)
            .map(|mask| build(&|idx| if mask >> idx & 1 == 1 { 1.0 } else { -1.0 }))
            .collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_CE27);
        (0..VERTEX_SAMPLES)
            .map(|_| {
                let signs: Vec<f64> = (0..entries.len())
                    .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                build(&|idx| signs[idx])
            })
            .collect()
    }
}

/// Largest Lyapunov-test eigenvalue over the vertex set at decay rate `alpha`.
fn lyapunov_test(vertices: &[(Mat, Mat)], k_e: &Mat, p_e: &Mat, alpha: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (a_v, b_v) in vertices {
        let m = a_v + b_v * k_e;
        let test = m.transpose() * p_e * &m - p_e + p_e * alpha;
        worst = worst.max(max_eig(&test));
    }
    worst
}

/// Design the ancillary feedback: Riccati gain on the nominal pair, Lyapunov
/// matrix from the nominal closed loop, and the largest certified decay rate
/// over the uncertainty vertices (bisection, 16 iterations).
pub fn design_ancillary(sys: &UncertainLinearSystem, cfg: &MpcConfig) -> Result<AncillaryDesign> {
    let (q_e, r_e) = cfg.ancillary_weights();
    let (k_e, _p_dare) = riccati::lqr_gain(sys.a_nom(), sys.b_nom(), q_e, r_e)?;
    let a_cl = sys.a_nom() + sys.b_nom() * &k_e;
    let q_lyap = q_e + k_e.transpose() * r_e * &k_e;
    let q_lyap = (&q_lyap + q_lyap.transpose()) * 0.5;
    let p_e = riccati::solve_discrete_lyapunov(&a_cl, &q_lyap)?;
    let p_e = (&p_e + p_e.transpose()) * 0.5;

    let vertices = uncertainty_vertices(sys);
    let mut lo = 1e-4;
    if lyapunov_test(&vertices, &k_e, &p_e, lo) > LYAP_EIG_TOL {
        return Err(Error::LyapunovCertificate);
    }
    let mut hi = 1.0 - 1e-9;
    if lyapunov_test(&vertices, &k_e, &p_e, hi) <= LYAP_EIG_TOL {
        lo = hi;
    } else {
        for _ in 0..16 {
            let mid = 0.5 * (lo + hi);
            if lyapunov_test(&vertices, &k_e, &p_e, mid) <= LYAP_EIG_TOL {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(AncillaryDesign { k_e, p_e, alpha_e: lo })
}

/// Terminal cost, terminal gain and the invariant terminal polytope.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub p_f: Mat,
    pub k_f: Mat,
    pub x_f: PolytopeConstraint,
}

/// Tightening of one polytope row against the step-`k` uncertainty set
/// `box(s_k) (+) beta * infinity-ball`.
pub fn tightening_amount(row: &Vec64, s_k: &Vec64, beta: f64, mode: TighteningMode) -> Result<f64> {
    if row.len() != s_k.len() {
        return Err(Error::DimensionMismatch("tightening row vs support".into()));
    }
    if beta < 0.0 || s_k.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "support and margin must be non-negative".into(),
        ));
    }
    let l1: f64 = row.iter().map(|v| v.abs()).sum();
    Ok(match mode {
        TighteningMode::PaperL1 => {
            let s_max = s_k.iter().cloned().fold(0.0, f64::max);
            l1 * (s_max + beta)
        }
        TighteningMode::ExactSupport => {
            let box_part: f64 = row.iter().zip(s_k.iter()).map(|(c, s)| c.abs() * s).sum();
            box_part + beta * l1
        }
    })
}

/// Build the terminal ingredients for the configured [`TerminalMode`].
///
/// In `MaximalAdmissible` mode, state rows whose tightened bound would be
/// negative are clamped at zero so the origin (the nominal attractor) stays
/// admissible; without the clamp a boundary-anchored constraint row would
/// leave no invariant set at all.
pub fn design_terminal(
    sys: &UncertainLinearSystem,
    cfg: &MpcConfig,
    anc: &AncillaryDesign,
    x_con: &PolytopeConstraint,
    u_con: &PolytopeConstraint,
    beta_init: f64,
) -> Result<TerminalIngredients> {
    // The terminal gain shares the ancillary design; the terminal cost
    // comes from the MPC weights.
    let (q_e, r_e) = cfg.ancillary_weights();
    let (k_f, _) = riccati::lqr_gain(sys.a_nom(), sys.b_nom(), q_e, r_e)?;
    let (_, p_f) = riccati::lqr_gain(sys.a_nom(), sys.b_nom(), &cfg.q_mat, &cfg.r_mat)?;
    let n_x = sys.n_x();
    match cfg.terminal_mode {
        TerminalMode::Origin => {
            // Terminal equality z_N = 0 as a zero-bound polytope. Invariant
            // (the origin is a fixed point) and admissible for any
            // origin-feasible constraint set.
            let mut c = Mat::zeros(2 * n_x, n_x);
            for i in 0..n_x {
                c[(i, i)] = 1.0;
                c[(n_x + i, i)] = -1.0;
            }
            let x_f = PolytopeConstraint::new(c, Vec64::zeros(2 * n_x))?;
            return Ok(TerminalIngredients { p_f, k_f, x_f });
        }
        TerminalMode::CostOnly => {
            // No terminal restriction: a single vacuous row.
            let x_f = PolytopeConstraint::new(Mat::zeros(1, n_x), Vec64::from_element(1, 1.0))?;
            return Ok(TerminalIngredients { p_f, k_f, x_f });
        }
        TerminalMode::MaximalAdmissible => {}
    }
    let a_cl = sys.a_nom() + sys.b_nom() * &k_f;
    let zero_s = Vec64::zeros(sys.n_x());

    // Base rows: tightened state rows plus input rows mapped through K_f.
    let mut base_rows: Vec<Vec64> = Vec::new();
    let mut base_bounds: Vec<f64> = Vec::new();
    for i in 0..x_con.n_rows() {
        let row = x_con.row(i);
        let tight = tightening_amount(&row, &zero_s, beta_init, cfg.tightening_mode)?;
        base_rows.push(row);
        base_bounds.push((x_con.c_vec()[i] - tight).max(0.0));
    }
    for j in 0..u_con.n_rows() {
        let mapped = (u_con.c_mat().row(j) * &k_f).transpose();
        let tight = tightening_amount(&mapped, &zero_s, beta_init, TighteningMode::ExactSupport)?;
        let bound = u_con.c_vec()[j] - tight;
        if bound <= 0.0 {
            return Err(Error::TerminalSet(format!(
                "input tightening {tight} exceeds input bound {} in row {j}",
                u_con.c_vec()[j]
            )));
        }
        base_rows.push(mapped);
        base_bounds.push(bound);
    }

    let mut rows = base_rows.clone();
    let mut bounds = base_bounds.clone();
    let mut a_pow = a_cl.clone();
    for _iter in 0..50 {
        let g = rows_to_mat(&rows, sys.n_x());
        let h = Vec64::from_vec(bounds.clone());
        let mut all_redundant = true;
        let mut new_rows = Vec::new();
        for (row, &bound) in base_rows.iter().zip(base_bounds.iter()) {
            let cand = (row.transpose() * &a_pow).transpose();
            match lp::support(&cand, &g, &h)? {
                LpOutcome::Optimal { value, .. } if value <= bound + 1e-9 => {}
                LpOutcome::Infeasible => {
                    return Err(Error::TerminalSet("terminal set is empty".into()));
                }
                _ => {
                    all_redundant = false;
                }
            }
            new_rows.push((cand, bound));
        }
        if all_redundant {
            let x_f =
                PolytopeConstraint::new(rows_to_mat(&rows, sys.n_x()), Vec64::from_vec(bounds))?;
            return Ok(TerminalIngredients { p_f, k_f, x_f });
        }
        for (cand, bound) in new_rows {
            rows.push(cand);
            bounds.push(bound);
        }
        a_pow = &a_pow * &a_cl;
    }
    // Iteration cap reached: keep the rows accumulated so far.
    let x_f = PolytopeConstraint::new(rows_to_mat(&rows, sys.n_x()), Vec64::from_vec(bounds))?;
    Ok(TerminalIngredients { p_f, k_f, x_f })
}

fn rows_to_mat(rows: &[Vec64], n: usize) -> Mat {
    let mut m = Mat::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..n {
            m[(i, j)] = r[j];
        }
    }
    m
}

/// Nominal plan returned by one MPC solve.
#[derive(Debug, Clone)]
pub struct MpcPlan {
    /// N+1 nominal states; obeys the nominal dynamics exactly.
    pub z_seq: Vec<Vec64>,
    /// N nominal inputs.
    pub v_seq: Vec<Vec64>,
    pub slack: f64,
    pub qp_status: QpStatus,
    /// True when this plan is the shifted previous plan after a solver
    /// failure rather than a fresh optimum.
    pub fallback: bool,
}

impl MpcPlan {
    pub fn horizon(&self) -> usize {
        self.v_seq.len()
    }

    /// Largest nominal-dynamics residual of the stored sequence.
    pub fn dynamics_residual(&self, a: &Mat, b: &Mat) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.v_seq.len() {
            let pred = a * &self.z_seq[k] + b * &self.v_seq[k];
            worst = worst.max((&self.z_seq[k + 1] - pred).amax());
        }
        worst
    }
}

/// The per-step control law `u = v_0 + K_e (x_t - z_0)`.
pub fn control_action(plan: &MpcPlan, x_t: &Vec64, k_e: &Mat) -> Vec64 {
    &plan.v_seq[0] + k_e * (x_t - &plan.z_seq[0])
}

/// Tube MPC controller with a cached, warm-started QP.
pub struct TubeMpc {
    a: Mat,
    b: Mat,
    cfg: MpcConfig,
    anc: AncillaryDesign,
    term: TerminalIngredients,
    x_con: PolytopeConstraint,
    u_con: PolytopeConstraint,
    mapped_input_rows: Vec<Vec64>,
    solver: QpSolver,
    n_var: usize,
    eps_idx: usize,
    last_dual: Option<Vec64>,
}

impl TubeMpc {
    pub fn new(
        sys: &UncertainLinearSystem,
        cfg: MpcConfig,
        anc: AncillaryDesign,
        term: TerminalIngredients,
        x_con: PolytopeConstraint,
        u_con: PolytopeConstraint,
        qp_settings: QpSettings,
    ) -> Result<Self> {
        let n_x = sys.n_x();
        let n_u = sys.n_u();
        cfg.validate(n_x, n_u)?;
        if x_con.dim() != n_x || u_con.dim() != n_u {
            return Err(Error::DimensionMismatch("constraint polytope dimensions".into()));
        }
        let n = cfg.horizon_n;
        let n_var = (n + 1) * n_x + n * n_u + 1;
        let eps_idx = n_var - 1;
        let m_x = x_con.n_rows();
        let m_u = u_con.n_rows();
        let m_f = term.x_f.n_rows();
        let m_rows = n_x + n * n_x + n * m_x + n * m_u + m_f + 1;

        // Quadratic cost: Q on z_0..z_{N-1}, terminal P on z_N, R on inputs,
        // slack enters linearly.
        let mut p = Mat::zeros(n_var, n_var);
        for k in 0..n {
            let off = k * n_x;
            for i in 0..n_x {
                for j in 0..n_x {
                    p[(off + i, off + j)] = 2.0 * cfg.q_mat[(i, j)];
                }
            }
        }
        let off_n = n * n_x;
        for i in 0..n_x {
            for j in 0..n_x {
                p[(off_n + i, off_n + j)] = 2.0 * cfg.p_mat[(i, j)];
            }
        }
        for k in 0..n {
            let off = (n + 1) * n_x + k * n_u;
            for i in 0..n_u {
                for j in 0..n_u {
                    p[(off + i, off + j)] = 2.0 * cfg.r_mat[(i, j)];
                }
            }
        }
        let mut q = Vec64::zeros(n_var);
        q[eps_idx] = cfg.rho_slack;

        let mut a_mat = Mat::zeros(m_rows, n_var);
        let mut row = 0;
        // Initial condition z_0 = x_t.
        for i in 0..n_x {
            a_mat[(row, i)] = 1.0;
            row += 1;
        }
        // Dynamics: z_{k+1} - A z_k - B v_k = 0.
        for k in 0..n {
            for i in 0..n_x {
                a_mat[(row, (k + 1) * n_x + i)] = 1.0;
                for j in 0..n_x {
                    a_mat[(row, k * n_x + j)] -= sys.a_nom()[(i, j)];
                }
                for j in 0..n_u {
                    a_mat[(row, (n + 1) * n_x + k * n_u + j)] = -sys.b_nom()[(i, j)];
                }
                row += 1;
            }
        }
        // Tightened state rows, slack-relaxed.
        for k in 0..n {
            for i in 0..m_x {
                for j in 0..n_x {
                    a_mat[(row, k * n_x + j)] = x_con.c_mat()[(i, j)];
                }
                a_mat[(row, eps_idx)] = -1.0;
                row += 1;
            }
        }
        // Tightened input rows (hard).
        for k in 0..n {
            for i in 0..m_u {
                for j in 0..n_u {
                    a_mat[(row, (n + 1) * n_x + k * n_u + j)] = u_con.c_mat()[(i, j)];
                }
                row += 1;
            }
        }
        // Terminal rows, slack-relaxed.
        for i in 0..m_f {
            for j in 0..n_x {
                a_mat[(row, n * n_x + j)] = term.x_f.c_mat()[(i, j)];
            }
            a_mat[(row, eps_idx)] = -1.0;
            row += 1;
        }
        // Slack non-negativity.
        a_mat[(row, eps_idx)] = 1.0;
        row += 1;
        debug_assert_eq!(row, m_rows);

        let mapped_input_rows: Vec<Vec64> = (0..m_u)
            .map(|j| (u_con.c_mat().row(j) * &anc.k_e).transpose())
            .collect();

        // Placeholder bounds; refreshed on every solve.
        let mut l = Vec64::from_element(m_rows, -INF_BOUND);
        let mut u = Vec64::from_element(m_rows, INF_BOUND);
        for i in 0..n_x + n * n_x {
            l[i] = 0.0;
            u[i] = 0.0;
        }
        let prob = QpProblem::new(p, q, a_mat, l, u)?;
        let solver = QpSolver::new(prob, qp_settings)?;

        Ok(TubeMpc {
            a: sys.a_nom().clone(),
            b: sys.b_nom().clone(),
            cfg,
            anc,
            term,
            x_con,
            u_con,
            mapped_input_rows,
            solver,
            n_var,
            eps_idx,
            last_dual: None,
        })
    }

    pub fn ancillary(&self) -> &AncillaryDesign {
        &self.anc
    }

    pub fn terminal(&self) -> &TerminalIngredients {
        &self.term
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Tightened upper bound for state row `i` against support `s_k`.
    pub fn tightened_state_bound(&self, i: usize, s_k: &Vec64, beta: f64) -> Result<f64> {
        let row = self.x_con.row(i);
        let tight = tightening_amount(&row, s_k, beta, self.cfg.tightening_mode)?;
        Ok(self.x_con.c_vec()[i] - tight)
    }

    fn bounds_for(&self, x_t: &Vec64, lpes: &LpesSupport, beta: f64) -> Result<(Vec64, Vec64)> {
        let n = self.cfg.horizon_n;
        let n_x = self.a.nrows();
        let m_x = self.x_con.n_rows();
        let m_u = self.u_con.n_rows();
        let m_f = self.term.x_f.n_rows();
        let m_rows = n_x + n * n_x + n * m_x + n * m_u + m_f + 1;
        let mut l = Vec64::from_element(m_rows, -INF_BOUND);
        let mut u = Vec64::from_element(m_rows, INF_BOUND);
        let mut row = 0;
        for i in 0..n_x {
            l[row] = x_t[i];
            u[row] = x_t[i];
            row += 1;
        }
        for _ in 0..n * n_x {
            l[row] = 0.0;
            u[row] = 0.0;
            row += 1;
        }
        for k in 0..n {
            let s_k = lpes.step(k);
            for i in 0..m_x {
                u[row] = self.tightened_state_bound(i, s_k, beta)?;
                row += 1;
            }
        }
        for k in 0..n {
            let s_k = lpes.step(k);
            for i in 0..m_u {
                let tight = tightening_amount(
                    &self.mapped_input_rows[i],
                    s_k,
                    beta,
                    TighteningMode::ExactSupport,
                )?;
                let cap = self.cfg.input_tightening_cap_frac * self.u_con.c_vec()[i];
                u[row] = self.u_con.c_vec()[i] - tight.min(cap);
                row += 1;
            }
        }
        for i in 0..m_f {
            u[row] = self.term.x_f.c_vec()[i];
            row += 1;
        }
        l[row] = 0.0; // slack >= 0
        Ok((l, u))
    }

    /// Shift a plan one step, appending the terminal control law.
    pub fn shift_plan(&self, plan: &MpcPlan) -> MpcPlan {
        let n = plan.horizon();
        let mut z_seq = Vec::with_capacity(n + 1);
        let mut v_seq = Vec::with_capacity(n);
        for k in 1..=n {
            z_seq.push(plan.z_seq[k].clone());
        }
        for k in 1..n {
            v_seq.push(plan.v_seq[k].clone());
        }
        let v_last = &self.term.k_f * &plan.z_seq[n];
        let z_last = &self.a * &plan.z_seq[n] + &self.b * &v_last;
        v_seq.push(v_last);
        z_seq.push(z_last);
        MpcPlan {
            z_seq,
            v_seq,
            slack: plan.slack,
            qp_status: plan.qp_status,
            fallback: true,
        }
    }

    fn warm_vector(&self, plan: &MpcPlan, x_t: &Vec64) -> Vec64 {
        let n = self.cfg.horizon_n;
        let n_x = self.a.nrows();
        let n_u = self.b.ncols();
        let shifted = self.shift_plan(plan);
        let mut w = Vec64::zeros(self.n_var);
        for k in 0..=n {
            let src = if k == 0 { x_t } else { &shifted.z_seq[k] };
            for i in 0..n_x {
                w[k * n_x + i] = src[i];
            }
        }
        for k in 0..n {
            for i in 0..n_u {
                w[(n + 1) * n_x + k * n_u + i] = shifted.v_seq[k][i];
            }
        }
        w[self.eps_idx] = plan.slack;
        w
    }

    /// Build and solve the robust QP at state `x_t` with the given adaptive
    /// tightening snapshot. On solver failure the shifted previous plan is
    /// returned and flagged.
    pub fn build_and_solve(
        &mut self,
        x_t: &Vec64,
        lpes: &LpesSupport,
        beta: f64,
        warm: Option<&MpcPlan>,
    ) -> Result<MpcPlan> {
        let n = self.cfg.horizon_n;
        let n_x = self.a.nrows();
        if lpes.horizon() != n {
            return Err(Error::DimensionMismatch(format!(
                "LPES has {} step vectors, horizon is {n}",
                lpes.horizon()
            )));
        }
        if x_t.len() != n_x {
            return Err(Error::DimensionMismatch("state dimension".into()));
        }
        let (l, u) = self.bounds_for(x_t, lpes, beta)?;
        self.solver.update_bounds(l, u)?;

        let warm_x = warm.map(|p| self.warm_vector(p, x_t));
        let sol = match (&warm_x, &self.last_dual) {
            (Some(wx), Some(wy)) => {
                let wy = wy.clone();
                self.solver.solve(Some((wx, &wy)))?
            }
            (Some(wx), None) => {
                let zero_y = Vec64::zeros(self.solver.problem().m());
                self.solver.solve(Some((wx, &zero_y)))?
            }
            _ => self.solver.solve(None)?,
        };

        if sol.status != QpStatus::Solved {
            if let Some(prev) = warm {
                let mut plan = self.shift_plan(prev);
                plan.qp_status = sol.status;
                return Ok(plan);
            }
            return Err(Error::QpFailure(format!(
                "status {:?} with no fallback plan",
                sol.status
            )));
        }
        self.last_dual = Some(sol.y_star.clone());
        Ok(self.extract_plan(&sol, x_t))
    }

    fn extract_plan(&self, sol: &QpSolution, x_t: &Vec64) -> MpcPlan {
        let n = self.cfg.horizon_n;
        let n_x = self.a.nrows();
        let n_u = self.b.ncols();
        let mut v_seq: Vec<Vec64> = (0..n)
            .map(|k| Vec64::from_fn(n_u, |i, _| sol.z_star[(n + 1) * n_x + k * n_u + i]))
            .collect();

        // Nudge inputs back inside their tightened rows when the solver's
        // tolerance left them a hair outside.
        let tol = 1e-4;
        let m_u = self.u_con.n_rows();
        let input_row_base = n_x + n * n_x + n * self.x_con.n_rows();
        for k in 0..n {
            for _pass in 0..2 {
                for i in 0..m_u {
                    let bound = self.solver.problem().u_vec[input_row_base + k * m_u + i];
                    let row = self.u_con.row(i);
                    let viol = row.dot(&v_seq[k]) - bound;
                    if viol > 0.0 && viol <= tol {
                        let norm2 = row.dot(&row);
                        if norm2 > 0.0 {
                            v_seq[k] -= row * (viol / norm2);
                        }
                    }
                }
            }
        }

        // Re-roll the nominal states so the stored plan obeys the dynamics
        // exactly.
        let mut z_seq = Vec::with_capacity(n + 1);
        z_seq.push(x_t.clone());
        for k in 0..n {
            let next = &self.a * &z_seq[k] + &self.b * &v_seq[k];
            z_seq.push(next);
        }

        let eps_raw = sol.z_star[self.eps_idx].max(0.0);
        let slack = if eps_raw <= 1e-6 { 0.0 } else { eps_raw };
        MpcPlan {
            z_seq,
            v_seq,
            slack,
            qp_status: sol.status,
            fallback: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::IntervalBox;

    fn dcdc_system(delta_rel: f64) -> UncertainLinearSystem {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
        let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
        let g = Mat::identity(2, 2);
        let support = IntervalBox::symmetric(Vec64::from_element(2, 0.14)).unwrap();
        UncertainLinearSystem::new(a, b, g, delta_rel, support).unwrap()
    }

    fn dcdc_cfg() -> MpcConfig {
        MpcConfig {
            horizon_n: 10,
            q_mat: Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]),
            r_mat: Mat::identity(1, 1),
            p_mat: riccati::solve_dare(
                &Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]),
                &Mat::from_row_slice(2, 1, &[4.798, 0.115]),
                &Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]),
                &Mat::identity(1, 1),
                1e-13,
                100_000,
            )
            .unwrap(),
            rho_slack: 1e6,
            tightening_mode: TighteningMode::ExactSupport,
            terminal_mode: TerminalMode::CostOnly,
            input_tightening_cap_frac: 0.9,
            ancillary_q: None,
            ancillary_r: None,
        }
    }

    fn dcdc_constraints() -> (PolytopeConstraint, PolytopeConstraint) {
        let x_con =
            PolytopeConstraint::new(Mat::from_row_slice(1, 2, &[1.0, 0.0]), Vec64::zeros(1))
                .unwrap();
        let u_con = PolytopeConstraint::symmetric_box(&Vec64::from_element(1, 0.2)).unwrap();
        (x_con, u_con)
    }

    #[test]
    fn ancillary_scalar_closed_form() {
        let a = Mat::from_element(1, 1, 0.5);
        let b = Mat::from_element(1, 1, 1.0);
        let g = Mat::identity(1, 1);
        let support = IntervalBox::symmetric(Vec64::from_element(1, 0.1)).unwrap();
        let sys = UncertainLinearSystem::new(a, b, g, 0.0, support).unwrap();
        let cfg = MpcConfig {
            horizon_n: 3,
            q_mat: Mat::identity(1, 1),
            r_mat: Mat::identity(1, 1),
            p_mat: Mat::identity(1, 1),
            rho_slack: 1e6,
            tightening_mode: TighteningMode::PaperL1,
            terminal_mode: TerminalMode::MaximalAdmissible,
            input_tightening_cap_frac: 0.9,
            ancillary_q: None,
            ancillary_r: None,
        };
        let anc = design_ancillary(&sys, &cfg).unwrap();
        // Scalar closed-form Riccati oracle.
        let p_closed = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        let k_closed = -p_closed * 0.5 / (1.0 + p_closed);
        assert!((anc.k_e[(0, 0)] - k_closed).abs() < 1e-9);
        let a_cl = 0.5 + k_closed;
        // Largest certifiable rate for a scalar system is 1 - a_cl^2.
        let alpha_bound = 1.0 - a_cl * a_cl;
        assert!(anc.alpha_e <= alpha_bound + 1e-4);
        assert!(
            anc.alpha_e >= alpha_bound * (1.0 - 1e-3),
            "alpha {} vs bound {}",
            anc.alpha_e,
            alpha_bound
        );
    }

    #[test]
    fn ancillary_zero_delta_matches_nominal_bisection() {
        let sys0 = dcdc_system(0.0);
        let anc0 = design_ancillary(&sys0, &dcdc_cfg()).unwrap();
        let vertices = vec![(sys0.a_nom().clone(), sys0.b_nom().clone())];
        let mut lo = 1e-4;
        let mut hi: f64 = 1.0 - 1e-9;
        if lyapunov_test(&vertices, &anc0.k_e, &anc0.p_e, hi) <= LYAP_EIG_TOL {
            lo = hi;
        } else {
            for _ in 0..16 {
                let mid = 0.5 * (lo + hi);
                if lyapunov_test(&vertices, &anc0.k_e, &anc0.p_e, mid) <= LYAP_EIG_TOL {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        assert!((anc0.alpha_e - lo).abs() < 1e-6);
    }

    #[test]
    fn ancillary_dcdc_design_succeeds() {
        let sys = dcdc_system(0.05);
        let anc = design_ancillary(&sys, &dcdc_cfg()).unwrap();
        assert!(anc.alpha_e > 0.0);
        let verts = uncertainty_vertices(&sys);
        assert_eq!(verts.len(), 64);
        assert!(lyapunov_test(&verts, &anc.k_e, &anc.p_e, anc.alpha_e) <= LYAP_EIG_TOL);
    }

    #[test]
    fn tightening_examples() {
        let row = Vec64::from_column_slice(&[1.0, 0.0]);
        let s = Vec64::from_column_slice(&[0.1, 0.3]);
        let t1 = tightening_amount(&row, &s, 0.05, TighteningMode::PaperL1).unwrap();
        assert!((t1 - 0.35).abs() < 1e-15);
        let t2 = tightening_amount(&row, &s, 0.05, TighteningMode::ExactSupport).unwrap();
        assert!((t2 - 0.15).abs() < 1e-15);
        assert!(tightening_amount(&row, &s, -0.1, TighteningMode::PaperL1).is_err());
    }

    #[test]
    fn exact_support_never_exceeds_paper_l1() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..500 {
            let n = rng.gen_range(1..5);
            let row = Vec64::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let s = Vec64::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
            let beta = rng.gen_range(0.0..0.5);
            let e = tightening_amount(&row, &s, beta, TighteningMode::ExactSupport).unwrap();
            let p = tightening_amount(&row, &s, beta, TighteningMode::PaperL1).unwrap();
            assert!(e <= p + 1e-12);
        }
    }

    #[test]
    fn exact_support_matches_monte_carlo_oracle() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..3 {
            let row = Vec64::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let s = Vec64::from_fn(2, |_, _| rng.gen_range(0.0..0.002));
            let beta = rng.gen_range(0.0..0.001);
            let exact = tightening_amount(&row, &s, beta, TighteningMode::ExactSupport).unwrap();
            let mut mc: f64 = 0.0;
            for _ in 0..2_000_000 {
                let e = Vec64::from_fn(2, |i, _| {
                    s[i] * rng.gen_range(-1.0f64..1.0) + beta * rng.gen_range(-1.0f64..1.0)
                });
                mc = mc.max(row.dot(&e));
            }
            assert!(mc <= exact + 1e-12, "sampled support exceeded exact value");
            assert!(exact - mc < 1e-3, "exact {exact} vs sampled {mc}");
        }
    }

    #[test]
    fn tightened_bound_monotone_in_margins() {
        let row = Vec64::from_column_slice(&[0.7, -1.3]);
        let s = Vec64::from_column_slice(&[0.2, 0.1]);
        for mode in [TighteningMode::PaperL1, TighteningMode::ExactSupport] {
            let base = tightening_amount(&row, &s, 0.05, mode).unwrap();
            let mut s_bigger = s.clone();
            s_bigger[1] += 0.07;
            assert!(tightening_amount(&row, &s_bigger, 0.05, mode).unwrap() >= base);
            assert!(tightening_amount(&row, &s, 0.09, mode).unwrap() >= base);
        }
    }

    fn build_controller(sys: &UncertainLinearSystem, beta0: f64) -> TubeMpc {
        let cfg = dcdc_cfg();
        let (x_con, u_con) = dcdc_constraints();
        let anc = design_ancillary(sys, &cfg).unwrap();
        let term = design_terminal(sys, &cfg, &anc, &x_con, &u_con, beta0).unwrap();
        TubeMpc::new(sys, cfg, anc, term, x_con, u_con, QpSettings::default()).unwrap()
    }

    #[test]
    fn terminal_set_is_invariant_and_admissible() {
        let sys = dcdc_system(0.05);
        let cfg = MpcConfig { terminal_mode: TerminalMode::MaximalAdmissible, ..dcdc_cfg() };
        let (x_con, u_con) = dcdc_constraints();
        let anc = design_ancillary(&sys, &cfg).unwrap();
        let term = design_terminal(&sys, &cfg, &anc, &x_con, &u_con, 0.05).unwrap();
        let a_cl = sys.a_nom() + sys.b_nom() * &term.k_f;
        for i in 0..term.x_f.n_rows() {
            let dir = (term.x_f.c_mat().row(i) * &a_cl).transpose();
            match lp::support(&dir, term.x_f.c_mat(), term.x_f.c_vec()).unwrap() {
                LpOutcome::Optimal { value, .. } => {
                    assert!(value <= term.x_f.c_vec()[i] + 1e-8, "row {i}: {value}");
                }
                other => panic!("terminal support LP failed: {other:?}"),
            }
        }
        for i in 0..x_con.n_rows() {
            let dir = x_con.row(i);
            match lp::support(&dir, term.x_f.c_mat(), term.x_f.c_vec()).unwrap() {
                LpOutcome::Optimal { value, .. } => {
                    assert!(value <= x_con.c_vec()[i] + 1e-8);
                }
                other => panic!("state support LP failed: {other:?}"),
            }
        }
    }

    #[test]
    fn origin_plan_is_zero() {
        let sys = dcdc_system(0.0);
        let mut mpc = build_controller(&sys, 0.0);
        let lpes = LpesSupport::zeros(10, 2);
        let plan = mpc.build_and_solve(&Vec64::zeros(2), &lpes, 0.0, None).unwrap();
        assert_eq!(plan.slack, 0.0);
        for z in &plan.z_seq {
            assert!(z.amax() < 1e-6);
        }
        for v in &plan.v_seq {
            assert!(v.amax() < 1e-6);
        }
    }

    #[test]
    fn interior_state_no_slack() {
        let sys = dcdc_system(0.05);
        let mut mpc = build_controller(&sys, 0.05);
        let lpes = LpesSupport::zeros(10, 2);
        let x = Vec64::from_column_slice(&[-1.0, 0.0]);
        let plan = mpc.build_and_solve(&x, &lpes, 0.05, None).unwrap();
        assert_eq!(plan.qp_status, QpStatus::Solved);
        assert_eq!(plan.slack, 0.0);
        assert!(plan.dynamics_residual(sys.a_nom(), sys.b_nom()) <= 1e-8);
        for v in &plan.v_seq {
            assert!(v[0].abs() <= 0.2 + 1e-9);
        }
    }

    #[test]
    fn one_step_scalar_matches_kkt_oracle() {
        // Scalar system, N = 1, interior optimum:
        // min q x^2 + r v^2 + p (a x + b v)^2 => v = -p b a x / (r + p b^2).
        let a = Mat::from_element(1, 1, 0.8);
        let b = Mat::from_element(1, 1, 1.0);
        let g = Mat::identity(1, 1);
        let support = IntervalBox::symmetric(Vec64::from_element(1, 0.1)).unwrap();
        let sys = UncertainLinearSystem::new(a, b, g, 0.0, support).unwrap();
        let p_f = riccati::solve_dare(
            &Mat::from_element(1, 1, 0.8),
            &Mat::from_element(1, 1, 1.0),
            &Mat::identity(1, 1),
            &Mat::identity(1, 1),
            1e-13,
            10_000,
        )
        .unwrap();
        let cfg = MpcConfig {
            horizon_n: 1,
            q_mat: Mat::identity(1, 1),
            r_mat: Mat::identity(1, 1),
            p_mat: p_f.clone(),
            rho_slack: 1e6,
            tightening_mode: TighteningMode::PaperL1,
            terminal_mode: TerminalMode::MaximalAdmissible,
            input_tightening_cap_frac: 0.9,
            ancillary_q: None,
            ancillary_r: None,
        };
        let x_con = PolytopeConstraint::symmetric_box(&Vec64::from_element(1, 10.0)).unwrap();
        let u_con = PolytopeConstraint::symmetric_box(&Vec64::from_element(1, 10.0)).unwrap();
        let anc = design_ancillary(&sys, &cfg).unwrap();
        let term = design_terminal(&sys, &cfg, &anc, &x_con, &u_con, 0.0).unwrap();
        let mut mpc = TubeMpc::new(
            &sys,
            cfg,
            anc,
            term,
            x_con,
            u_con,
            QpSettings { eps_abs: 1e-9, eps_rel: 1e-9, ..Default::default() },
        )
        .unwrap();
        let lpes = LpesSupport::zeros(1, 1);
        let x = Vec64::from_element(1, 0.5);
        let plan = mpc.build_and_solve(&x, &lpes, 0.0, None).unwrap();
        let p = p_f[(0, 0)];
        let v_expected = -p * 0.8 * 0.5 / (1.0 + p);
        assert!(
            (plan.v_seq[0][0] - v_expected).abs() < 1e-6,
            "v = {}, expected {v_expected}",
            plan.v_seq[0][0]
        );
    }

    #[test]
    fn control_action_identity_and_fallback() {
        let sys = dcdc_system(0.05);
        let mut mpc = build_controller(&sys, 0.05);
        let lpes = LpesSupport::zeros(10, 2);
        let x = Vec64::from_column_slice(&[-0.8, 0.1]);
        let plan = mpc.build_and_solve(&x, &lpes, 0.05, None).unwrap();
        // z_0 = x_t exactly (states re-rolled from x_t), so the correction
        // vanishes.
        let u = control_action(&plan, &x, &mpc.ancillary().k_e);
        assert!((u[0] - plan.v_seq[0][0]).abs() < 1e-12);

        let shifted = mpc.shift_plan(&plan);
        assert!(shifted.fallback);
        let e0 = &x - &shifted.z_seq[0];
        let u_fb = control_action(&shifted, &x, &mpc.ancillary().k_e);
        let expected = &shifted.v_seq[0] + &mpc.ancillary().k_e * e0;
        assert!((u_fb - expected).amax() < 1e-12);
        assert!(shifted.dynamics_residual(sys.a_nom(), sys.b_nom()) <= 1e-8);
    }

    #[test]
    fn infeasible_start_uses_slack() {
        let sys = dcdc_system(0.05);
        let mut mpc = build_controller(&sys, 0.05);
        let lpes = LpesSupport::zeros(10, 2);
        // x beyond the chance boundary forces a positive slack but stays
        // solvable.
        let x = Vec64::from_column_slice(&[0.3, 0.0]);
        let plan = mpc.build_and_solve(&x, &lpes, 0.05, None).unwrap();
        assert_eq!(plan.qp_status, QpStatus::Solved);
        assert!(plan.slack > 0.0, "expected positive slack, got {}", plan.slack);
    }
}
