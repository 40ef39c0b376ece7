//! Dense two-phase simplex for small support-function LPs:
//! maximize `c'x` subject to `Gx <= h` with `x` free.
//!
//! Used by the terminal-set machinery, where each redundancy test is a
//! maximization of a linear form over the current polytope. Bland's rule is
//! used throughout, so degenerate rows (zero bounds) cannot cycle.

use crate::error::{Error, Result};
use crate::{Mat, Vec64};

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Vec64 },
    Unbounded,
    Infeasible,
}

const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

struct Tableau {
    rows: usize,
    cols: usize, // structural columns (without rhs)
    t: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    allowed: Vec<bool>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.t[r][c];
        for j in 0..self.cols {
            self.t[r][j] /= piv;
        }
        self.rhs[r] /= piv;
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i][c];
            if f == 0.0 {
                continue;
            }
            for j in 0..self.cols {
                self.t[i][j] -= f * self.t[r][j];
            }
            self.rhs[i] -= f * self.rhs[r];
        }
        self.basis[r] = c;
    }

    /// Minimize `cost . vars` from the current basis. Returns `None` when the
    /// problem is unbounded below.
    fn run(&mut self, cost: &[f64]) -> Option<f64> {
        // Reduced-cost row for the current basis.
        let mut red = cost.to_vec();
        let mut obj = 0.0;
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..self.cols {
                red[j] -= cb * self.t[r][j];
            }
            obj -= cb * self.rhs[r];
        }
        loop {
            // Bland: lowest-index allowed column with negative reduced cost.
            let mut entering = None;
            for j in 0..self.cols {
                if self.allowed[j] && red[j] < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                return Some(-obj);
            };
            // Ratio test, Bland tie-break on basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                if self.t[r][c] > PIVOT_TOL {
                    let ratio = self.rhs[r] / self.t[r][c];
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - PIVOT_TOL
                                || ((ratio - lratio).abs() <= PIVOT_TOL
                                    && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return None;
            };
            self.pivot(r, c);
            let f = red[c];
            for j in 0..self.cols {
                red[j] -= f * self.t[r][j];
            }
            obj -= f * self.rhs[r];
        }
    }
}

/// Maximize `c'x` subject to `Gx <= h`, `x` free.
pub fn maximize(c: &Vec64, g: &Mat, h: &Vec64) -> Result<LpOutcome> {
    let n = c.len();
    let m = g.nrows();
    if g.ncols() != n || h.len() != m || m == 0 || n == 0 {
        return Err(Error::DimensionMismatch("LP dimensions".into()));
    }

    // Standard form: x = xp - xm, slack s, artificials on negated rows.
    // Columns: [xp(n) xm(n) s(m) art(...)].
    let mut neg_rows = Vec::new();
    for i in 0..m {
        if h[i] < 0.0 {
            neg_rows.push(i);
        }
    }
    let n_art = neg_rows.len();
    let cols = 2 * n + m + n_art;
    let mut t = vec![vec![0.0; cols]; m];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0usize; m];
    let mut art_idx = 0;
    for i in 0..m {
        let sgn = if h[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sgn * g[(i, j)];
            t[i][n + j] = -sgn * g[(i, j)];
        }
        t[i][2 * n + i] = sgn;
        rhs[i] = sgn * h[i];
        if h[i] < 0.0 {
            let a_col = 2 * n + m + art_idx;
            t[i][a_col] = 1.0;
            basis[i] = a_col;
            art_idx += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }

    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        rhs,
        basis,
        allowed: vec![true; cols],
    };

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for j in (2 * n + m)..cols {
            phase1[j] = 1.0;
        }
        let obj = tab.run(&phase1).expect("phase-1 objective is bounded below by zero");
        if obj > 1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // Pivot lingering artificials out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] >= 2 * n + m {
                if let Some(c) = (0..2 * n + m).find(|&j| tab.t[r][j].abs() > 1e-9) {
                    tab.pivot(r, c);
                }
            }
        }
        for j in (2 * n + m)..cols {
            tab.allowed[j] = false;
        }
    }

    // Phase 2: minimize -c'(xp - xm).
    let mut phase2 = vec![0.0; cols];
    for j in 0..n {
        phase2[j] = -c[j];
        phase2[n + j] = c[j];
    }
    match tab.run(&phase2) {
        None => Ok(LpOutcome::Unbounded),
        Some(neg_val) => {
            let mut x = Vec64::zeros(n);
            for r in 0..m {
                let b = tab.basis[r];
                if b < n {
                    x[b] += tab.rhs[r];
                } else if b < 2 * n {
                    x[b - n] -= tab.rhs[r];
                }
            }
            Ok(LpOutcome::Optimal { value: -neg_val, point: x })
        }
    }
}

/// Support function `max_{Gx <= h} d'x` of a polytope in direction `d`.
pub fn support(direction: &Vec64, g: &Mat, h: &Vec64) -> Result<LpOutcome> {
    maximize(direction, g, h)
}
