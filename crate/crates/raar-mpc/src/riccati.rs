//! Discrete-time Riccati and Lyapunov equation solvers.

use crate::error::{Error, Result};
use crate::Mat;

/// Solve the DARE `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q` by fixed-point
/// iteration from `P = Q`.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat, tol: f64, max_iter: usize) -> Result<Mat> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..max_iter {
        let btp = &bt * &p;
        let gain_inner = (r + &btp * b)
            .try_inverse()
            .ok_or_else(|| Error::Riccati("R + B'PB singular".into()))?;
        let p_next = &at * &p * a - &at * &p * b * gain_inner * &btp * a + q;
        let diff = (&p_next - &p).amax();
        p = p_next;
        if diff < tol {
            return Ok(p);
        }
    }
    Err(Error::Riccati(format!("DARE did not converge in {max_iter} iterations")))
}

/// Infinity-norm residual of the DARE at `p`.
pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> f64 {
    let at = a.transpose();
    let bt = b.transpose();
    let inner = match (r + &bt * p * b).try_inverse() {
        Some(m) => m,
        None => return f64::INFINITY,
    };
    let rhs = &at * p * a - &at * p * b * inner * &bt * p * a + q;
    (p - rhs).amax()
}

/// LQR gain for `u = K x` with the closed loop `A + BK`:
/// `K = -(R + B'PB)^-1 B'PA`. Returns `(K, P)`.
pub fn lqr_gain(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<(Mat, Mat)> {
    let p = solve_dare(a, b, q, r, 1e-13, 100_000)?;
    let bt = b.transpose();
    let inner = (r + &bt * &p * b)
        .try_inverse()
        .ok_or_else(|| Error::Riccati("R + B'PB singular".into()))?;
    let k = -(inner * &bt * &p * a);
    Ok((k, p))
}

/// Solve the discrete Lyapunov equation `A' P A - P = -Q` for stable `A`
/// via the doubling iteration `P <- P + M'PM, M <- M*M`.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch("Lyapunov equation dimensions".into()));
    }
    let mut p = q.clone();
    let mut m = a.clone();
    for _ in 0..128 {
        let step = m.transpose() * &p * &m;
        let increment = step.amax();
        p += step;
        if increment < 1e-14 * p.amax().max(1.0) {
            return Ok(p);
        }
        m = &m * &m;
        if m.amax() > 1e12 {
            return Err(Error::Riccati("Lyapunov iteration diverged (A unstable?)".into()));
        }
    }
    Err(Error::Riccati("Lyapunov iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_dare_closed_form() {
        // a = 0.5, b = 1, q = r = 1: p^2 - 0.25 p - 1 = 0.
        let a = Mat::from_element(1, 1, 0.5);
        let b = Mat::from_element(1, 1, 1.0);
        let q = Mat::identity(1, 1);
        let r = Mat::identity(1, 1);
        let p = solve_dare(&a, &b, &q, &r, 1e-14, 10_000).unwrap();
        let p_closed = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert!((p[(0, 0)] - p_closed).abs() < 1e-10);
        let (k, _) = lqr_gain(&a, &b, &q, &r).unwrap();
        let k_closed = -p_closed * 0.5 / (1.0 + p_closed);
        assert!((k[(0, 0)] - k_closed).abs() < 1e-10);
        // Closed loop is stable.
        assert!((0.5 + k[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn dare_residual_small_on_benchmark_matrices() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
        let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
        let q = Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]);
        let r = Mat::identity(1, 1);
        let p = solve_dare(&a, &b, &q, &r, 1e-13, 100_000).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &p) < 1e-8);
    }

    #[test]
    fn lyapunov_solution_satisfies_equation() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.8]);
        let q = Mat::identity(2, 2);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        let res = (a.transpose() * &p * &a - &p + &q).amax();
        assert!(res < 1e-10, "residual {res}");
        // P is symmetric positive definite.
        assert!((p.clone() - p.transpose()).amax() < 1e-10);
        assert!(p[(0, 0)] > 0.0 && p.determinant() > 0.0);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = Mat::from_element(1, 1, 1.2);
        assert!(solve_discrete_lyapunov(&a, &Mat::identity(1, 1)).is_err());
    }
}
