//! Exact Gaussian-process regression with an ARD squared-exponential kernel.
//!
//! Fit factorizes `K + sigma_n^2 I` once (Cholesky with escalating jitter);
//! prediction uses triangular solves; hyperparameters are optimized by
//! gradient ascent on the log marginal likelihood in log-space with random
//! restarts. Features are z-scored per dimension inside fit/predict so the
//! ARD length-scale priors are scale-free.

use crate::error::{Error, Result};
use crate::{Mat, Vec64};
use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// Signal variance sigma_f^2.
    pub signal_var: f64,
    /// ARD length-scales, one per (standardized) feature dimension.
    pub length_scales: Vec64,
    /// Noise variance sigma_n^2.
    pub noise_var: f64,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.signal_var <= 0.0 || self.noise_var <= 0.0 {
            return Err(Error::InvalidArgument("GP variances must be positive".into()));
        }
        if self.length_scales.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidArgument("GP length-scales must be positive".into()));
        }
        Ok(())
    }

    pub fn defaults(dim: usize) -> Self {
        GpHyperparams {
            signal_var: 1.0,
            length_scales: Vec64::from_element(dim, 1.0),
            noise_var: 1e-2,
        }
    }
}

/// ARD squared-exponential kernel on raw vectors:
/// `sigma_f^2 exp(-0.5 sum_d ((a_d - b_d)/l_d)^2)`.
pub fn kernel(a: &Vec64, b: &Vec64, hyper: &GpHyperparams) -> f64 {
    debug_assert_eq!(a.len(), hyper.length_scales.len());
    let mut s = 0.0;
    for d in 0..a.len() {
        let r = (a[d] - b[d]) / hyper.length_scales[d];
        s += r * r;
    }
    hyper.signal_var * (-0.5 * s).exp()
}

/// Fitted GP posterior.
#[derive(Debug, Clone)]
pub struct GpModel {
    x_train: Mat,
    y_train: Vec64,
    hyper: GpHyperparams,
    x_mean: Vec64,
    x_scale: Vec64,
    rows_std: Vec<Vec64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha_vec: Vec64,
    /// Jitter actually used by the factorization (0 when none was needed).
    pub jitter: f64,
}

fn standardize_stats(x: &Mat) -> (Vec64, Vec64) {
    let n = x.nrows();
    let d = x.ncols();
    let mut mean = Vec64::zeros(d);
    let mut scale = Vec64::from_element(d, 1.0);
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..n {
            s += x[(i, j)];
        }
        let m = s / n as f64;
        let mut var = 0.0;
        for i in 0..n {
            var += (x[(i, j)] - m).powi(2);
        }
        var /= n as f64;
        mean[j] = m;
        let sd = var.sqrt();
        scale[j] = if sd > 1e-12 { sd } else { 1.0 };
    }
    (mean, scale)
}

fn standardized_rows(x: &Mat, mean: &Vec64, scale: &Vec64) -> Vec<Vec64> {
    (0..x.nrows())
        .map(|i| Vec64::from_fn(x.ncols(), |j, _| (x[(i, j)] - mean[j]) / scale[j]))
        .collect()
}

/// Kernel matrix over standardized rows (no noise term).
fn kernel_matrix(rows: &[Vec64], hyper: &GpHyperparams) -> Mat {
    let n = rows.len();
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel(&rows[i], &rows[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factorize_with_jitter(k: &Mat, noise_var: f64) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let mut ky = k.clone();
        for i in 0..n {
            ky[(i, i)] += noise_var + jitter;
        }
        if let Some(ch) = Cholesky::new(ky) {
            return Ok((ch, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-6 {
            return Err(Error::SingularKernel);
        }
    }
}

/// Fit the exact GP: build the kernel matrix, factorize `K + sigma_n^2 I`
/// (jitter escalates from 1e-10 to 1e-6 on failure), store the dual weights.
pub fn fit(x_train: Mat, y_train: Vec64, hyper: GpHyperparams) -> Result<GpModel> {
    let n = x_train.nrows();
    if n == 0 || y_train.len() != n {
        return Err(Error::DimensionMismatch("GP training set".into()));
    }
    if hyper.length_scales.len() != x_train.ncols() {
        return Err(Error::DimensionMismatch("GP length-scales vs feature dim".into()));
    }
    hyper.validate()?;
    let (x_mean, x_scale) = standardize_stats(&x_train);
    let rows = standardized_rows(&x_train, &x_mean, &x_scale);
    let k = kernel_matrix(&rows, &hyper);
    let (chol, jitter) = factorize_with_jitter(&k, hyper.noise_var)?;
    let alpha_vec = chol.solve(&y_train);
    Ok(GpModel {
        x_train,
        y_train,
        hyper,
        x_mean,
        x_scale,
        rows_std: rows,
        chol,
        alpha_vec,
        jitter,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn x_train(&self) -> &Mat {
        &self.x_train
    }

    pub fn y_train(&self) -> &Vec64 {
        &self.y_train
    }

    pub fn alpha_vec(&self) -> &Vec64 {
        &self.alpha_vec
    }

    fn standardize(&self, f: &Vec64) -> Vec64 {
        Vec64::from_fn(f.len(), |j, _| (f[j] - self.x_mean[j]) / self.x_scale[j])
    }

    /// Posterior mean and variance at a query point. The variance is clamped
    /// at zero from below.
    pub fn predict(&self, f_star: &Vec64) -> (f64, f64) {
        let n = self.len();
        let fs = self.standardize(f_star);
        let mut k_star = Vec64::zeros(n);
        for i in 0..n {
            k_star[i] = kernel(&self.rows_std[i], &fs, &self.hyper);
        }
        let mean = k_star.dot(&self.alpha_vec);
        // sigma^2 = k(f*, f*) - k*' (K + sigma_n^2 I)^-1 k* via one triangular
        // solve: w = L^-1 k*.
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("lower solve");
        let var = (self.hyper.signal_var - w.dot(&w)).max(0.0);
        (mean, var)
    }

    /// Log marginal likelihood of the training data under the fitted
    /// hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let data_fit = -0.5 * self.y_train.dot(&self.alpha_vec);
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        data_fit - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Serializable snapshot (features, targets, hyperparameters). The
    /// factorization is rebuilt deterministically on load.
    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            x_train: (0..self.x_train.nrows())
                .map(|i| self.x_train.row(i).iter().cloned().collect())
                .collect(),
            y_train: self.y_train.iter().cloned().collect(),
            hyper: self.hyper.clone(),
        }
    }
}

/// Snapshot format for persistence: raw training rows, targets and
/// hyperparameters as plain JSON-friendly arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    pub hyper: GpHyperparams,
}

impl GpSnapshot {
    pub fn restore(&self) -> Result<GpModel> {
        let n = self.x_train.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty snapshot".into()));
        }
        let d = self.x_train[0].len();
        if self.x_train.iter().any(|r| r.len() != d) || self.y_train.len() != n {
            return Err(Error::DimensionMismatch("snapshot rows".into()));
        }
        let mut x = Mat::zeros(n, d);
        for (i, r) in self.x_train.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        fit(x, Vec64::from_vec(self.y_train.clone()), self.hyper.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("GP snapshot: {e}")))
    }
}

/// Log marginal likelihood and its gradient with respect to the log-space
/// hyperparameters `[ln sigma_f^2, ln l_1..ln l_d, ln sigma_n^2]`.
fn lml_and_grad(rows: &[Vec64], y: &Vec64, hyper: &GpHyperparams) -> Result<(f64, Vec64)> {
    let n = rows.len();
    let d = hyper.length_scales.len();
    let kf = kernel_matrix(rows, hyper);
    let (chol, _) = factorize_with_jitter(&kf, hyper.noise_var)?;
    let alpha = chol.solve(y);
    let lml = -0.5 * y.dot(&alpha)
        - chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = alpha alpha' - K_y^-1; grad_j = 0.5 tr(W dK/dtheta_j).
    let k_inv = chol.inverse();
    let mut grad = Vec64::zeros(d + 2);
    // d/d ln sigma_f^2: dK = K_f.
    let mut g_sig = 0.0;
    // d/d ln sigma_n^2: dK = sigma_n^2 I.
    let mut g_noise = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w_ij = alpha[i] * alpha[j] - k_inv[(i, j)];
            g_sig += w_ij * kf[(i, j)];
        }
        g_noise += (alpha[i] * alpha[i] - k_inv[(i, i)]) * hyper.noise_var;
    }
    grad[0] = 0.5 * g_sig;
    grad[d + 1] = 0.5 * g_noise;
    // d/d ln l_k: dK_ij = K_ij * (x_ik - x_jk)^2 / l_k^2.
    for k in 0..d {
        let lk2 = hyper.length_scales[k] * hyper.length_scales[k];
        let mut g = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w_ij = alpha[i] * alpha[j] - k_inv[(i, j)];
                let diff = rows[i][k] - rows[j][k];
                g += w_ij * kf[(i, j)] * diff * diff / lk2;
            }
        }
        grad[k + 1] = 0.5 * g;
    }
    Ok((lml, grad))
}

fn hyper_from_log(theta: &Vec64, d: usize) -> GpHyperparams {
    GpHyperparams {
        signal_var: theta[0].exp(),
        length_scales: Vec64::from_fn(d, |k, _| theta[k + 1].exp()),
        noise_var: theta[d + 1].exp(),
    }
}

/// Gradient-ascent result of one restart.
fn ascend(rows: &[Vec64], y: &Vec64, theta0: Vec64, iters: usize) -> Option<(f64, Vec64)> {
    let d = rows[0].len();
    let mut theta = theta0;
    let (mut best_lml, mut grad) = lml_and_grad(rows, y, &hyper_from_log(&theta, d)).ok()?;
    let mut step = 0.1;
    for _ in 0..iters {
        if grad.amax() < 1e-6 || step < 1e-12 {
            break;
        }
        let mut cand = &theta + &grad * step;
        clamp_log_hyper(&mut cand, d);
        match lml_and_grad(rows, y, &hyper_from_log(&cand, d)) {
            Ok((lml_new, grad_new)) if lml_new.is_finite() && lml_new > best_lml => {
                theta = cand;
                best_lml = lml_new;
                grad = grad_new;
                step *= 1.3;
            }
            _ => {
                step *= 0.5;
            }
        }
    }
    Some((best_lml, theta))
}

fn clamp_log_hyper(theta: &mut Vec64, d: usize) {
    theta[0] = theta[0].clamp((1e-6f64).ln(), (1e6f64).ln());
    for k in 0..d {
        theta[k + 1] = theta[k + 1].clamp((1e-3f64).ln(), (1e6f64).ln());
    }
    theta[d + 1] = theta[d + 1].clamp((1e-8f64).ln(), (1e2f64).ln());
}

/// Outcome of hyperparameter optimization; `fallback` is set when every
/// restart failed to factorize and the defaults were returned instead.
#[derive(Debug, Clone)]
pub struct OptimizedHyper {
    pub hyper: GpHyperparams,
    pub fallback: bool,
}

/// Maximize the log marginal likelihood over `(sigma_f^2, {l_d}, sigma_n^2)`
/// by gradient ascent in log-space with random restarts.
///
/// Restart initialization: `sigma_f^2 ~ logU[0.1, 10]`,
/// `l_d ~ logU[0.1, 10]` scaled by the typical standardized inter-point
/// distance `sqrt(d_f)` (without that factor every init lands on the
/// degenerate all-points-distant plateau in high dimension and the ascent
/// has no gradient to follow), and `sigma_n^2 ~ logU[1e-4, 1e-1]`. One
/// additional deterministic restart starts from the median-distance
/// heuristic.
pub fn optimize_hyperparams(
    x_train: &Mat,
    y_train: &Vec64,
    restarts: usize,
    rng: &mut impl Rng,
) -> Result<OptimizedHyper> {
    let n = x_train.nrows();
    let d = x_train.ncols();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "hyperparameter optimization needs at least 2 points".into(),
        ));
    }
    let (mean, scale) = standardize_stats(x_train);
    let rows = standardized_rows(x_train, &mean, &scale);
    let dist_scale = (d as f64).sqrt();
    let y_ms = (y_train.dot(y_train) / n as f64).max(1e-8);

    let mut best: Option<(f64, Vec64)> = None;
    // Deterministic distance-heuristic start.
    let mut theta_h = Vec64::zeros(d + 2);
    theta_h[0] = y_ms.ln();
    for k in 0..d {
        theta_h[k + 1] = dist_scale.ln();
    }
    theta_h[d + 1] = (0.1 * y_ms).ln();
    clamp_log_hyper(&mut theta_h, d);
    if let Some((lml, theta)) = ascend(&rows, y_train, theta_h, 200) {
        best = Some((lml, theta));
    }
    for _ in 0..restarts.max(1) {
        let mut theta0 = Vec64::zeros(d + 2);
        theta0[0] = log_uniform(rng, 0.1, 10.0).ln();
        for k in 0..d {
            theta0[k + 1] = (log_uniform(rng, 0.1, 10.0) * dist_scale).ln();
        }
        theta0[d + 1] = log_uniform(rng, 1e-4, 1e-1).ln();
        if let Some((lml, theta)) = ascend(&rows, y_train, theta0, 200) {
            match &best {
                Some((b, _)) if *b >= lml => {}
                _ => best = Some((lml, theta)),
            }
        }
    }
    match best {
        Some((_, theta)) => Ok(OptimizedHyper { hyper: hyper_from_log(&theta, d), fallback: false }),
        None => Ok(OptimizedHyper { hyper: GpHyperparams::defaults(d), fallback: true }),
    }
}

/// Re-optimize from a known-good previous optimum: one warm ascent plus a
/// single random escape restart. Used to amortize repeated optimizations on
/// a growing training set.
pub fn optimize_hyperparams_warm(
    x_train: &Mat,
    y_train: &Vec64,
    start: &GpHyperparams,
    rng: &mut impl Rng,
) -> Result<OptimizedHyper> {
    let n = x_train.nrows();
    let d = x_train.ncols();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "hyperparameter optimization needs at least 2 points".into(),
        ));
    }
    let (mean, scale) = standardize_stats(x_train);
    let rows = standardized_rows(x_train, &mean, &scale);
    let dist_scale = (d as f64).sqrt();

    let mut theta_w = Vec64::zeros(d + 2);
    theta_w[0] = start.signal_var.ln();
    for k in 0..d {
        theta_w[k + 1] = start.length_scales[k].ln();
    }
    theta_w[d + 1] = start.noise_var.ln();
    clamp_log_hyper(&mut theta_w, d);

    let mut best: Option<(f64, Vec64)> = ascend(&rows, y_train, theta_w, 200);
    let mut theta0 = Vec64::zeros(d + 2);
    theta0[0] = log_uniform(rng, 0.1, 10.0).ln();
    for k in 0..d {
        theta0[k + 1] = (log_uniform(rng, 0.1, 10.0) * dist_scale).ln();
    }
    theta0[d + 1] = log_uniform(rng, 1e-4, 1e-1).ln();
    if let Some((lml, theta)) = ascend(&rows, y_train, theta0, 200) {
        match &best {
            Some((b, _)) if *b >= lml => {}
            _ => best = Some((lml, theta)),
        }
    }
    match best {
        Some((_, theta)) => Ok(OptimizedHyper { hyper: hyper_from_log(&theta, d), fallback: false }),
        None => Ok(OptimizedHyper { hyper: start.clone(), fallback: true }),
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn kernel_closed_forms() {
        let h = GpHyperparams::defaults(1);
        let a = Vec64::from_element(1, 0.3);
        assert!((kernel(&a, &a, &h) - 1.0).abs() < 1e-15);
        let b = Vec64::from_element(1, 0.3 + 2.0f64.sqrt());
        assert!((kernel(&a, &b, &h) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_symmetry() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let h = GpHyperparams {
            signal_var: 2.3,
            length_scales: Vec64::from_column_slice(&[0.7, 1.9, 0.4]),
            noise_var: 0.01,
        };
        for _ in 0..1000 {
            let a = Vec64::from_fn(3, |_, _| rng.gen_range(-3.0..3.0));
            let b = Vec64::from_fn(3, |_, _| rng.gen_range(-3.0..3.0));
            assert!((kernel(&a, &b, &h) - kernel(&b, &a, &h)).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_single_point() {
        // n = 1, y = 2, sigma_f^2 = 1, sigma_n^2 = 0.1: alpha = 2 / 1.1.
        let x = Mat::from_element(1, 1, 0.0);
        let y = Vec64::from_element(1, 2.0);
        let h = GpHyperparams {
            signal_var: 1.0,
            length_scales: Vec64::from_element(1, 1.0),
            noise_var: 0.1,
        };
        let model = fit(x, y, h).unwrap();
        assert!((model.alpha_vec()[0] - 2.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn fit_matches_direct_inverse_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = Mat::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
            let y = Vec64::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let h = GpHyperparams {
                signal_var: 1.5,
                length_scales: Vec64::from_element(2, 0.8),
                noise_var: 0.05,
            };
            let model = fit(x.clone(), y.clone(), h.clone()).unwrap();
            // Oracle: explicit 3x3 inverse on the standardized features.
            let (mean, scale) = standardize_stats(&x);
            let rows = standardized_rows(&x, &mean, &scale);
            let mut ky = kernel_matrix(&rows, &h);
            for i in 0..3 {
                ky[(i, i)] += h.noise_var;
            }
            let alpha_oracle = ky.try_inverse().unwrap() * &y;
            assert!((model.alpha_vec() - &alpha_oracle).amax() < 1e-10);
        }
    }

    #[test]
    fn refit_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = Mat::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = Vec64::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let h = GpHyperparams::defaults(2);
        let m1 = fit(x.clone(), y.clone(), h.clone()).unwrap();
        let m2 = fit(x, y, h).unwrap();
        assert_eq!(m1.alpha_vec(), m2.alpha_vec());
        assert_eq!(m1.chol.l_dirty(), m2.chol.l_dirty());
    }

    #[test]
    fn predict_interpolates_with_tiny_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = Mat::from_fn(5, 1, |i, _| i as f64 + 0.1 * rng.gen_range(-1.0..1.0));
        let y = Vec64::from_fn(5, |i, _| (i as f64).sin());
        let h = GpHyperparams {
            signal_var: 1.0,
            length_scales: Vec64::from_element(1, 1.0),
            noise_var: 1e-12,
        };
        let model = fit(x.clone(), y.clone(), h).unwrap();
        let q = Vec64::from_element(1, x[(1, 0)]);
        let (mean, var) = model.predict(&q);
        assert!((mean - y[1]).abs() < 1e-4, "mean {mean} vs {}", y[1]);
        assert!(var < 1e-6, "variance {var}");
    }

    #[test]
    fn predict_reverts_to_prior_far_away() {
        let x = Mat::from_fn(4, 1, |i, _| i as f64 * 0.1);
        let y = Vec64::from_fn(4, |i, _| 1.0 + i as f64);
        let h = GpHyperparams {
            signal_var: 2.0,
            length_scales: Vec64::from_element(1, 0.5),
            noise_var: 1e-4,
        };
        let model = fit(x, y, h).unwrap();
        let (mean, var) = model.predict(&Vec64::from_element(1, 1e6));
        assert!(mean.abs() < 1e-6);
        assert!((var - 2.0).abs() < 1e-6);
    }

    #[test]
    fn predict_matches_two_point_closed_form() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x = Mat::from_fn(2, 1, |_, _| rng.gen_range(-1.0..1.0));
            let y = Vec64::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let h = GpHyperparams {
                signal_var: 1.2,
                length_scales: Vec64::from_element(1, 0.9),
                noise_var: 0.02,
            };
            let model = fit(x.clone(), y.clone(), h.clone()).unwrap();
            let q = Vec64::from_element(1, rng.gen_range(-1.0..1.0));
            let (mean, var) = model.predict(&q);
            // Hand-assembled 2x2 formula on standardized inputs.
            let (mu, sc) = standardize_stats(&x);
            let rows = standardized_rows(&x, &mu, &sc);
            let qs = Vec64::from_element(1, (q[0] - mu[0]) / sc[0]);
            let k11 = kernel(&rows[0], &rows[0], &h) + h.noise_var;
            let k12 = kernel(&rows[0], &rows[1], &h);
            let k22 = kernel(&rows[1], &rows[1], &h) + h.noise_var;
            let det = k11 * k22 - k12 * k12;
            let ks = Vec64::from_column_slice(&[kernel(&rows[0], &qs, &h), kernel(&rows[1], &qs, &h)]);
            let inv_ks0 = (k22 * ks[0] - k12 * ks[1]) / det;
            let inv_ks1 = (-k12 * ks[0] + k11 * ks[1]) / det;
            let mean_oracle = inv_ks0 * y[0] + inv_ks1 * y[1];
            let var_oracle = h.signal_var - (ks[0] * inv_ks0 + ks[1] * inv_ks1);
            assert!((mean - mean_oracle).abs() < 1e-10);
            assert!((var - var_oracle.max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn lml_single_zero_observation() {
        let h = GpHyperparams {
            signal_var: 1.7,
            length_scales: Vec64::from_element(1, 1.0),
            noise_var: 0.3,
        };
        let model = fit(Mat::zeros(1, 1), Vec64::zeros(1), h.clone()).unwrap();
        let expected = -0.5 * (h.signal_var + h.noise_var).ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((model.log_marginal_likelihood() - expected).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = Mat::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = Vec64::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let (mean, scale) = standardize_stats(&x);
        let rows = standardized_rows(&x, &mean, &scale);
        let d = 2;
        let theta = Vec64::from_column_slice(&[0.2f64.ln(), 0.7f64.ln(), 1.4f64.ln(), 0.05f64.ln()]);
        let (_, grad) = lml_and_grad(&rows, &y, &hyper_from_log(&theta, d)).unwrap();
        let h_step = 1e-5;
        for j in 0..d + 2 {
            let mut tp = theta.clone();
            tp[j] += h_step;
            let mut tm = theta.clone();
            tm[j] -= h_step;
            let (lp, _) = lml_and_grad(&rows, &y, &hyper_from_log(&tp, d)).unwrap();
            let (lm, _) = lml_and_grad(&rows, &y, &hyper_from_log(&tm, d)).unwrap();
            let fd = (lp - lm) / (2.0 * h_step);
            let rel = (grad[j] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: analytic {} vs fd {fd}", grad[j]);
        }
    }

    #[test]
    fn optimization_improves_over_initializations() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let x = Mat::from_fn(12, 1, |i, _| i as f64 * 0.3);
        let y = Vec64::from_fn(12, |i, _| (i as f64 * 0.3).sin() + 0.01 * rng.gen_range(-1.0..1.0));
        let opt = optimize_hyperparams(&x, &y, 5, &mut rng).unwrap();
        assert!(!opt.fallback);
        let lml_opt = fit(x.clone(), y.clone(), opt.hyper.clone())
            .unwrap()
            .log_marginal_likelihood();
        // The optimized likelihood dominates the default initialization.
        let lml_default = fit(x, y, GpHyperparams::defaults(1))
            .unwrap()
            .log_marginal_likelihood();
        assert!(lml_opt >= lml_default - 1e-9, "{lml_opt} vs {lml_default}");
    }

    #[test]
    fn variance_bounds_hold() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let x = Mat::from_fn(30, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y = Vec64::from_fn(30, |_, _| rng.gen_range(-2.0..2.0));
        let h = GpHyperparams {
            signal_var: 1.3,
            length_scales: Vec64::from_element(2, 0.7),
            noise_var: 0.05,
        };
        let model = fit(x, y, h.clone()).unwrap();
        for _ in 0..10_000 {
            let q = Vec64::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            let (_, var) = model.predict(&q);
            assert!(var >= 0.0 && var <= h.signal_var + h.noise_var + 1e-9);
        }
    }

    #[test]
    fn adding_points_never_increases_variance() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let h = GpHyperparams {
            signal_var: 1.0,
            length_scales: Vec64::from_element(1, 1.0),
            noise_var: 0.01,
        };
        let x_small = Mat::from_fn(10, 1, |_, _| rng.gen_range(-2.0..2.0));
        let y_small = Vec64::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let mut x_big = Mat::zeros(11, 1);
        for i in 0..10 {
            x_big[(i, 0)] = x_small[(i, 0)];
        }
        x_big[(10, 0)] = rng.gen_range(-2.0..2.0);
        let mut y_big = Vec64::zeros(11);
        for i in 0..10 {
            y_big[i] = y_small[i];
        }
        y_big[10] = rng.gen_range(-1.0..1.0);
        // Hold the standardization fixed by comparing on raw-identical stats:
        // use the same hyperparameters but skip z-scoring effects by spreading
        // queries widely.
        let m_small = fit(x_small, y_small, h.clone()).unwrap();
        let m_big = fit(x_big, y_big, h).unwrap();
        // Schur-complement monotonicity holds for the same (unstandardized)
        // kernel; standardization shifts differ negligibly for this data, so
        // compare with a small slack.
        for i in 0..100 {
            let q = Vec64::from_element(1, -2.0 + 4.0 * (i as f64) / 99.0);
            let (_, v_small) = m_small.predict(&q);
            let (_, v_big) = m_big.predict(&q);
            assert!(v_big <= v_small + 5e-2, "variance grew: {v_big} > {v_small}");
        }
    }

    #[test]
    fn kernel_matrix_is_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for &n in &[10usize, 50, 200] {
            let x = Mat::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            let (mean, scale) = standardize_stats(&x);
            let rows = standardized_rows(&x, &mean, &scale);
            let h = GpHyperparams::defaults(3);
            let k = kernel_matrix(&rows, &h);
            let min_eig = k
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let x = Mat::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = Vec64::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let model = fit(x, y, GpHyperparams::defaults(2)).unwrap();
        let json = model.snapshot().to_json();
        let restored = GpSnapshot::from_json(&json).unwrap().restore().unwrap();
        assert_eq!(model.alpha_vec(), restored.alpha_vec());
        let q = Vec64::from_column_slice(&[0.2, -0.4]);
        assert_eq!(model.predict(&q), restored.predict(&q));
    }
}
