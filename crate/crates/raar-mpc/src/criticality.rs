//! Scenario criticality: error propagation under a sampled uncertainty
//! realization, the one-step Lyapunov violation index, and fixed-dimension
//! feature extraction for the GP surrogate.

use crate::error::{Error, Result};
use crate::system::UncertainLinearSystem;
use crate::tube::{AncillaryDesign, MpcPlan};
use crate::{Mat, Vec64};

/// One uncertainty realization over the prediction horizon: a disturbance
/// sequence plus a sequence of plant matrices inside the interval set.
#[derive(Debug, Clone)]
pub struct UncertaintyScenario {
    pub d_seq: Vec<Vec64>,
    pub ab_seq: Vec<(Mat, Mat)>,
}

impl UncertaintyScenario {
    pub fn horizon(&self) -> usize {
        self.d_seq.len()
    }

    pub fn validate(&self, sys: &UncertainLinearSystem, tol: f64) -> Result<()> {
        if self.d_seq.len() != self.ab_seq.len() || self.d_seq.is_empty() {
            return Err(Error::InvalidArgument(
                "scenario sequences must be non-empty and equally long".into(),
            ));
        }
        for d in &self.d_seq {
            if d.len() != sys.n_d() {
                return Err(Error::DimensionMismatch("scenario disturbance dimension".into()));
            }
        }
        for (a, b) in &self.ab_seq {
            if !sys.contains_realization(a, b, tol) {
                return Err(Error::InvalidArgument(
                    "scenario matrices leave the interval uncertainty set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Propagate the closed-loop error dynamics under scenario `zeta` along the
/// plan's nominal trajectory, starting from `e_0 = 0`.
///
/// `e_{k+1} = (A_nom + B_nom K_e) e_k + (A_k - A_nom)(z_k + e_k)
///            + (B_k - B_nom) v_k + (B_k - B_nom) K_e e_k + G d_k`
///
/// This is the exact recursion obtained by substituting `x_k = z_k + e_k`
/// and `u_k = v_k + K_e e_k` into the true dynamics and subtracting the
/// nominal ones; it reproduces `x_k - z_k` of a dual true/nominal
/// simulation to machine precision.
pub fn simulate_error(
    zeta: &UncertaintyScenario,
    plan: &MpcPlan,
    anc: &AncillaryDesign,
    sys: &UncertainLinearSystem,
) -> Result<Vec<Vec64>> {
    let n = zeta.horizon();
    if plan.horizon() != n {
        return Err(Error::DimensionMismatch(format!(
            "plan horizon {} vs scenario length {n}",
            plan.horizon()
        )));
    }
    let a_cl = sys.a_nom() + sys.b_nom() * &anc.k_e;
    let mut traj = Vec::with_capacity(n + 1);
    traj.push(Vec64::zeros(sys.n_x()));
    for k in 0..n {
        let (a_k, b_k) = &zeta.ab_seq[k];
        let da = a_k - sys.a_nom();
        let db = b_k - sys.b_nom();
        let e_k = &traj[k];
        let next = &a_cl * e_k
            + &da * (&plan.z_seq[k] + e_k)
            + &db * &plan.v_seq[k]
            + &db * &anc.k_e * e_k
            + sys.g() * &zeta.d_seq[k];
        traj.push(next);
    }
    Ok(traj)
}

/// One-step Lyapunov violation indices `L_k = V(e_{k+1}) - (1 - alpha) V(e_k)`
/// with `V(e) = e' P_e e`.
pub fn violation_index(e_traj: &[Vec64], p_e: &Mat, alpha_e: f64) -> Vec<f64> {
    let v = |e: &Vec64| (e.transpose() * p_e * e)[(0, 0)];
    (0..e_traj.len().saturating_sub(1))
        .map(|k| v(&e_traj[k + 1]) - (1.0 - alpha_e) * v(&e_traj[k]))
        .collect()
}

/// Criticality of a trajectory: the maximum violation index over the horizon.
pub fn criticality_of_trajectory(e_traj: &[Vec64], p_e: &Mat, alpha_e: f64) -> f64 {
    violation_index(e_traj, p_e, alpha_e)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Criticality of a scenario under a plan: simulate, then take the maximum
/// violation index.
pub fn criticality(
    zeta: &UncertaintyScenario,
    plan: &MpcPlan,
    anc: &AncillaryDesign,
    sys: &UncertainLinearSystem,
) -> Result<f64> {
    let traj = simulate_error(zeta, plan, anc, sys)?;
    Ok(criticality_of_trajectory(&traj, &anc.p_e, anc.alpha_e))
}

/// Minimum scenario length for the spectral features.
pub const MIN_HORIZON: usize = 4;
const TEMPORAL_SAMPLES: usize = 8;
const SPECTRAL_BINS: usize = 3;

/// Maps variable-structure scenarios to fixed-dimension feature vectors:
/// a temporal window of each disturbance channel, per-channel statistics,
/// low-frequency spectral magnitudes of the first channel, and the average
/// parametric deviation norms.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    a_nom: Mat,
    b_nom: Mat,
    n_d: usize,
}

impl FeatureExtractor {
    pub fn new(sys: &UncertainLinearSystem) -> Self {
        FeatureExtractor {
            a_nom: sys.a_nom().clone(),
            b_nom: sys.b_nom().clone(),
            n_d: sys.n_d(),
        }
    }

    /// Fixed feature dimension: `8 n_d + 3 n_d + 3 + 2`.
    pub fn dim(&self) -> usize {
        TEMPORAL_SAMPLES * self.n_d + 3 * self.n_d + SPECTRAL_BINS + 2
    }

    pub fn extract(&self, zeta: &UncertaintyScenario) -> Result<Vec64> {
        let n = zeta.horizon();
        if n < MIN_HORIZON {
            return Err(Error::InvalidArgument(format!(
                "scenario length {n} < {MIN_HORIZON}: insufficient spectral content"
            )));
        }
        let mut f = Vec64::zeros(self.dim());
        let mut idx = 0;

        // Temporal: first min(8, N) samples per channel, zero-padded.
        for ch in 0..self.n_d {
            for k in 0..TEMPORAL_SAMPLES {
                f[idx] = if k < n { zeta.d_seq[k][ch] } else { 0.0 };
                idx += 1;
            }
        }

        // Statistical: per-channel mean, population standard deviation, max
        // absolute value.
        for ch in 0..self.n_d {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut max_abs: f64 = 0.0;
            for k in 0..n {
                let v = zeta.d_seq[k][ch];
                sum += v;
                sum_sq += v * v;
                max_abs = max_abs.max(v.abs());
            }
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            f[idx] = mean;
            f[idx + 1] = var.sqrt();
            f[idx + 2] = max_abs;
            idx += 3;
        }

        // Spectral: magnitudes of the three lowest nonzero DFT bins of the
        // first channel.
        for bin in 1..=SPECTRAL_BINS {
            let mut re = 0.0;
            let mut im = 0.0;
            for k in 0..n {
                let angle = -2.0 * std::f64::consts::PI * (bin as f64) * (k as f64) / n as f64;
                let v = zeta.d_seq[k][0];
                re += v * angle.cos();
                im += v * angle.sin();
            }
            f[idx] = (re * re + im * im).sqrt();
            idx += 1;
        }

        // Parametric: average Frobenius deviation of (A_k, B_k).
        let mut a_dev = 0.0;
        let mut b_dev = 0.0;
        for (a_k, b_k) in &zeta.ab_seq {
            a_dev += (a_k - &self.a_nom).norm();
            b_dev += (b_k - &self.b_nom).norm();
        }
        f[idx] = a_dev / n as f64;
        f[idx + 1] = b_dev / n as f64;
        idx += 2;
        debug_assert_eq!(idx, self.dim());

        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(f)
    }
}
