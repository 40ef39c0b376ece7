//! Low-frequency risk regulation: the adaptive safety margin `beta` follows a
//! self-correcting stochastic approximation.
//!
//! Physical violations are rare by design, so the raw violation indicator is
//! a starved learning signal. The regulator instead triggers on the more
//! frequent "learning event" `h > -m_s` with `m_s = c_m * beta`, and cancels
//! the bias this introduces by inflating the target from `delta` to
//! `delta + P(buffer)`, where the buffer probability is estimated over a
//! sliding window. Events above target push the margin up, events below pull
//! it down; a weak mean-reversion term prevents drift.

use crate::error::{Error, Result};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct RegulatorConfig {
    /// Target violation rate.
    pub delta: f64,
    /// Learning-boundary gain: `m_s(t) = c_m * beta_t`.
    pub c_m: f64,
    /// Primary learning rate.
    pub alpha_rate: f64,
    /// Mean-reversion rate (much smaller than `alpha_rate`).
    pub gamma_rate: f64,
    /// Mean-reversion baseline margin.
    pub beta_bar: f64,
    /// Projection upper bound.
    pub beta_max: f64,
    /// Sliding-window length for the buffer-probability estimate.
    pub window_w: usize,
}

impl RegulatorConfig {
    pub fn with_delta(delta: f64) -> Self {
        RegulatorConfig {
            delta,
            c_m: 1.0,
            alpha_rate: 0.05,
            gamma_rate: 1e-4,
            beta_bar: 0.05,
            beta_max: 0.5,
            window_w: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) || self.delta == 0.0 {
            return Err(Error::config("regulator.delta", "target risk must lie in (0, 1)"));
        }
        if self.c_m <= 0.0 {
            return Err(Error::config("regulator.c_m", "boundary gain must be positive"));
        }
        if self.alpha_rate <= 0.0 {
            return Err(Error::config("regulator.alpha_rate", "learning rate must be positive"));
        }
        if self.gamma_rate < 0.0 || self.gamma_rate > self.alpha_rate / 10.0 {
            return Err(Error::config(
                "regulator.gamma_rate",
                "mean-reversion rate must satisfy 0 <= gamma <= alpha/10",
            ));
        }
        if self.beta_max <= 0.0 {
            return Err(Error::config("regulator.beta_max", "must be positive"));
        }
        if !(0.0..=self.beta_max).contains(&self.beta_bar) {
            return Err(Error::config("regulator.beta_bar", "must lie in [0, beta_max]"));
        }
        if self.window_w == 0 {
            return Err(Error::config("regulator.window_w", "window must be >= 1"));
        }
        Ok(())
    }
}

/// Learning-event trigger: `h > -c_m * beta`. With `beta = 0` this collapses
/// to the plain violation trigger `h > 0`.
pub fn learning_event(h_val: f64, beta: f64, c_m: f64) -> bool {
    h_val > -c_m * beta
}

/// Empirical buffer probability over `(h, m_s)` pairs: the fraction with
/// `-m_s < h <= 0`, each entry judged against its own recorded boundary.
/// An empty window yields 0.
pub fn buffer_probability<'a>(window: impl IntoIterator<Item = &'a (f64, f64)>) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for &(h, m) in window {
        total += 1;
        if h > -m && h <= 0.0 {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Everything one update step produced, for logging.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub h_val: f64,
    pub m_s: f64,
    pub violation: bool,
    pub buffer: bool,
    pub learning: bool,
    pub buffer_prob: f64,
    pub delta_l: f64,
    pub e_sa: f64,
    /// Margin after the update (the margin used *at* this step is the one
    /// recorded in `m_s / c_m`).
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct RegulatorState {
    beta: f64,
    window: VecDeque<(f64, f64)>,
    t: u64,
}

impl RegulatorState {
    /// Start at `beta_0 = beta_bar`.
    pub fn new(cfg: &RegulatorConfig) -> Self {
        RegulatorState {
            beta: cfg.beta_bar,
            window: VecDeque::new(),
            t: 0,
        }
    }

    pub fn with_beta(cfg: &RegulatorConfig, beta0: f64) -> Self {
        RegulatorState {
            beta: beta0.clamp(0.0, cfg.beta_max),
            window: VecDeque::new(),
            t: 0,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn window(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.window.iter()
    }

    fn record(&mut self, cfg: &RegulatorConfig, h_val: f64) -> (f64, bool, bool, bool) {
        let m_s = cfg.c_m * self.beta;
        self.window.push_back((h_val, m_s));
        while self.window.len() > cfg.window_w {
            self.window.pop_front();
        }
        let violation = h_val > 0.0;
        let buffer = h_val > -m_s && h_val <= 0.0;
        let learning = learning_event(h_val, self.beta, cfg.c_m);
        // Exact indicator decomposition: the learning region is the disjoint
        // union of the violation region and the safe buffer.
        assert_eq!(
            learning as u8,
            violation as u8 + buffer as u8,
            "indicator decomposition must hold exactly"
        );
        (m_s, violation, buffer, learning)
    }

    /// Self-correcting update with dynamic target compensation:
    ///
    /// `delta_L = clamp(delta + P_buffer, delta, 1)`
    /// `e_SA = 1(learning) - delta_L`
    /// `beta <- clamp(beta + alpha e_SA - gamma (beta - beta_bar), 0, beta_max)`
    ///
    /// Events above target raise the margin; below target lower it. (The
    /// ascent direction is what makes the violation-rate feedback loop
    /// contractive; see the regression tests against the naive descent
    /// variant, which is repelled from its own fixed point.)
    pub fn update(&mut self, cfg: &RegulatorConfig, h_val: f64) -> StepOutcome {
        let (m_s, violation, buffer, learning) = self.record(cfg, h_val);
        let buffer_prob = buffer_probability(self.window.iter());
        let delta_l = (cfg.delta + buffer_prob).clamp(cfg.delta, 1.0);
        let e_sa = (learning as u8 as f64) - delta_l;
        let unprojected =
            self.beta + cfg.alpha_rate * e_sa - cfg.gamma_rate * (self.beta - cfg.beta_bar);
        self.beta = unprojected.clamp(0.0, cfg.beta_max);
        self.t += 1;
        StepOutcome {
            h_val,
            m_s,
            violation,
            buffer,
            learning,
            buffer_prob,
            delta_l,
            e_sa,
            beta: self.beta,
        }
    }

    /// Naive single-trigger scheme `beta <- clamp(beta - alpha (1(h>0) -
    /// delta), 0, beta_max)`: no buffer trigger, no target compensation, no
    /// mean reversion. Kept as the comparison baseline; on a plant whose
    /// violation probability falls with `beta` this recursion is repelled
    /// from its fixed point and collapses the margin.
    pub fn update_naive(&mut self, cfg: &RegulatorConfig, h_val: f64) -> StepOutcome {
        let (m_s, violation, buffer, learning) = self.record(cfg, h_val);
        let buffer_prob = buffer_probability(self.window.iter());
        let e_sa = (violation as u8 as f64) - cfg.delta;
        self.beta = (self.beta - cfg.alpha_rate * e_sa).clamp(0.0, cfg.beta_max);
        self.t += 1;
        StepOutcome {
            h_val,
            m_s,
            violation,
            buffer,
            learning,
            buffer_prob,
            delta_l: cfg.delta,
            e_sa,
            beta: self.beta,
        }
    }
}
