//! Medium-frequency risk assessment: candidate scenario generation, GP-UCB
//! ranking, high-fidelity simulation of the winners and construction of the
//! learned prediction-error set (LPES).

use crate::criticality::{self, FeatureExtractor, UncertaintyScenario};
use crate::error::{Error, Result};
use crate::gp::{self, GpHyperparams, GpModel};
use crate::system::{sample_matrices_uniform, sample_matrices_vertex, DisturbanceSchedule, IntervalBox, UncertainLinearSystem};
use crate::tube::{AncillaryDesign, MpcPlan};
use crate::Vec64;
use rand::Rng;
use std::collections::VecDeque;

/// Per-horizon-step support vectors of the learned prediction-error set.
/// `s[k][i]` bounds `|e_k[i]|`; `s[0] = 0` since the error starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LpesSupport {
    s: Vec<Vec64>,
    pub update_step: u64,
}

impl LpesSupport {
    pub fn new(s: Vec<Vec64>, update_step: u64) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidArgument("LPES needs at least one step".into()));
        }
        for v in &s {
            if v.iter().any(|&c| c < 0.0 || !c.is_finite()) {
                return Err(Error::InvalidArgument("LPES supports must be >= 0".into()));
            }
        }
        Ok(LpesSupport { s, update_step })
    }

    pub fn zeros(horizon: usize, n_x: usize) -> Self {
        LpesSupport {
            s: vec![Vec64::zeros(n_x); horizon],
            update_step: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.s.len()
    }

    pub fn step(&self, k: usize) -> &Vec64 {
        &self.s[k]
    }

    pub fn steps(&self) -> &[Vec64] {
        &self.s
    }

    /// Largest support component over all steps and dimensions.
    pub fn max_component(&self) -> f64 {
        self.s
            .iter()
            .map(|v| v.iter().cloned().fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Whether an error trajectory stays inside the boxes for every step
    /// `k = 0..horizon-1`.
    pub fn covers(&self, e_traj: &[Vec64]) -> bool {
        self.s.iter().enumerate().all(|(k, s_k)| {
            e_traj
                .get(k)
                .map(|e| (0..e.len()).all(|i| e[i].abs() <= s_k[i]))
                .unwrap_or(false)
        })
    }
}

/// Statistic of the recent-disturbance window that sets the candidate
/// sampling half-width per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportStat {
    /// Largest absolute observation.
    MaxAbs,
    /// Twice the mean absolute observation (unbiased half-width estimate for
    /// a centered uniform); tracks the bulk rather than the extremes.
    MeanAbs,
}

#[derive(Debug, Clone)]
pub struct RiskEngineConfig {
    /// Candidate pool size per update cycle.
    pub n_cand: usize,
    /// Number of top-ranked scenarios simulated at high fidelity.
    pub k_crit: usize,
    /// UCB exploration weight in the pessimistic criticality estimate.
    pub kappa_ucb: f64,
    /// Control steps between LPES updates.
    pub update_period_m: u64,
    /// Scenarios used to bootstrap the GP training set.
    pub n_seed_train: usize,
    /// Window of recent observed disturbances driving the candidate support.
    pub support_window: usize,
    /// Inflation applied to the windowed support estimate.
    pub support_inflation: f64,
    /// Floor on the candidate half-width, as a fraction of the base support.
    pub support_floor_frac: f64,
    /// Windowed statistic used as the support estimate.
    pub support_stat: SupportStat,
    /// Training-set cap (FIFO eviction beyond it).
    pub train_cap: usize,
    /// Hyperparameters are re-optimized when the training set grew by this
    /// factor since the last optimization.
    pub reopt_growth: f64,
    /// Random restarts for hyperparameter optimization.
    pub opt_restarts: usize,
}

impl Default for RiskEngineConfig {
    fn default() -> Self {
        RiskEngineConfig {
            n_cand: 500,
            k_crit: 10,
            kappa_ucb: 2.0,
            update_period_m: 50,
            n_seed_train: 50,
            support_window: 100,
            support_inflation: 1.25,
            support_floor_frac: 1.0,
            support_stat: SupportStat::MaxAbs,
            train_cap: 512,
            reopt_growth: 1.25,
            opt_restarts: 5,
        }
    }
}

impl RiskEngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cand == 0 {
            return Err(Error::config("engine.n_cand", "need at least one candidate"));
        }
        if self.k_crit == 0 || self.k_crit > self.n_cand {
            return Err(Error::config("engine.k_crit", "must satisfy 1 <= k_crit <= n_cand"));
        }
        if self.update_period_m == 0 {
            return Err(Error::config("engine.update_period_m", "must be >= 1"));
        }
        if self.kappa_ucb < 0.0 {
            return Err(Error::config("engine.kappa_ucb", "must be >= 0"));
        }
        if self.support_inflation < 1.0 {
            return Err(Error::config("engine.support_inflation", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.support_floor_frac) {
            return Err(Error::config("engine.support_floor_frac", "must lie in [0, 1]"));
        }
        if self.train_cap < 2 {
            return Err(Error::config("engine.train_cap", "must be >= 2"));
        }
        Ok(())
    }
}

/// Pessimistic criticality estimate: UCB score `mu + kappa * sigma`.
pub fn pce(model: &GpModel, f: &Vec64, kappa_ucb: f64) -> f64 {
    let (mean, var) = model.predict(f);
    mean + kappa_ucb * var.sqrt()
}

/// Diagnostics emitted by one LPES update cycle.
#[derive(Debug, Clone)]
pub struct CycleDiagnostics {
    pub update_step: u64,
    pub s_max: f64,
    pub selected_gammas: Vec<f64>,
    pub gp_lml: f64,
    pub train_size: usize,
    pub cold_start: bool,
}

/// The medium-frequency loop state: GP training set, recent-disturbance
/// window, and the machinery to rebuild the LPES.
pub struct RiskEngine {
    cfg: RiskEngineConfig,
    extractor: FeatureExtractor,
    features: VecDeque<Vec64>,
    targets: VecDeque<f64>,
    model: Option<GpModel>,
    hyper: Option<GpHyperparams>,
    last_opt_size: usize,
    recent_d: VecDeque<Vec64>,
    n_d: usize,
}

impl RiskEngine {
    pub fn new(cfg: RiskEngineConfig, sys: &UncertainLinearSystem) -> Result<Self> {
        cfg.validate()?;
        Ok(RiskEngine {
            cfg,
            extractor: FeatureExtractor::new(sys),
            features: VecDeque::new(),
            targets: VecDeque::new(),
            model: None,
            hyper: None,
            last_opt_size: 0,
            recent_d: VecDeque::new(),
            n_d: sys.n_d(),
        })
    }

    pub fn config(&self) -> &RiskEngineConfig {
        &self.cfg
    }

    pub fn model(&self) -> Option<&GpModel> {
        self.model.as_ref()
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn train_size(&self) -> usize {
        self.targets.len()
    }

    /// Feed one observed disturbance into the support-tracking window.
    pub fn observe_disturbance(&mut self, d: &Vec64) {
        self.recent_d.push_back(d.clone());
        while self.recent_d.len() > self.cfg.support_window {
            self.recent_d.pop_front();
        }
    }

    /// Candidate sampling box: the windowed per-channel statistic, inflated,
    /// floored at `support_floor_frac` times the base support.
    pub fn candidate_support(&self, sched: &DisturbanceSchedule) -> IntervalBox {
        let base = sched.base_support();
        let mut half = Vec64::zeros(self.n_d);
        for ch in 0..self.n_d {
            let base_half = base.upper()[ch].abs().max(base.lower()[ch].abs());
            let floor = self.cfg.support_floor_frac * base_half;
            let est = if self.recent_d.is_empty() {
                base_half
            } else {
                match self.cfg.support_stat {
                    SupportStat::MaxAbs => self
                        .recent_d
                        .iter()
                        .map(|d| d[ch].abs())
                        .fold(0.0, f64::max),
                    SupportStat::MeanAbs => {
                        2.0 * self.recent_d.iter().map(|d| d[ch].abs()).sum::<f64>()
                            / self.recent_d.len() as f64
                    }
                }
            };
            half[ch] = (self.cfg.support_inflation * est).max(floor);
        }
        IntervalBox::symmetric(half).expect("non-negative half-widths")
    }

    /// Draw the candidate pool: disturbances uniform over the tracked
    /// support; plant matrices 50% at random interval vertices held constant
    /// over the horizon, 50% drawn uniformly inside the box per step.
    pub fn generate_candidates(
        &self,
        sys: &UncertainLinearSystem,
        sched: &DisturbanceSchedule,
        horizon: usize,
        n_cand: usize,
        rng: &mut impl Rng,
    ) -> Vec<UncertaintyScenario> {
        let support = self.candidate_support(sched);
        (0..n_cand)
            .map(|_| {
                let d_seq = (0..horizon).map(|_| support.sample(rng)).collect();
                let ab_seq = if rng.gen::<bool>() {
                    let vertex = sample_matrices_vertex(sys, rng);
                    vec![vertex; horizon]
                } else {
                    (0..horizon).map(|_| sample_matrices_uniform(sys, rng)).collect()
                };
                UncertaintyScenario { d_seq, ab_seq }
            })
            .collect()
    }

    fn push_training_pair(&mut self, f: Vec64, gamma: f64) {
        self.features.push_back(f);
        self.targets.push_back(gamma);
        while self.targets.len() > self.cfg.train_cap {
            self.features.pop_front();
            self.targets.pop_front();
        }
    }

    fn training_matrices(&self) -> (crate::Mat, Vec64) {
        let n = self.targets.len();
        let d = self.extractor.dim();
        let mut x = crate::Mat::zeros(n, d);
        for (i, f) in self.features.iter().enumerate() {
            for j in 0..d {
                x[(i, j)] = f[j];
            }
        }
        let y = Vec64::from_fn(n, |i, _| self.targets[i]);
        (x, y)
    }

    fn refit(&mut self, rng: &mut impl Rng) -> Result<()> {
        let n = self.targets.len();
        if n == 0 {
            return Ok(());
        }
        let (x, y) = self.training_matrices();
        let needs_opt = self.hyper.is_none()
            || n as f64 >= self.cfg.reopt_growth * self.last_opt_size.max(1) as f64;
        if needs_opt && n >= 2 {
            // Full multi-restart search the first time; warm ascent from the
            // previous optimum afterwards.
            let opt = match &self.hyper {
                None => gp::optimize_hyperparams(&x, &y, self.cfg.opt_restarts, rng)?,
                Some(prev) => gp::optimize_hyperparams_warm(&x, &y, prev, rng)?,
            };
            self.hyper = Some(opt.hyper);
            self.last_opt_size = n;
        }
        let hyper = self
            .hyper
            .clone()
            .unwrap_or_else(|| GpHyperparams::defaults(self.extractor.dim()));
        self.model = Some(gp::fit(x, y, hyper)?);
        Ok(())
    }

    /// Cold-start the GP: evaluate the true criticality of `n_seed_train`
    /// random scenarios under the given plan and fit with optimized
    /// hyperparameters.
    pub fn bootstrap(
        &mut self,
        sys: &UncertainLinearSystem,
        sched: &DisturbanceSchedule,
        plan: &MpcPlan,
        anc: &AncillaryDesign,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let horizon = plan.horizon();
        let seeds = self.generate_candidates(sys, sched, horizon, self.cfg.n_seed_train, rng);
        for zeta in &seeds {
            let gamma = criticality::criticality(zeta, plan, anc, sys)?;
            let f = self.extractor.extract(zeta)?;
            self.push_training_pair(f, gamma);
        }
        self.refit(rng)
    }

    /// One medium-frequency cycle: generate candidates, rank them by PCE
    /// (stable order: score descending, index ascending), simulate the
    /// `k_crit` winners, build the per-step support vectors from the
    /// envelope of their error trajectories, and append the winners' true
    /// criticality values to the GP training set.
    ///
    /// Without a trained GP the ranking falls back to direct criticality
    /// evaluation of a random subsample of at most 100 candidates.
    pub fn update_lpes(
        &mut self,
        plan: &MpcPlan,
        sys: &UncertainLinearSystem,
        sched: &DisturbanceSchedule,
        anc: &AncillaryDesign,
        step: u64,
        rng: &mut impl Rng,
    ) -> Result<(LpesSupport, CycleDiagnostics)> {
        let horizon = plan.horizon();
        let n_x = sys.n_x();
        let candidates = self.generate_candidates(sys, sched, horizon, self.cfg.n_cand, rng);

        let mut cold_start = false;
        let winner_idx: Vec<usize> = if let Some(model) = &self.model {
            let mut scored: Vec<(usize, f64)> = candidates
                .iter()
                .enumerate()
                .map(|(i, zeta)| {
                    let f = self.extractor.extract(zeta)?;
                    Ok((i, pce(model, &f, self.cfg.kappa_ucb)))
                })
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.iter().take(self.cfg.k_crit).map(|&(i, _)| i).collect()
        } else {
            cold_start = true;
            let sample_n = self.cfg.n_cand.min(100);
            let mut pool: Vec<usize> = (0..candidates.len()).collect();
            // Deterministic partial shuffle picking `sample_n` indices.
            for i in 0..sample_n.min(pool.len()) {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut scored: Vec<(usize, f64)> = pool[..sample_n.min(pool.len())]
                .iter()
                .map(|&i| {
                    let gamma = criticality::criticality(&candidates[i], plan, anc, sys)?;
                    Ok((i, gamma))
                })
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.iter().take(self.cfg.k_crit).map(|&(i, _)| i).collect()
        };

        // High-fidelity simulation of the winners and the support envelope.
        let mut s = vec![Vec64::zeros(n_x); horizon];
        let mut gammas = Vec::with_capacity(winner_idx.len());
        for &i in &winner_idx {
            let zeta = &candidates[i];
            let traj = criticality::simulate_error(zeta, plan, anc, sys)?;
            for k in 0..horizon {
                for dim in 0..n_x {
                    s[k][dim] = s[k][dim].max(traj[k][dim].abs());
                }
            }
            let gamma = criticality::criticality_of_trajectory(&traj, &anc.p_e, anc.alpha_e);
            gammas.push(gamma);
            let f = self.extractor.extract(zeta)?;
            self.push_training_pair(f, gamma);
        }
        self.refit(rng)?;

        let lpes = LpesSupport::new(s, step)?;
        let diag = CycleDiagnostics {
            update_step: step,
            s_max: lpes.max_component(),
            selected_gammas: gammas,
            gp_lml: self.model.as_ref().map(|m| m.log_marginal_likelihood()).unwrap_or(f64::NAN),
            train_size: self.targets.len(),
            cold_start,
        };
        Ok((lpes, diag))
    }

    /// Fraction of scenarios whose error trajectories stay inside the LPES
    /// boxes for every step of the horizon.
    pub fn coverage_fraction(
        lpes: &LpesSupport,
        scenarios: &[UncertaintyScenario],
        plan: &MpcPlan,
        anc: &AncillaryDesign,
        sys: &UncertainLinearSystem,
    ) -> Result<f64> {
        if scenarios.is_empty() {
            return Ok(1.0);
        }
        let mut inside = 0usize;
        for zeta in scenarios {
            let traj = criticality::simulate_error(zeta, plan, anc, sys)?;
            if lpes.covers(&traj) {
                inside += 1;
            }
        }
        Ok(inside as f64 / scenarios.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::QpStatus;
    
    use crate::tube::{design_ancillary, MpcConfig, TerminalMode, TighteningMode};
    use crate::Mat;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn demo_system(delta_rel: f64) -> UncertainLinearSystem {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
        let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
        let g = Mat::identity(2, 2);
        let support = IntervalBox::symmetric(Vec64::from_element(2, 0.14)).unwrap();
        UncertainLinearSystem::new(a, b, g, delta_rel, support).unwrap()
    }

    fn demo_ancillary(sys: &UncertainLinearSystem) -> AncillaryDesign {
        let cfg = MpcConfig {
            horizon_n: 10,
            q_mat: Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]),
            r_mat: Mat::identity(1, 1),
            p_mat: Mat::identity(2, 2),
            rho_slack: 1e6,
            tightening_mode: TighteningMode::PaperL1,
            terminal_mode: TerminalMode::MaximalAdmissible,
            input_tightening_cap_frac: 0.9,
            ancillary_q: None,
            ancillary_r: None,
        };
        design_ancillary(sys, &cfg).unwrap()
    }

    fn zero_plan(n: usize) -> MpcPlan {
        MpcPlan {
            z_seq: vec![Vec64::zeros(2); n + 1],
            v_seq: vec![Vec64::zeros(1); n],
            slack: 0.0,
            qp_status: QpStatus::Solved,
            fallback: false,
        }
    }

    #[test]
    fn lpes_invariants() {
        let lpes = LpesSupport::zeros(10, 2);
        assert_eq!(lpes.horizon(), 10);
        assert_eq!(lpes.max_component(), 0.0);
        assert!(LpesSupport::new(vec![Vec64::from_element(2, -0.1)], 0).is_err());
    }

    #[test]
    fn single_zero_candidate_gives_zero_support() {
        // Degenerate support and zero parametric uncertainty: the only
        // scenario is zero, so the winner envelope is zero.
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
        let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
        let g = Mat::identity(2, 2);
        let support = IntervalBox::symmetric(Vec64::zeros(2)).unwrap();
        let sys = UncertainLinearSystem::new(a, b, g, 0.0, support).unwrap();
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let cfg = RiskEngineConfig {
            n_cand: 1,
            k_crit: 1,
            n_seed_train: 2,
            ..Default::default()
        };
        let mut engine = RiskEngine::new(cfg, &sys).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let plan = zero_plan(10);
        engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
        let (lpes, diag) = engine
            .update_lpes(&plan, &sys, &sched, &anc, 0, &mut rng)
            .unwrap();
        assert_eq!(lpes.max_component(), 0.0);
        assert!(!diag.cold_start);
    }

    #[test]
    fn candidates_satisfy_scenario_invariants() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let engine = RiskEngine::new(RiskEngineConfig::default(), &sys).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cands = engine.generate_candidates(&sys, &sched, 10, 200, &mut rng);
        assert_eq!(cands.len(), 200);
        for zeta in &cands {
            zeta.validate(&sys, 1e-12).unwrap();
        }
    }

    #[test]
    fn candidate_support_tracks_recent_maximum() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let mut engine = RiskEngine::new(
            RiskEngineConfig { support_floor_frac: 0.0, ..Default::default() },
            &sys,
        )
        .unwrap();
        for i in 0..100 {
            let v = 0.05 + 0.0001 * (i as f64);
            engine.observe_disturbance(&Vec64::from_element(2, v));
        }
        let support = engine.candidate_support(&sched);
        let expected = 1.25 * (0.05 + 0.0099);
        assert!((support.upper()[0] - expected).abs() < 1e-12);
        // With the floor at the full base support the box cannot shrink
        // below it.
        let engine_floor = {
            let mut e =
                RiskEngine::new(RiskEngineConfig::default(), &sys).unwrap();
            e.observe_disturbance(&Vec64::from_element(2, 0.001));
            e
        };
        let sup = engine_floor.candidate_support(&sched);
        assert!((sup.upper()[0] - 0.14).abs() < 1e-12);
    }

    #[test]
    fn candidate_empirical_max_matches_inflated_bound() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let mut engine = RiskEngine::new(
            RiskEngineConfig { support_floor_frac: 0.0, ..Default::default() },
            &sys,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            engine.observe_disturbance(&sys.d_support().sample(&mut rng));
        }
        let support = engine.candidate_support(&sched);
        let cands = engine.generate_candidates(&sys, &sched, 10, 10_000, &mut rng);
        let mut emp_max = vec![0.0f64; 2];
        for zeta in &cands {
            for d in &zeta.d_seq {
                for ch in 0..2 {
                    emp_max[ch] = emp_max[ch].max(d[ch].abs());
                }
            }
        }
        for ch in 0..2 {
            let bound = support.upper()[ch];
            assert!(emp_max[ch] <= bound);
            assert!(emp_max[ch] >= bound * 0.98, "channel {ch}: {} vs {bound}", emp_max[ch]);
        }
    }

    #[test]
    fn pce_examples() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let mut engine = RiskEngine::new(
            RiskEngineConfig { n_seed_train: 20, ..Default::default() },
            &sys,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let plan = zero_plan(10);
        engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
        let model = engine.model().unwrap();
        let zeta = engine.generate_candidates(&sys, &sched, 10, 1, &mut rng).remove(0);
        let f = engine.extractor().extract(&zeta).unwrap();
        let (mean, var) = model.predict(&f);
        assert!((pce(model, &f, 0.0) - mean).abs() < 1e-12);
        assert!((pce(model, &f, 2.0) - (mean + 2.0 * var.sqrt())).abs() < 1e-12);
        // Monotone in kappa.
        assert!(pce(model, &f, 3.0) >= pce(model, &f, 1.0));
    }

    #[test]
    fn envelope_is_per_dimension_max() {
        // Two hand-made "winning" trajectories through a 1-candidate engine
        // are overkill; instead check the envelope property on the output.
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let mut engine = RiskEngine::new(
            RiskEngineConfig { n_cand: 50, k_crit: 5, n_seed_train: 10, ..Default::default() },
            &sys,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let plan = zero_plan(10);
        engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
        let (lpes, diag) = engine
            .update_lpes(&plan, &sys, &sched, &anc, 50, &mut rng)
            .unwrap();
        assert_eq!(lpes.update_step, 50);
        assert_eq!(diag.selected_gammas.len(), 5);
        // s_0 = 0 always.
        assert_eq!(lpes.step(0).amax(), 0.0);
        // Supports grow from zero and stay finite.
        assert!(lpes.max_component() > 0.0);
        assert!(lpes.max_component() < 10.0);
    }

    #[test]
    fn determinism_same_seed_same_lpes() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let plan = zero_plan(10);
        let build = || {
            let mut engine = RiskEngine::new(
                RiskEngineConfig { n_cand: 60, k_crit: 5, n_seed_train: 10, ..Default::default() },
                &sys,
            )
            .unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
            engine
                .update_lpes(&plan, &sys, &sched, &anc, 0, &mut rng)
                .unwrap()
                .0
        };
        let l1 = build();
        let l2 = build();
        assert_eq!(l1, l2);
    }

    #[test]
    fn bootstrap_minimum_viable_and_nonnegative_targets() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let mut engine = RiskEngine::new(
            RiskEngineConfig { n_seed_train: 2, ..Default::default() },
            &sys,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let plan = zero_plan(10);
        engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
        assert_eq!(engine.train_size(), 2);
        assert!(engine.model().is_some());
        // With e_0 = 0, L_0 = V(e_1) >= 0, so every true criticality is
        // non-negative.
        assert!(engine.targets.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn cold_start_falls_back_to_direct_evaluation() {
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let mut engine = RiskEngine::new(
            RiskEngineConfig { n_cand: 40, k_crit: 4, ..Default::default() },
            &sys,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let plan = zero_plan(10);
        let (_, diag) = engine
            .update_lpes(&plan, &sys, &sched, &anc, 0, &mut rng)
            .unwrap();
        assert!(diag.cold_start);
        assert!(engine.model().is_some());
    }

    #[test]
    fn ucb_selection_finds_true_argmax_most_of_the_time() {
        // Exhaustive-mode check: after a few update cycles the UCB top-k
        // contains the brute-force argmax of the candidate pool in >= 90% of
        // seeded trials.
        let sys = demo_system(0.05);
        let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
        let anc = demo_ancillary(&sys);
        let plan = zero_plan(10);
        let mut hits = 0;
        let trials = 25;
        for seed in 0..trials {
            let mut engine = RiskEngine::new(
                RiskEngineConfig {
                    n_cand: 50,
                    k_crit: 10,
                    n_seed_train: 30,
                    ..Default::default()
                },
                &sys,
            )
            .unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(1000 + seed);
            engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
            for cycle in 0..5 {
                engine
                    .update_lpes(&plan, &sys, &sched, &anc, cycle, &mut rng)
                    .unwrap();
            }
            // Final cycle: compare UCB selection against brute-force truth on
            // an identical candidate pool (regenerate with a cloned stream).
            let mut rng_sel = rng.clone();
            let cands = engine.generate_candidates(&sys, &sched, 10, 50, &mut rng);
            let true_gammas: Vec<f64> = cands
                .iter()
                .map(|z| criticality::criticality(z, &plan, &anc, &sys).unwrap())
                .collect();
            let argmax = true_gammas
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let model = engine.model().unwrap();
            let mut scored: Vec<(usize, f64)> = cands
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let f = engine.extractor().extract(z).unwrap();
                    (i, pce(model, &f, engine.config().kappa_ucb))
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            if scored.iter().take(10).any(|&(i, _)| i == argmax) {
                hits += 1;
            }
            let _ = &mut rng_sel;
        }
        assert!(
            hits as f64 >= 0.9 * trials as f64,
            "UCB found the argmax in only {hits}/{trials} trials"
        );
    }
}
