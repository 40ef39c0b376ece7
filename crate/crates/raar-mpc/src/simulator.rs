//! Closed-loop experiment harness: plant + tube MPC + both adaptive loops,
//! per-step telemetry, internal comparison baselines, the DC-DC converter
//! benchmark factory, and summary metrics.

use crate::error::{Error, Result};
use crate::qp::QpSettings;
use crate::regulator::{RegulatorConfig, RegulatorState};
use crate::riccati;
use crate::risk_engine::{LpesSupport, RiskEngine, RiskEngineConfig, SupportStat};
use crate::system::{
    sample_disturbance, sample_matrices_uniform, sample_true_realization, step_true_plant,
    DisturbanceSchedule, Epoch, IntervalBox, PolytopeConstraint, TrueRealization,
    UncertainLinearSystem,
};
use crate::tube::{
    control_action, design_ancillary, design_terminal, tightening_amount, MpcConfig, TerminalMode,
    TighteningMode, TubeMpc,
};
use crate::{Mat, Vec64};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Which controller drives the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerVariant {
    /// Full scheme: adaptive LPES plus self-correcting margin.
    Raar,
    /// Frozen worst-case tube: envelope of brute-force scenarios at the
    /// largest epoch scale, margin fixed at its initial value.
    FixedWorstCase,
    /// Adaptive LPES, but the margin follows the naive single-trigger
    /// recursion.
    NaiveSa,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub total_steps: u64,
    pub seed: u64,
    pub target_delta: f64,
    pub sys: UncertainLinearSystem,
    pub x_constraint: PolytopeConstraint,
    pub u_constraint: PolytopeConstraint,
    /// Index of the chance-constrained state row tracked by the regulator.
    pub chance_row: usize,
    pub mpc: MpcConfig,
    pub engine: RiskEngineConfig,
    pub regulator: RegulatorConfig,
    pub schedule: DisturbanceSchedule,
    pub x0: Vec64,
    /// Resample the true plant matrices every step (stress mode) instead of
    /// holding one fixed draw for the whole run.
    pub time_varying_plant: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("total_steps", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.target_delta) || self.target_delta == 0.0 {
            return Err(Error::config("target_delta", "must lie in (0, 1)"));
        }
        self.mpc.validate(self.sys.n_x(), self.sys.n_u())?;
        self.engine.validate()?;
        self.regulator.validate()?;
        if self.chance_row >= self.x_constraint.n_rows() {
            return Err(Error::config("chance_row", "row index out of range"));
        }
        if self.x0.len() != self.sys.n_x() {
            return Err(Error::config("x0", "dimension mismatch"));
        }
        if self.x_constraint.dim() != self.sys.n_x() || self.u_constraint.dim() != self.sys.n_u() {
            return Err(Error::config("constraints", "dimension mismatch"));
        }
        if (self.regulator.delta - self.target_delta).abs() > 1e-12 {
            return Err(Error::config("regulator.delta", "must equal target_delta"));
        }
        Ok(())
    }

    /// Startup check: `x0` strictly inside every state row tightened by the
    /// initial `(s = 0, beta_0)`.
    pub fn check_startup_feasible(&self) -> Result<()> {
        let zero_s = Vec64::zeros(self.sys.n_x());
        let beta0 = self.regulator.beta_bar;
        for i in 0..self.x_constraint.n_rows() {
            let row = self.x_constraint.row(i);
            let tight = tightening_amount(&row, &zero_s, beta0, self.mpc.tightening_mode)?;
            let margin = self.x_constraint.c_vec()[i] - tight - row.dot(&self.x0);
            if margin <= 0.0 {
                return Err(Error::StartupInfeasible(format!(
                    "state row {i} violated by {:.3e}",
                    -margin
                )));
            }
        }
        Ok(())
    }
}

/// One control step of telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: u64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Chance-row value of the *next* state, the quantity the regulator sees.
    pub h_val: f64,
    pub violation: bool,
    pub learning: bool,
    /// Margin in effect at this step (used by the MPC tightening).
    pub beta: f64,
    pub slack: f64,
    pub cost_increment: f64,
    pub epoch_scale: f64,
    pub m_s: f64,
    pub buffer_prob: f64,
    pub delta_l: f64,
    pub fallback: bool,
}

/// One LPES update cycle of telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub update_step: u64,
    pub s_max: f64,
    pub gamma_max: f64,
    pub gamma_mean: f64,
    pub gp_lml: f64,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub n_x: usize,
    pub n_u: usize,
    pub steps: Vec<StepRow>,
    pub cycles: Vec<CycleRow>,
}

impl RunLog {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|r| r.cost_increment).sum()
    }

    pub fn violation_count(&self) -> u64 {
        self.steps.iter().filter(|r| r.violation).count() as u64
    }

    /// Step CSV with a fixed column order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for i in 0..self.n_x {
            out.push_str(&format!(",x{i}"));
        }
        for i in 0..self.n_u {
            out.push_str(&format!(",u{i}"));
        }
        out.push_str(
            ",h_val,violation,learning,beta,slack,cost_increment,epoch_scale,m_s,buffer_prob,delta_l,fallback\n",
        );
        for r in &self.steps {
            out.push_str(&r.t.to_string());
            for v in &r.x {
                out.push_str(&format!(",{v}"));
            }
            for v in &r.u {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(
                ",{},{},{},{},{},{},{},{},{},{},{}\n",
                r.h_val,
                r.violation as u8,
                r.learning as u8,
                r.beta,
                r.slack,
                r.cost_increment,
                r.epoch_scale,
                r.m_s,
                r.buffer_prob,
                r.delta_l,
                r.fallback as u8
            ));
        }
        out
    }

    /// Cycle CSV (one row per LPES update).
    pub fn cycles_to_csv(&self) -> String {
        let mut out = String::from("update_step,s_max,gamma_max,gamma_mean,gp_lml,train_size\n");
        for c in &self.cycles {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.update_step, c.s_max, c.gamma_max, c.gamma_mean, c.gp_lml, c.train_size
            ));
        }
        out
    }

    /// Parse a step CSV produced by [`RunLog::to_csv`]. Cycle rows are not
    /// part of this format.
    pub fn from_csv(text: &str) -> Result<RunLog> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Parse("first column must be t".into()));
        }
        let n_x = cols
            .iter()
            .filter(|c| c.starts_with('x') && c[1..].parse::<usize>().is_ok())
            .count();
        let n_u = cols
            .iter()
            .filter(|c| c.starts_with('u') && c[1..].parse::<usize>().is_ok())
            .count();
        let expected = 1 + n_x + n_u + 11;
        if cols.len() != expected {
            return Err(Error::Parse(format!(
                "expected {expected} columns, found {}",
                cols.len()
            )));
        }
        let mut steps = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != expected {
                return Err(Error::Parse(format!("row {lineno}: wrong field count")));
            }
            let parse_f64 = |s: &str, what: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {lineno}: bad {what} `{s}`")))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("row {lineno}: non-finite {what}")));
                }
                Ok(v)
            };
            let parse_flag = |s: &str, what: &str| -> Result<bool> {
                match s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(Error::Parse(format!("row {lineno}: bad {what} `{s}`"))),
                }
            };
            let t: u64 = f[0]
                .parse()
                .map_err(|_| Error::Parse(format!("row {lineno}: bad t `{}`", f[0])))?;
            let mut idx = 1;
            let mut x = Vec::with_capacity(n_x);
            for _ in 0..n_x {
                x.push(parse_f64(f[idx], "state")?);
                idx += 1;
            }
            let mut u = Vec::with_capacity(n_u);
            for _ in 0..n_u {
                u.push(parse_f64(f[idx], "input")?);
                idx += 1;
            }
            let row = StepRow {
                t,
                x,
                u,
                h_val: parse_f64(f[idx], "h_val")?,
                violation: parse_flag(f[idx + 1], "violation")?,
                learning: parse_flag(f[idx + 2], "learning")?,
                beta: parse_f64(f[idx + 3], "beta")?,
                slack: parse_f64(f[idx + 4], "slack")?,
                cost_increment: parse_f64(f[idx + 5], "cost_increment")?,
                epoch_scale: parse_f64(f[idx + 6], "epoch_scale")?,
                m_s: parse_f64(f[idx + 7], "m_s")?,
                buffer_prob: parse_f64(f[idx + 8], "buffer_prob")?,
                delta_l: parse_f64(f[idx + 9], "delta_l")?,
                fallback: parse_flag(f[idx + 10], "fallback")?,
            };
            steps.push(row);
        }
        Ok(RunLog { n_x, n_u, steps, cycles: Vec::new() })
    }
}

/// The DC-DC converter benchmark: nominal model, weights, constraints, five
/// disturbance epochs from severe to mild, and the adaptive-loop parameters.
///
/// Interior epoch scales and the initial state are engineering choices; the
/// tightening uses the exact support function and the terminal constraint is
/// cost-only, since a boundary-anchored chance row admits no usable invariant
/// terminal polytope (see [`TerminalMode`]).
pub fn make_dcdc_benchmark(target_delta: f64) -> Result<RunConfig> {
    let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
    let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
    let g = Mat::identity(2, 2);
    let base_support = IntervalBox::symmetric(Vec64::from_element(2, 0.14))?;
    let sys = UncertainLinearSystem::new(a.clone(), b.clone(), g, 0.05, base_support.clone())?;

    let q = Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]);
    let r = Mat::identity(1, 1);
    let p = riccati::solve_dare(&a, &b, &q, &r, 1e-13, 100_000)?;

    let total_steps: u64 = 30_000;
    let epoch_len = total_steps / 5;
    let scales = [2.5, 2.0, 1.5, 1.0, 0.5];
    let epochs = scales
        .iter()
        .enumerate()
        .map(|(i, &scale)| Epoch { start_step: i as u64 * epoch_len, scale })
        .collect();
    let schedule = DisturbanceSchedule::new(epochs, base_support)?;

    Ok(RunConfig {
        total_steps,
        seed: 1,
        target_delta,
        sys,
        x_constraint: PolytopeConstraint::new(
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Vec64::zeros(1),
        )?,
        u_constraint: PolytopeConstraint::symmetric_box(&Vec64::from_element(1, 0.2))?,
        chance_row: 0,
        mpc: MpcConfig {
            horizon_n: 10,
            q_mat: q,
            r_mat: r,
            p_mat: p,
            rho_slack: 1e6,
            tightening_mode: TighteningMode::ExactSupport,
            terminal_mode: TerminalMode::CostOnly,
            input_tightening_cap_frac: 0.5,
            ancillary_q: Some(Mat::identity(2, 2)),
            ancillary_r: Some(Mat::identity(1, 1)),
        },
        engine: RiskEngineConfig {
            n_cand: 500,
            k_crit: 10,
            kappa_ucb: 2.0,
            update_period_m: 50,
            n_seed_train: 50,
            support_window: 100,
            support_inflation: 1.25,
            support_floor_frac: 0.1,
            support_stat: SupportStat::MeanAbs,
            ..Default::default()
        },
        regulator: RegulatorConfig::with_delta(target_delta),
        schedule,
        x0: Vec64::from_column_slice(&[-1.0, 0.0]),
        time_varying_plant: false,
    })
}

/// Rescale a config to a different length, stretching the epoch boundaries
/// proportionally.
pub fn with_total_steps(mut cfg: RunConfig, total_steps: u64) -> Result<RunConfig> {
    let old = cfg.total_steps;
    let epochs: Vec<Epoch> = cfg
        .schedule
        .epochs()
        .iter()
        .map(|e| Epoch {
            start_step: e.start_step * total_steps / old.max(1),
            scale: e.scale,
        })
        .collect();
    cfg.schedule = DisturbanceSchedule::new(epochs, cfg.schedule.base_support().clone())?;
    cfg.total_steps = total_steps;
    Ok(cfg)
}

/// Run the full adaptive controller.
pub fn run(cfg: &RunConfig) -> Result<RunLog> {
    run_variant(cfg, ControllerVariant::Raar)
}

/// Run the closed loop under the selected controller variant.
///
/// Single-threaded and fully deterministic: identical configs and seeds
/// produce byte-identical logs.
pub fn run_variant(cfg: &RunConfig, variant: ControllerVariant) -> Result<RunLog> {
    cfg.validate()?;
    cfg.check_startup_feasible()?;

    let sys = &cfg.sys;
    let n_x = sys.n_x();
    let horizon = cfg.mpc.horizon_n;
    let beta0 = cfg.regulator.beta_bar;

    let anc = design_ancillary(sys, &cfg.mpc)?;
    let term = design_terminal(sys, &cfg.mpc, &anc, &cfg.x_constraint, &cfg.u_constraint, beta0)?;
    let k_e = anc.k_e.clone();
    let mut mpc = TubeMpc::new(
        sys,
        cfg.mpc.clone(),
        anc.clone(),
        term,
        cfg.x_constraint.clone(),
        cfg.u_constraint.clone(),
        QpSettings::default(),
    )?;

    let realization = sample_true_realization(sys, cfg.seed);
    let mut rng_plant = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut rng_engine = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xC2B2_AE3D_27D4_EB4F);

    let mut engine = RiskEngine::new(cfg.engine.clone(), sys)?;
    let mut regulator = RegulatorState::new(&cfg.regulator);
    let chance_row = cfg.x_constraint.row(cfg.chance_row);
    let chance_bound = cfg.x_constraint.c_vec()[cfg.chance_row];

    let mut lpes = LpesSupport::zeros(horizon, n_x);
    let mut x = cfg.x0.clone();
    let mut plan = mpc.build_and_solve(&x, &lpes, beta0, None)?;

    match variant {
        ControllerVariant::FixedWorstCase => {
            // Brute-force worst-case envelope at the maximum epoch scale.
            let worst_support = cfg.schedule.base_support().scaled(cfg.schedule.max_scale());
            let mut s = vec![Vec64::zeros(n_x); horizon];
            for _ in 0..500 {
                let d_seq: Vec<Vec64> =
                    (0..horizon).map(|_| worst_support.sample(&mut rng_engine)).collect();
                let ab_seq: Vec<(Mat, Mat)> = (0..horizon)
                    .map(|_| sample_matrices_uniform(sys, &mut rng_engine))
                    .collect();
                let zeta = crate::criticality::UncertaintyScenario { d_seq, ab_seq };
                let traj = crate::criticality::simulate_error(&zeta, &plan, &anc, sys)?;
                for k in 0..horizon {
                    for i in 0..n_x {
                        s[k][i] = s[k][i].max(traj[k][i].abs());
                    }
                }
            }
            lpes = LpesSupport::new(s, 0)?;
        }
        _ => {
            engine.bootstrap(sys, &cfg.schedule, &plan, &anc, &mut rng_engine)?;
        }
    }

    let mut steps = Vec::with_capacity(cfg.total_steps as usize);
    let mut cycles = Vec::new();

    for t in 0..cfg.total_steps {
        if variant != ControllerVariant::FixedWorstCase && t % cfg.engine.update_period_m == 0 {
            let (new_lpes, diag) =
                engine.update_lpes(&plan, sys, &cfg.schedule, &anc, t, &mut rng_engine)?;
            lpes = new_lpes;
            cycles.push(CycleRow {
                update_step: diag.update_step,
                s_max: diag.s_max,
                gamma_max: diag
                    .selected_gammas
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
                gamma_mean: diag.selected_gammas.iter().sum::<f64>()
                    / diag.selected_gammas.len().max(1) as f64,
                gp_lml: diag.gp_lml,
                train_size: diag.train_size,
            });
        }

        let beta_used = match variant {
            ControllerVariant::FixedWorstCase => beta0,
            _ => regulator.beta(),
        };
        plan = mpc.build_and_solve(&x, &lpes, beta_used, Some(&plan))?;
        let u = control_action(&plan, &x, &k_e);

        let d = sample_disturbance(&cfg.schedule, t, &mut rng_plant);
        let real_step;
        let real = if cfg.time_varying_plant {
            let (a_t, b_t) = sample_matrices_uniform(sys, &mut rng_plant);
            real_step = TrueRealization { a_true: a_t, b_true: b_t, rng_seed: cfg.seed };
            &real_step
        } else {
            &realization
        };
        let x_next = step_true_plant(real, sys, &x, &u, &d)?;
        engine.observe_disturbance(&d);

        let h_val = chance_row.dot(&x_next) - chance_bound;
        let outcome = match variant {
            ControllerVariant::Raar | ControllerVariant::FixedWorstCase => {
                regulator.update(&cfg.regulator, h_val)
            }
            ControllerVariant::NaiveSa => regulator.update_naive(&cfg.regulator, h_val),
        };

        let cost_increment = (x.transpose() * &cfg.mpc.q_mat * &x)[(0, 0)]
            + (u.transpose() * &cfg.mpc.r_mat * &u)[(0, 0)];
        steps.push(StepRow {
            t,
            x: x.iter().cloned().collect(),
            u: u.iter().cloned().collect(),
            h_val,
            violation: outcome.violation,
            learning: outcome.learning,
            beta: beta_used,
            slack: plan.slack,
            cost_increment,
            epoch_scale: cfg.schedule.active_scale(t),
            m_s: outcome.m_s,
            buffer_prob: outcome.buffer_prob,
            delta_l: outcome.delta_l,
            fallback: plan.fallback,
        });

        x = x_next;
    }

    Ok(RunLog { n_x, n_u: sys.n_u(), steps, cycles })
}

/// Summary statistics over a log.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Metrics {
    pub empirical_risk: f64,
    pub avg_cost: f64,
    pub per_epoch_risk: Vec<f64>,
    pub counted_steps: u64,
    pub violations: u64,
    pub fallback_steps: u64,
    pub slack_steps: u64,
}

/// Post-burn-in empirical risk and average stage cost, plus per-epoch risks
/// computed over each epoch's post-transient span (the first tenth of every
/// epoch is treated as its adaptation transient).
pub fn metrics(log: &RunLog, burn_in: u64, schedule: &DisturbanceSchedule) -> Result<Metrics> {
    let total = log.steps.len() as u64;
    if burn_in >= total {
        return Err(Error::InvalidArgument("burn-in exceeds run length".into()));
    }
    let mut violations = 0u64;
    let mut counted = 0u64;
    let mut cost_sum = 0.0;
    let mut fallback_steps = 0u64;
    let mut slack_steps = 0u64;
    for r in &log.steps {
        if r.fallback {
            fallback_steps += 1;
        }
        if r.slack > 0.0 {
            slack_steps += 1;
        }
        if r.t < burn_in {
            continue;
        }
        counted += 1;
        cost_sum += r.cost_increment;
        if r.violation {
            violations += 1;
        }
    }

    let epochs = schedule.epochs();
    let mut per_epoch_risk = Vec::with_capacity(epochs.len());
    for (i, e) in epochs.iter().enumerate() {
        let end = epochs.get(i + 1).map(|n| n.start_step).unwrap_or(total);
        let span = end.saturating_sub(e.start_step);
        let transient = e.start_step + span / 10;
        let mut v = 0u64;
        let mut c = 0u64;
        for r in &log.steps {
            if r.t >= transient && r.t < end {
                c += 1;
                if r.violation {
                    v += 1;
                }
            }
        }
        per_epoch_risk.push(if c == 0 { 0.0 } else { v as f64 / c as f64 });
    }

    Ok(Metrics {
        empirical_risk: violations as f64 / counted.max(1) as f64,
        avg_cost: cost_sum / counted.max(1) as f64,
        per_epoch_risk,
        counted_steps: counted,
        violations,
        fallback_steps,
        slack_steps,
    })
}

/// Default burn-in: the first tenth of the run.
pub fn default_burn_in(total_steps: u64) -> u64 {
    total_steps / 10
}
