//! Text configuration for experiments: a TOML schema mirroring [`RunConfig`],
//! dotted-path overrides, and validation with field-level diagnostics.

use crate::error::{Error, Result};
use crate::regulator::RegulatorConfig;
use crate::riccati;
use crate::risk_engine::{RiskEngineConfig, SupportStat};
use crate::simulator::RunConfig;
use crate::system::{
    DisturbanceSchedule, Epoch, IntervalBox, PolytopeConstraint, UncertainLinearSystem,
};
use crate::tube::{MpcConfig, TerminalMode, TighteningMode};
use crate::{Mat, Vec64};
use serde::{Deserialize, Serialize};

/// One-line-per-field description of the config schema, emitted next to
/// sweep outputs so the CSV columns and file format are self-documenting.
pub const CONFIG_SCHEMA: &str = "\
total_steps: integer >= 1; control steps to simulate
seed: integer; master seed, all randomness derives from it
target_delta: float in (0,1); target violation rate
time_varying_plant: bool; resample (A,B) each step instead of one fixed draw
x0: [float; n_x]; initial state
chance_row: integer; index of the chance-constrained state row
system.a_nom: n_x rows of n_x floats; nominal A
system.b_nom: n_x rows of n_u floats; nominal B
system.g: n_x rows of n_d floats; disturbance input matrix
system.delta_rel: float in [0,1); relative parametric half-width
constraints.x_rows / x_bounds: state polytope C_x, c_x (c_x >= 0)
constraints.u_rows / u_bounds: input polytope C_u, c_u (c_u >= 0)
mpc.horizon_n: integer >= 1
mpc.q / mpc.r: cost matrices (Q PSD, R PD)
mpc.p: terminal cost matrix, or the string \"dare\"
mpc.rho_slack: float >= 1e4 * trace(Q)
mpc.tightening_mode: \"paper_l1\" | \"exact_support\"
mpc.terminal_mode: \"maximal_admissible\" | \"origin\" | \"cost_only\"
mpc.input_tightening_cap_frac: float in [0,1]
engine.n_cand / k_crit / kappa_ucb / update_period_m / n_seed_train
engine.support_window / support_inflation / support_floor_frac
engine.support_stat: \"max_abs\" | \"mean_abs\"
engine.train_cap / reopt_growth / opt_restarts
regulator.c_m / alpha_rate / gamma_rate / beta_bar / beta_max / window_w
schedule.base_half: [float; n_d]; base disturbance half-widths
schedule.epochs: list of { start_step, scale }, first start_step = 0
";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemFile {
    a_nom: Vec<Vec<f64>>,
    b_nom: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    delta_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstraintsFile {
    x_rows: Vec<Vec<f64>>,
    x_bounds: Vec<f64>,
    u_rows: Vec<Vec<f64>>,
    u_bounds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TerminalCostFile {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MpcFile {
    horizon_n: usize,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    p: TerminalCostFile,
    rho_slack: f64,
    tightening_mode: String,
    terminal_mode: String,
    #[serde(default = "default_cap_frac")]
    input_tightening_cap_frac: f64,
    #[serde(default)]
    ancillary_q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    ancillary_r: Option<Vec<Vec<f64>>>,
}

fn default_cap_frac() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EngineFile {
    n_cand: usize,
    k_crit: usize,
    kappa_ucb: f64,
    update_period_m: u64,
    n_seed_train: usize,
    support_window: usize,
    support_inflation: f64,
    support_floor_frac: f64,
    support_stat: String,
    #[serde(default = "default_train_cap")]
    train_cap: usize,
    #[serde(default = "default_reopt_growth")]
    reopt_growth: f64,
    #[serde(default = "default_opt_restarts")]
    opt_restarts: usize,
}

fn default_train_cap() -> usize {
    512
}

fn default_reopt_growth() -> f64 {
    1.25
}

fn default_opt_restarts() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegulatorFile {
    c_m: f64,
    alpha_rate: f64,
    gamma_rate: f64,
    beta_bar: f64,
    beta_max: f64,
    window_w: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpochFile {
    start_step: u64,
    scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleFile {
    base_half: Vec<f64>,
    epochs: Vec<EpochFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigFile {
    total_steps: u64,
    seed: u64,
    target_delta: f64,
    #[serde(default)]
    time_varying_plant: bool,
    x0: Vec<f64>,
    #[serde(default)]
    chance_row: usize,
    system: SystemFile,
    constraints: ConstraintsFile,
    mpc: MpcFile,
    engine: EngineFile,
    regulator: RegulatorFile,
    schedule: ScheduleFile,
}

fn mat_from_rows(rows: &[Vec<f64>], field: &str) -> Result<Mat> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::config(field, "matrix must be non-empty"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config(field, "ragged matrix rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "matrix entries must be finite"));
    }
    let mut m = Mat::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn vec_from(field_vals: &[f64], field: &str) -> Result<Vec64> {
    if field_vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "entries must be finite"));
    }
    Ok(Vec64::from_column_slice(field_vals))
}

impl ConfigFile {
    fn build(&self) -> Result<RunConfig> {
        let a = mat_from_rows(&self.system.a_nom, "system.a_nom")?;
        let b = mat_from_rows(&self.system.b_nom, "system.b_nom")?;
        let g = mat_from_rows(&self.system.g, "system.g")?;
        let base_half = vec_from(&self.schedule.base_half, "schedule.base_half")?;
        if base_half.iter().any(|&v| v < 0.0) {
            return Err(Error::config("schedule.base_half", "half-widths must be >= 0"));
        }
        let base_support = IntervalBox::symmetric(base_half)
            .map_err(|e| Error::config("schedule.base_half", e.to_string()))?;
        let sys = UncertainLinearSystem::new(a.clone(), b.clone(), g, self.system.delta_rel, base_support.clone())
            .map_err(|e| Error::config("system", e.to_string()))?;

        let x_constraint = PolytopeConstraint::new(
            mat_from_rows(&self.constraints.x_rows, "constraints.x_rows")?,
            vec_from(&self.constraints.x_bounds, "constraints.x_bounds")?,
        )
        .map_err(|e| Error::config("constraints.x_rows", e.to_string()))?;
        let u_constraint = PolytopeConstraint::new(
            mat_from_rows(&self.constraints.u_rows, "constraints.u_rows")?,
            vec_from(&self.constraints.u_bounds, "constraints.u_bounds")?,
        )
        .map_err(|e| Error::config("constraints.u_rows", e.to_string()))?;

        let q = mat_from_rows(&self.mpc.q, "mpc.q")?;
        let r = mat_from_rows(&self.mpc.r, "mpc.r")?;
        let p = match &self.mpc.p {
            TerminalCostFile::Named(name) if name == "dare" => {
                riccati::solve_dare(&a, &b, &q, &r, 1e-13, 100_000)
                    .map_err(|e| Error::config("mpc.p", e.to_string()))?
            }
            TerminalCostFile::Named(other) => {
                return Err(Error::config("mpc.p", format!("unknown terminal cost `{other}`")));
            }
            TerminalCostFile::Matrix(rows) => mat_from_rows(rows, "mpc.p")?,
        };
        let tightening_mode = match self.mpc.tightening_mode.as_str() {
            "paper_l1" => TighteningMode::PaperL1,
            "exact_support" => TighteningMode::ExactSupport,
            other => {
                return Err(Error::config(
                    "mpc.tightening_mode",
                    format!("unknown mode `{other}` (expected paper_l1 or exact_support)"),
                ))
            }
        };
        let terminal_mode = match self.mpc.terminal_mode.as_str() {
            "maximal_admissible" => TerminalMode::MaximalAdmissible,
            "origin" => TerminalMode::Origin,
            "cost_only" => TerminalMode::CostOnly,
            other => {
                return Err(Error::config(
                    "mpc.terminal_mode",
                    format!("unknown mode `{other}`"),
                ))
            }
        };
        let support_stat = match self.engine.support_stat.as_str() {
            "max_abs" => SupportStat::MaxAbs,
            "mean_abs" => SupportStat::MeanAbs,
            other => {
                return Err(Error::config(
                    "engine.support_stat",
                    format!("unknown statistic `{other}`"),
                ))
            }
        };

        let epochs: Vec<Epoch> = self
            .schedule
            .epochs
            .iter()
            .map(|e| Epoch { start_step: e.start_step, scale: e.scale })
            .collect();
        let schedule = DisturbanceSchedule::new(epochs, base_support)
            .map_err(|e| Error::config("schedule.epochs", e.to_string()))?;

        let cfg = RunConfig {
            total_steps: self.total_steps,
            seed: self.seed,
            target_delta: self.target_delta,
            sys,
            x_constraint,
            u_constraint,
            chance_row: self.chance_row,
            mpc: MpcConfig {
                horizon_n: self.mpc.horizon_n,
                q_mat: q,
                r_mat: r,
                p_mat: p,
                rho_slack: self.mpc.rho_slack,
                tightening_mode,
                terminal_mode,
                input_tightening_cap_frac: self.mpc.input_tightening_cap_frac,
                ancillary_q: match &self.mpc.ancillary_q {
                    Some(rows) => Some(mat_from_rows(rows, "mpc.ancillary_q")?),
                    None => None,
                },
                ancillary_r: match &self.mpc.ancillary_r {
                    Some(rows) => Some(mat_from_rows(rows, "mpc.ancillary_r")?),
                    None => None,
                },
            },
            engine: RiskEngineConfig {
                n_cand: self.engine.n_cand,
                k_crit: self.engine.k_crit,
                kappa_ucb: self.engine.kappa_ucb,
                update_period_m: self.engine.update_period_m,
                n_seed_train: self.engine.n_seed_train,
                support_window: self.engine.support_window,
                support_inflation: self.engine.support_inflation,
                support_floor_frac: self.engine.support_floor_frac,
                support_stat,
                train_cap: self.engine.train_cap,
                reopt_growth: self.engine.reopt_growth,
                opt_restarts: self.engine.opt_restarts,
            },
            regulator: RegulatorConfig {
                delta: self.target_delta,
                c_m: self.regulator.c_m,
                alpha_rate: self.regulator.alpha_rate,
                gamma_rate: self.regulator.gamma_rate,
                beta_bar: self.regulator.beta_bar,
                beta_max: self.regulator.beta_max,
                window_w: self.regulator.window_w,
            },
            schedule,
            x0: vec_from(&self.x0, "x0")?,
            time_varying_plant: self.time_varying_plant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_run_config(cfg: &RunConfig) -> ConfigFile {
        let stat = match cfg.engine.support_stat {
            SupportStat::MaxAbs => "max_abs",
            SupportStat::MeanAbs => "mean_abs",
        };
        ConfigFile {
            total_steps: cfg.total_steps,
            seed: cfg.seed,
            target_delta: cfg.target_delta,
            time_varying_plant: cfg.time_varying_plant,
            x0: cfg.x0.iter().cloned().collect(),
            chance_row: cfg.chance_row,
            system: SystemFile {
                a_nom: mat_to_rows(cfg.sys.a_nom()),
                b_nom: mat_to_rows(cfg.sys.b_nom()),
                g: mat_to_rows(cfg.sys.g()),
                delta_rel: cfg.sys.delta_rel(),
            },
            constraints: ConstraintsFile {
                x_rows: mat_to_rows(cfg.x_constraint.c_mat()),
                x_bounds: cfg.x_constraint.c_vec().iter().cloned().collect(),
                u_rows: mat_to_rows(cfg.u_constraint.c_mat()),
                u_bounds: cfg.u_constraint.c_vec().iter().cloned().collect(),
            },
            mpc: MpcFile {
                horizon_n: cfg.mpc.horizon_n,
                q: mat_to_rows(&cfg.mpc.q_mat),
                r: mat_to_rows(&cfg.mpc.r_mat),
                p: TerminalCostFile::Matrix(mat_to_rows(&cfg.mpc.p_mat)),
                rho_slack: cfg.mpc.rho_slack,
                tightening_mode: match cfg.mpc.tightening_mode {
                    TighteningMode::PaperL1 => "paper_l1".into(),
                    TighteningMode::ExactSupport => "exact_support".into(),
                },
                terminal_mode: match cfg.mpc.terminal_mode {
                    TerminalMode::MaximalAdmissible => "maximal_admissible".into(),
                    TerminalMode::Origin => "origin".into(),
                    TerminalMode::CostOnly => "cost_only".into(),
                },
                input_tightening_cap_frac: cfg.mpc.input_tightening_cap_frac,
                ancillary_q: cfg.mpc.ancillary_q.as_ref().map(mat_to_rows),
                ancillary_r: cfg.mpc.ancillary_r.as_ref().map(mat_to_rows),
            },
            engine: EngineFile {
                n_cand: cfg.engine.n_cand,
                k_crit: cfg.engine.k_crit,
                kappa_ucb: cfg.engine.kappa_ucb,
                update_period_m: cfg.engine.update_period_m,
                n_seed_train: cfg.engine.n_seed_train,
                support_window: cfg.engine.support_window,
                support_inflation: cfg.engine.support_inflation,
                support_floor_frac: cfg.engine.support_floor_frac,
                support_stat: stat.into(),
                train_cap: cfg.engine.train_cap,
                reopt_growth: cfg.engine.reopt_growth,
                opt_restarts: cfg.engine.opt_restarts,
            },
            regulator: RegulatorFile {
                c_m: cfg.regulator.c_m,
                alpha_rate: cfg.regulator.alpha_rate,
                gamma_rate: cfg.regulator.gamma_rate,
                beta_bar: cfg.regulator.beta_bar,
                beta_max: cfg.regulator.beta_max,
                window_w: cfg.regulator.window_w,
            },
            schedule: ScheduleFile {
                base_half: cfg.schedule.base_support().upper().iter().cloned().collect(),
                epochs: cfg
                    .schedule
                    .epochs()
                    .iter()
                    .map(|e| EpochFile { start_step: e.start_step, scale: e.scale })
                    .collect(),
            },
        }
    }
}

/// Parse a TOML config into a validated [`RunConfig`].
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    file.build()
}

/// Apply `key.path=value` overrides onto a TOML document and parse the
/// result. Returns the config and the effective TOML text.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<(RunConfig, String)> {
    let mut doc: toml::Value =
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    for ov in overrides {
        apply_override(&mut doc, ov)?;
    }
    let effective =
        toml::to_string_pretty(&doc).map_err(|e| Error::Parse(format!("config: {e}")))?;
    let file: ConfigFile = doc
        .try_into()
        .map_err(|e| Error::Parse(format!("config: {e}")))?;
    Ok((file.build()?, effective))
}

/// Apply one `a.b.c=value` override. The value is parsed as TOML (numbers,
/// booleans, arrays, strings); a bare word falls back to a string.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{spec}` is not key=value")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Parse("override has an empty key".into()));
    }
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw_value}")) {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw_value.trim().to_string()),
    };
    let mut node = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Parse(format!("override `{path}`: parent is not a table")))?;
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override `{path}`: `{seg}` is not a table")))?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last segment")
}

/// Serialize a run configuration to canonical TOML (used for manifests and
/// for emitting the default benchmark config).
pub fn config_to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string_pretty(&ConfigFile::from_run_config(cfg))
        .map_err(|e| Error::Parse(format!("serialize: {e}")))
}
