//! The EKI/LEKI iteration engine.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    error_matrix_r, localized_pair, max_error, misfit, obs_ratio, reg_ratio, rmse, scaled_misfit,
    MetricsRow,
};
use crate::ensemble::{all_finite, compute_stats, max_abs, norms, Ensemble, EnsembleStats};
use crate::error::{Error, Result};
use crate::localization::{default_fd_step, LocalizationScheme};
use crate::models::{finite_difference_jacobian, ForwardModel};

/// Additive inflation with `λ_t = σ/(t+1)²`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InflationConfig {
    pub sigma: f64,
}

impl InflationConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::config(format!("inflation sigma must be nonnegative, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn lambda_at(&self, t: f64) -> f64 {
        lambda_at(self, t)
    }
}

/// `σ/(t+1)²`.
pub fn lambda_at(inflation: &InflationConfig, t: f64) -> f64 {
    inflation.sigma / ((t + 1.0) * (t + 1.0))
}

/// Whitened deviations `ξ^j = ½ D⁻¹(u^j - ū)` with `D = diag(C^uu)`.
///
/// Components whose variance is at most `1e-14 ‖C^uu‖_max` are set to zero.
pub fn inflation_vectors(ensemble: &Ensemble, stats: &EnsembleStats) -> DMatrix<f64> {
    let eps = 1e-14 * max_abs(&stats.cuu);
    let mut xi = ensemble.members().clone();
    for i in 0..xi.nrows() {
        let d = stats.cuu[(i, i)];
        let mean = stats.mean_u[i];
        let mut row = xi.row_mut(i);
        if d <= eps || d == 0.0 {
            row.fill(0.0);
        } else {
            row.apply(|v| *v = 0.5 * (*v - mean) / d);
        }
    }
    xi
}

/// `u^j + C^up (C^pp + I)⁻¹ (y - G(u^j))`.
pub fn discrete_update(ensemble: &Ensemble, stats: &EnsembleStats, y: &DVector<f64>) -> Result<Ensemble> {
    check_data(stats, y)?;
    let dy = stats.output_dim();
    let chol = (stats.cpp.clone() + DMatrix::identity(dy, dy))
        .cholesky()
        .ok_or_else(|| Error::numeric("C^pp + I is not positive definite"))?;
    let gain = chol.solve(&stats.cup.transpose()).transpose();
    let innovation = DMatrix::from_fn(dy, ensemble.size(), |i, j| y[i] - stats.outputs[(i, j)]);
    Ensemble::new(ensemble.members() + gain * innovation)
}

fn check_data(stats: &EnsembleStats, y: &DVector<f64>) -> Result<()> {
    if y.len() != stats.output_dim() {
        return Err(Error::config(format!(
            "data has {} entries but the model has {} outputs",
            y.len(),
            stats.output_dim()
        )));
    }
    Ok(())
}

/// How the Euler step size is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepPolicy {
    Fixed { dt: f64 },
    /// Starts at `initial_dt`; once the scaled misfit falls below a stage
    /// threshold, that stage's `dt` is used from then on.
    MisfitThreshold { initial_dt: f64, stages: Vec<(f64, f64)> },
}

impl StepPolicy {
    /// 0.01, then 0.1 below scaled misfit 8, then 0.5 below 6.
    pub fn resistivity_schedule() -> Self {
        StepPolicy::MisfitThreshold {
            initial_dt: 0.01,
            stages: vec![(8.0, 0.1), (6.0, 0.5)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |dt: f64| {
            if dt > 0.0 && dt.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("step size must be positive, got {dt}")))
            }
        };
        match self {
            StepPolicy::Fixed { dt } => positive(*dt),
            StepPolicy::MisfitThreshold { initial_dt, stages } => {
                positive(*initial_dt)?;
                for (_, dt) in stages {
                    positive(*dt)?;
                }
                if stages.windows(2).any(|w| !(w[1].0 < w[0].0)) {
                    return Err(Error::config("step thresholds must be strictly decreasing"));
                }
                Ok(())
            }
        }
    }

    /// The step for a policy stage (0 = initial).
    pub fn dt(&self, stage: usize) -> f64 {
        match self {
            StepPolicy::Fixed { dt } => *dt,
            StepPolicy::MisfitThreshold { initial_dt, stages } => {
                if stage == 0 {
                    *initial_dt
                } else {
                    stages[stage - 1].1
                }
            }
        }
    }

    /// Advances `stage` past every threshold the scaled misfit is below.
    pub fn advance(&self, stage: usize, scaled: f64) -> usize {
        match self {
            StepPolicy::Fixed { .. } => 0,
            StepPolicy::MisfitThreshold { stages, .. } => {
                let mut s = stage;
                while s < stages.len() && scaled < stages[s].0 {
                    s += 1;
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingRule {
    pub max_iterations: usize,
    #[serde(default)]
    pub target_scaled_misfit: Option<f64>,
    #[serde(default = "default_true")]
    pub fail_on_nonfinite: bool,
}

fn default_true() -> bool {
    true
}

impl StoppingRule {
    pub fn iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            target_scaled_misfit: None,
            fail_on_nonfinite: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        if let Some(t) = self.target_scaled_misfit {
            if !(t > 0.0) {
                return Err(Error::config(format!("target scaled misfit must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitCondition {
    Running,
    TargetReached,
    MaxIterations,
    Failed,
}

impl ExitCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitCondition::Running => "running",
            ExitCondition::TargetReached => "target-reached",
            ExitCondition::MaxIterations => "max-iterations",
            ExitCondition::Failed => "failed",
        }
    }
}

impl std::fmt::Display for ExitCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct IterationState {
    pub ensemble: Ensemble,
    pub t: f64,
    pub iter: usize,
    pub exit: ExitCondition,
}

impl IterationState {
    pub fn new(ensemble: Ensemble) -> Self {
        Self {
            ensemble,
            t: 0.0,
            iter: 0,
            exit: ExitCondition::Running,
        }
    }
}

/// `G(u^j)` for every member, evaluated in parallel; column `j` is member `j`.
pub fn evaluate_ensemble(model: &dyn ForwardModel, ensemble: &Ensemble) -> Result<DMatrix<f64>> {
    let columns = (0..ensemble.size())
        .into_par_iter()
        .map(|j| model.evaluate(&ensemble.member(j)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = columns.iter().find(|c| c.len() != model.output_dim()) {
        return Err(Error::config(format!(
            "model returned {} outputs, declared {}",
            c.len(),
            model.output_dim()
        )));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// The drift-plus-inflation increment for precomputed statistics.
fn euler_increment(
    ensemble: &Ensemble,
    stats: &EnsembleStats,
    scheme: Option<&LocalizationScheme>,
    y: &DVector<f64>,
    lambda: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    check_data(stats, y)?;
    let cup = match scheme {
        Some(s) => crate::localization::localize_cup(stats, s)?,
        None => stats.cup.clone(),
    };
    let resid = DMatrix::from_fn(y.len(), ensemble.size(), |i, j| stats.outputs[(i, j)] - y[i]);
    let mut inc = cup * resid * (-dt);
    if lambda > 0.0 {
        inc += inflation_vectors(ensemble, stats) * (dt * lambda);
    }
    Ok(inc)
}

/// One explicit Euler step of the (localized) EKI flow with inflation.
pub fn euler_step(
    state: &IterationState,
    model: &dyn ForwardModel,
    scheme: Option<&LocalizationScheme>,
    y: &DVector<f64>,
    inflation: &InflationConfig,
    dt: f64,
) -> Result<IterationState> {
    if !(dt > 0.0) {
        return Err(Error::config(format!("step size must be positive, got {dt}")));
    }
    let outputs = evaluate_ensemble(model, &state.ensemble)?;
    let stats = compute_stats(&state.ensemble, &outputs)?;
    let inc = euler_increment(&state.ensemble, &stats, scheme, y, inflation.lambda_at(state.t), dt)?;
    Ok(IterationState {
        ensemble: Ensemble::new(state.ensemble.members() + inc)?,
        t: state.t + dt,
        iter: state.iter + 1,
        exit: ExitCondition::Running,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticsLevel {
    #[default]
    Basic,
    Full,
}

/// Everything a run needs besides the model, taper and data.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub inflation: InflationConfig,
    pub policy: StepPolicy,
    pub stop: StoppingRule,
    pub diagnostics: DiagnosticsLevel,
    /// Reference parameter for the RMSE column.
    pub truth: Option<DVector<f64>>,
    /// Data standard deviations for the scaled misfit.
    pub stds: Option<DVector<f64>>,
    /// Leading outputs excluded from the data metrics, e.g. the
    /// regularization block of a Tikhonov extension.
    pub data_offset: usize,
}

impl RunConfig {
    pub fn new(policy: StepPolicy, stop: StoppingRule) -> Self {
        Self {
            inflation: InflationConfig::default(),
            policy,
            stop,
            diagnostics: DiagnosticsLevel::Basic,
            truth: None,
            stds: None,
            data_offset: 0,
        }
    }
}

/// The time series of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Row 0 is the initial ensemble, then one row per step.
    pub rows: Vec<MetricsRow>,
    pub exit: ExitCondition,
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Post-step parameter repair, e.g. a resistivity floor.
pub type Projection<'a> = &'a (dyn Fn(&mut DMatrix<f64>) + Sync);
/// Receives every recorded row together with the ensemble it describes.
pub type Recorder<'a> = &'a mut dyn FnMut(&MetricsRow, &Ensemble);

#[derive(Default)]
pub struct RunHooks<'a> {
    pub projection: Option<Projection<'a>>,
    pub recorder: Option<Recorder<'a>>,
}

/// Sets every entry below `floor` to `floor`.
pub fn clamp_below(floor: f64) -> impl Fn(&mut DMatrix<f64>) + Sync {
    move |m: &mut DMatrix<f64>| m.apply(|v| *v = v.max(floor))
}

struct Snapshot {
    stats: EnsembleStats,
    row: MetricsRow,
    scaled: f64,
}

fn snapshot(
    state: &IterationState,
    model: &dyn ForwardModel,
    scheme: Option<&LocalizationScheme>,
    y: &DVector<f64>,
    cfg: &RunConfig,
) -> Result<Snapshot> {
    let outputs = evaluate_ensemble(model, &state.ensemble)?;
    let stats = compute_stats(&state.ensemble, &outputs)?;
    let off = cfg.data_offset;
    let n = y.len() - off;
    let y_data = y.rows(off, n).into_owned();
    let at_mean = model.evaluate(&stats.mean_u)?;
    if !at_mean.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("model output at the ensemble mean is not finite"));
    }
    let pred_mean = at_mean.rows(off, n).into_owned();
    let mean_pred = stats.mean_g.rows(off, n).into_owned();
    let scaled_row = match &cfg.stds {
        Some(s) => Some(scaled_misfit(&y_data, &mean_pred, s)?),
        None => None,
    };
    let scaled = match scaled_row {
        Some(v) => v,
        None => misfit(&y_data, &mean_pred)?,
    };
    let diag = stats.cuu.diagonal();
    let mut row = MetricsRow {
        iter: state.iter,
        t: state.t,
        misfit: misfit(&y_data, &pred_mean)?,
        max_error: max_error(&y_data, &pred_mean)?,
        rmse: match &cfg.truth {
            Some(tr) => Some(rmse(tr, &stats.mean_u)?),
            None => None,
        },
        scaled_misfit: scaled_row,
        trace_cuu: diag.sum(),
        max_diag: diag.max(),
        min_diag: diag.min(),
        r_opnorm: None,
        r_onenorm: None,
        obs_ratio: None,
        reg_ratio: None,
    };
    if cfg.diagnostics == DiagnosticsLevel::Full {
        let jac = match model.jacobian(&stats.mean_u) {
            Some(j) => j,
            None => finite_difference_jacobian(model, &stats.mean_u, default_fd_step(&stats.mean_u))?,
        };
        let r = error_matrix_r(&stats, scheme, &jac)?;
        let rn = norms(&r);
        row.r_opnorm = Some(rn.op_norm);
        row.r_onenorm = Some(rn.one_norm);
        let (_, cup) = localized_pair(&stats, scheme)?;
        row.obs_ratio = Some(obs_ratio(&stats, &cup)?);
        row.reg_ratio = Some(reg_ratio(&stats, &cup)?);
    }
    Ok(Snapshot {
        stats,
        row,
        scaled,
    })
}

/// Iterates [`euler_step`] under the step policy and stopping rule.
///
/// Failures (non-finite states, model errors) end the run with
/// [`ExitCondition::Failed`]; only configuration errors are returned as `Err`.
pub fn run(
    initial: Ensemble,
    model: &dyn ForwardModel,
    scheme: Option<&LocalizationScheme>,
    y: &DVector<f64>,
    cfg: &RunConfig,
    mut hooks: RunHooks<'_>,
) -> Result<(IterationState, RunRecord)> {
    cfg.policy.validate()?;
    cfg.stop.validate()?;
    if y.len() != model.output_dim() || cfg.data_offset >= y.len() {
        return Err(Error::config(format!(
            "data has {} entries, model has {} outputs (offset {})",
            y.len(),
            model.output_dim(),
            cfg.data_offset
        )));
    }
    if initial.param_dim() != model.param_dim() {
        return Err(Error::config(format!(
            "ensemble dimension {} does not match model dimension {}",
            initial.param_dim(),
            model.param_dim()
        )));
    }
    if let Some(s) = scheme {
        if s.psi.nrows() != model.param_dim() {
            return Err(Error::config("taper dimension does not match the model"));
        }
    }

    let mut state = IterationState::new(initial);
    let mut record = RunRecord {
        rows: Vec::new(),
        exit: ExitCondition::Running,
        failure: None,
    };
    let fail = |state: &mut IterationState, record: &mut RunRecord, e: Error| {
        state.exit = ExitCondition::Failed;
        record.exit = ExitCondition::Failed;
        record.failure = Some(e.to_string());
    };

    let mut snap = match snapshot(&state, model, scheme, y, cfg) {
        Ok(s) => s,
        Err(e @ Error::Config(_)) => return Err(e),
        Err(e) => {
            fail(&mut state, &mut record, e);
            return Ok((state, record));
        }
    };
    let mut stage = cfg.policy.advance(0, snap.scaled);
    emit(&mut record, &mut hooks, snap.row.clone(), &state.ensemble);

    while state.iter < cfg.stop.max_iterations {
        let dt = cfg.policy.dt(stage);
        let lambda = cfg.inflation.lambda_at(state.t);
        let inc = match euler_increment(&state.ensemble, &snap.stats, scheme, y, lambda, dt) {
            Ok(inc) => inc,
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                fail(&mut state, &mut record, e);
                return Ok((state, record));
            }
        };
        let mut members = state.ensemble.members() + inc;
        if let Some(p) = hooks.projection {
            p(&mut members);
        }
        if cfg.stop.fail_on_nonfinite && !all_finite(&members) {
            fail(&mut state, &mut record, Error::numeric("ensemble became non-finite"));
            return Ok((state, record));
        }
        let next = match Ensemble::new(members) {
            Ok(e) => e,
            Err(e) => {
                fail(&mut state, &mut record, Error::numeric(e.to_string()));
                return Ok((state, record));
            }
        };
        state = IterationState {
            ensemble: next,
            t: state.t + dt,
            iter: state.iter + 1,
            exit: ExitCondition::Running,
        };
        snap = match snapshot(&state, model, scheme, y, cfg) {
            Ok(s) => s,
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                fail(&mut state, &mut record, e);
                return Ok((state, record));
            }
        };
        emit(&mut record, &mut hooks, snap.row.clone(), &state.ensemble);
        stage = cfg.policy.advance(stage, snap.scaled);
        if let Some(target) = cfg.stop.target_scaled_misfit {
            if snap.scaled < target {
                state.exit = ExitCondition::TargetReached;
                record.exit = ExitCondition::TargetReached;
                return Ok((state, record));
            }
        }
    }
    state.exit = ExitCondition::MaxIterations;
    record.exit = ExitCondition::MaxIterations;
    Ok((state, record))
}

fn emit(record: &mut RunRecord, hooks: &mut RunHooks<'_>, row: MetricsRow, ensemble: &Ensemble) {
    if let Some(rec) = hooks.recorder.as_mut() {
        rec(&row, ensemble);
    }
    record.rows.push(row);
}
