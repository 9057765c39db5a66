//! Dose recommendation policies.
//!
//! [`rhc_recommend`] solves the one-move receding-horizon problem
//!
//! ```text
//! min_δu  γ·(ξ·q_hypo + q_hyper) + (p1/p10 · δu/δu_min)²
//! s.t.    |δu| ≤ max(δu_min, β·u_prev),  u_prev + δu ≥ 0
//! ```
//!
//! over the fasting predictions of the next `T` days with the new dose held
//! constant. [`soc_recommend`] is the threshold rule used in routine care.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{map_estimate_from, EstimatorSettings, ObservationLog};
use crate::fasting::{envelope, HorizonInsulin, ModelParams, PriorSpec, PREDICTION_FLOOR};
use crate::pk::{DoseEvent, DrugParams, Subject};
use crate::Minutes;

/// Clinical targets and receding-horizon hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TitrationConfig {
    /// Lower fasting target FBG_L (mg/dL).
    pub fbg_low: f64,
    /// Upper fasting target FBG_U (mg/dL).
    pub fbg_high: f64,
    /// Weight of the performance cost against regularization.
    pub gamma: f64,
    /// Weight of hypoglycemia against hyperglycemia.
    pub xi: f64,
    /// Envelope width in units of `p2`.
    pub alpha: f64,
    /// Prediction horizon in days.
    pub horizon_days: usize,
    /// Largest relative dose change per titration.
    pub beta: f64,
    /// Smallest dose change (U); also the candidate grid step.
    pub du_min: f64,
    /// Dose step of the threshold rule (U).
    pub soc_step: f64,
    pub titration_interval_days: u32,
    /// Readings inspected per titration.
    pub fbg_window: usize,
}

impl Default for TitrationConfig {
    fn default() -> Self {
        Self {
            fbg_low: 72.0,
            fbg_high: 90.0,
            gamma: 250.0,
            xi: 100.0,
            alpha: 1.65,
            horizon_days: 10,
            beta: 0.15,
            du_min: 1.0,
            soc_step: 2.0,
            titration_interval_days: 3,
            fbg_window: 3,
        }
    }
}

impl TitrationConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.fbg_low > 0.0 && self.fbg_low < self.fbg_high) {
            return fail(format!(
                "need 0 < fbg_low < fbg_high, got {} and {}",
                self.fbg_low, self.fbg_high
            ));
        }
        if !(self.gamma > 0.0 && self.xi > 0.0 && self.alpha > 0.0) {
            return fail("gamma, xi and alpha must be positive".into());
        }
        if self.horizon_days < 1 {
            return fail("horizon must be at least one day".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return fail(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.du_min >= 1.0) {
            return fail(format!("du_min must be >= 1 U, got {}", self.du_min));
        }
        if !(self.soc_step > 0.0) {
            return fail("soc_step must be positive".into());
        }
        if self.titration_interval_days < 1 || self.fbg_window < 1 {
            return fail("titration interval and fbg window must be at least 1".into());
        }
        Ok(())
    }

    /// Largest admissible `|δu|` given the previous dose.
    pub fn step_bound(&self, u_prev: f64) -> f64 {
        self.du_min.max(self.beta * u_prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCost {
    pub hypo: f64,
    pub hyper: f64,
}

impl PerformanceCost {
    /// `ξ·q_hypo + q_hyper`.
    pub fn weighted(&self, xi: f64) -> f64 {
        xi * self.hypo + self.hyper
    }
}

/// Hypo- and hyperglycemia costs of a fasting trajectory.
///
/// Sums run over every supplied point and are normalised by the configured horizon.
pub fn cost_performance(trajectory: &[f64], p2: f64, config: &TitrationConfig) -> PerformanceCost {
    let spread = (config.alpha * p2).exp();
    let mut hypo = 0.0;
    let mut above_low = 0.0;
    let mut above_high = 0.0;
    for &y in trajectory {
        let y = y.max(PREDICTION_FLOOR);
        let low = y / spread / config.fbg_low - 1.0;
        let high = y * spread / config.fbg_high - 1.0;
        hypo += low.min(0.0).powi(2);
        above_low += low.max(0.0).powi(2);
        above_high += high.max(0.0).powi(2);
    }
    let t = config.horizon_days as f64;
    PerformanceCost {
        hypo: hypo / t,
        hyper: above_low.max(above_high) / t,
    }
}

/// `(p1/p10 · δu/δu_min)²`.
pub fn cost_regularization(delta_u: f64, params: &ModelParams, prior: &PriorSpec, config: &TitrationConfig) -> f64 {
    (params.p1 / prior.mean.p1 * delta_u / config.du_min).powi(2)
}

/// Minimise `cost` over `{0, ±step, ±2·step, …} ∪ {±bound}` restricted to `δu ≥ lower`.
///
/// When `lower` cuts into the grid, `lower` itself is also a candidate. Ties go to
/// the smaller `|δu|`, then to the negative side.
pub fn solve_delta_u(cost: impl Fn(f64) -> f64, bound: f64, step: f64, lower: f64) -> f64 {
    let mut candidates = vec![0.0, bound, -bound];
    let steps = (bound / step + 1e-9).floor() as i64;
    for k in 1..=steps {
        let d = k as f64 * step;
        if d < bound {
            candidates.push(d);
            candidates.push(-d);
        }
    }
    if lower > -bound && lower < 0.0 {
        candidates.push(lower);
    }
    candidates.retain(|d| *d >= lower);

    let mut best: Option<(f64, f64)> = None;
    for d in candidates {
        let c = cost(d);
        let better = match best {
            None => true,
            Some((bd, bc)) => {
                c < bc || (c == bc && (d.abs() < bd.abs() || (d.abs() == bd.abs() && d < bd)))
            }
        };
        if better {
            best = Some((d, c));
        }
    }
    best.map_or(0.0, |(d, _)| d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub q_hypo: f64,
    pub q_hyper: f64,
    pub regularization: f64,
    /// `γ·(ξ·q_hypo + q_hyper) + r` at the chosen move.
    pub total_cost: f64,
    /// Total cost of leaving the dose unchanged.
    pub null_cost: f64,
    /// `max(δu_min, β·u_prev)`.
    pub bound: f64,
    pub bound_active: bool,
    pub trajectory: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRecommendation {
    pub delta_u: f64,
    pub new_dose: f64,
    pub diagnostics: Diagnostics,
}

/// Receding-horizon recommendation at the fasting time `now`.
///
/// `history` holds doses injected up to `now`; the recommended dose is injected at
/// `now` and repeated daily across the horizon.
#[allow(clippy::too_many_arguments)]
pub fn rhc_recommend(
    params: &ModelParams,
    prior: &PriorSpec,
    config: &TitrationConfig,
    history: &[DoseEvent],
    u_prev: f64,
    now: Minutes,
    drug: &DrugParams,
    subject: Subject,
) -> Result<DoseRecommendation> {
    if !(u_prev.is_finite() && u_prev >= 0.0) {
        return Err(Error::invalid(format!("previous dose must be >= 0, got {u_prev}")));
    }
    let horizon = HorizonInsulin::new(history, now, config.horizon_days, drug, subject)?;
    let total = |delta: f64| {
        let traj = horizon.trajectory(params, u_prev + delta);
        let perf = cost_performance(&traj, params.p2, config);
        config.gamma * perf.weighted(config.xi) + cost_regularization(delta, params, prior, config)
    };
    let bound = config.step_bound(u_prev);
    let delta_u = solve_delta_u(total, bound, config.du_min, -u_prev);
    let new_dose = (u_prev + delta_u).max(0.0);

    let trajectory = horizon.trajectory(params, new_dose);
    let perf = cost_performance(&trajectory, params.p2, config);
    let regularization = cost_regularization(delta_u, params, prior, config);
    let (low, high) = trajectory
        .iter()
        .map(|&y| envelope(y.max(PREDICTION_FLOOR), params.p2, config.alpha))
        .unzip();
    Ok(DoseRecommendation {
        delta_u,
        new_dose,
        diagnostics: Diagnostics {
            q_hypo: perf.hypo,
            q_hyper: perf.hyper,
            regularization,
            total_cost: config.gamma * perf.weighted(config.xi) + regularization,
            null_cost: total(0.0),
            bound,
            bound_active: delta_u.abs() >= bound,
            trajectory,
            low,
            high,
        },
    })
}

/// Threshold titration rule on a window of pre-breakfast readings.
pub fn soc_recommend(readings: &[f64], config: &TitrationConfig) -> Result<f64> {
    if readings.is_empty() {
        return Err(Error::invalid("threshold rule needs at least one reading"));
    }
    if readings.iter().any(|&z| z < config.fbg_low) {
        return Ok(-config.soc_step);
    }
    let mean = readings.iter().sum::<f64>() / readings.len() as f64;
    Ok(if mean > config.fbg_high { config.soc_step } else { 0.0 })
}

/// Everything a policy may consult at a titration instant.
#[derive(Debug, Clone, Copy)]
pub struct TitrationInput<'a> {
    pub now: Minutes,
    pub u_prev: f64,
    /// Readings taken inside the current window, oldest first.
    pub window: &'a [f64],
    /// Full reading and dose history up to `now`.
    pub log: &'a ObservationLog,
    pub drug: &'a DrugParams,
    pub subject: Subject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TitrationDecision {
    pub delta_u: f64,
    pub new_dose: f64,
    /// Parameter estimate used, for model-based policies.
    pub estimate: Option<ModelParams>,
}

pub trait TitrationPolicy: Send {
    /// `None` skips the titration and keeps the previous dose.
    fn titrate(&mut self, input: &TitrationInput<'_>) -> Result<Option<TitrationDecision>>;
}

#[derive(Debug, Clone)]
pub struct SocPolicy {
    pub config: TitrationConfig,
}

impl TitrationPolicy for SocPolicy {
    fn titrate(&mut self, input: &TitrationInput<'_>) -> Result<Option<TitrationDecision>> {
        if input.window.is_empty() {
            return Ok(None);
        }
        let delta = soc_recommend(input.window, &self.config)?;
        let new_dose = (input.u_prev + delta).max(0.0);
        Ok(Some(TitrationDecision {
            delta_u: new_dose - input.u_prev,
            new_dose,
            estimate: None,
        }))
    }
}

/// Refit-then-optimise policy; keeps the last estimate as warm start and fallback.
#[derive(Debug, Clone)]
pub struct RhcPolicy {
    pub config: TitrationConfig,
    pub prior: PriorSpec,
    pub settings: EstimatorSettings,
    estimate: ModelParams,
}

impl RhcPolicy {
    pub fn new(config: TitrationConfig, prior: PriorSpec) -> Self {
        Self {
            config,
            prior,
            settings: EstimatorSettings::default(),
            estimate: prior.mean,
        }
    }

    pub fn estimate(&self) -> ModelParams {
        self.estimate
    }
}

impl TitrationPolicy for RhcPolicy {
    fn titrate(&mut self, input: &TitrationInput<'_>) -> Result<Option<TitrationDecision>> {
        match map_estimate_from(input.log, &self.prior, input.drug, input.subject, &self.estimate, &self.settings) {
            Ok(fit) => self.estimate = fit.params,
            Err(Error::NonConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
        let rec = rhc_recommend(
            &self.estimate,
            &self.prior,
            &self.config,
            input.log.doses(),
            input.u_prev,
            input.now,
            input.drug,
            input.subject,
        )?;
        Ok(Some(TitrationDecision {
            delta_u: rec.delta_u,
            new_dose: rec.new_dose,
            estimate: Some(self.estimate),
        }))
    }
}
