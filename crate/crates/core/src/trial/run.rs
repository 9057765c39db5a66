//! Day-by-day closed-loop simulation of one scenario over a population.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avatar::{cgm_day, measure_smbg, Avatar, GlucoseTrace};
use crate::controller::{RhcPolicy, SocPolicy, TitrationConfig, TitrationInput, TitrationPolicy};
use crate::error::{Error, Result};
use crate::estimator::ObservationLog;
use crate::fasting::{fasting_time, ModelParams, PriorSpec};
use crate::pk::{DoseEvent, DrugParams, InsulinAccumulator};
use crate::rng::{stream_rng, Stream};
use crate::trial::metrics::{metrics_from_daily, DailyCgm, MetricsReport};
use crate::trial::scenario::{PolicyKind, ScenarioSpec};

/// Inputs shared by every avatar in a run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub titration: TitrationConfig,
    pub prior: PriorSpec,
    /// Nominal formulation; the plant uses each avatar's perturbed copy.
    pub drug: DrugParams,
    pub initial_dose: f64,
    pub keep_traces: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            titration: TitrationConfig::default(),
            prior: PriorSpec::default(),
            drug: DrugParams::degludec(),
            initial_dose: 0.0,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day: i64,
    /// Dose injected this morning (U).
    pub dose: f64,
    /// True fasting glucose.
    pub fbg: f64,
    pub smbg: Option<f64>,
    pub titrated: bool,
    pub cgm: DailyCgm,
    pub estimate: Option<ModelParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvatarRun {
    pub avatar_id: u32,
    pub days: Vec<DayRecord>,
    /// Raw CGM days; empty unless traces were requested.
    pub traces: Vec<GlucoseTrace>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarFailure {
    pub avatar_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    /// Completed runs in population order.
    pub runs: Vec<AvatarRun>,
    pub failures: Vec<AvatarFailure>,
}

fn make_policy(spec: &ScenarioSpec, settings: &RunSettings) -> Box<dyn TitrationPolicy> {
    match spec.policy {
        PolicyKind::Soc => Box::new(SocPolicy {
            config: settings.titration,
        }),
        PolicyKind::Rhc => Box::new(RhcPolicy::new(settings.titration, settings.prior)),
    }
}

fn reading_missed(avatar: &Avatar, day: i64, probability: f64) -> bool {
    probability > 0.0 && stream_rng(avatar.seed, day as u64, Stream::Adherence).random_bool(probability)
}

/// Simulate one avatar through one scenario.
pub fn simulate_avatar(spec: &ScenarioSpec, avatar: &Avatar, settings: &RunSettings) -> Result<AvatarRun> {
    spec.validate()?;
    avatar.validate()?;
    let invariant = |reason: String| Error::Invariant {
        avatar: avatar.id,
        reason,
    };
    let plant_drug = avatar.drug(&settings.drug)?;
    let subject = avatar.subject();
    let mut plant = InsulinAccumulator::new(&plant_drug, subject, 0);
    let mut policy = make_policy(spec, settings);
    let mut log = ObservationLog::new();
    let mut dose = settings.initial_dose;
    let mut estimate = None;
    let mut days = Vec::with_capacity(spec.days() as usize);
    let mut traces = Vec::new();
    let window = spec.fbg_window as i64;

    for day in 0..spec.days() {
        let now = fasting_time(day);
        plant.advance_to(now)?;
        let fbg = avatar.fasting_from_insulin(plant.concentration(), day);
        if !fbg.is_finite() {
            return Err(invariant(format!("non-finite fasting glucose on day {day}")));
        }

        let mut smbg = None;
        if spec.is_measurement_day(day) && !reading_missed(avatar, day, spec.miss_probability) {
            let z = measure_smbg(avatar, fbg, day);
            log.push_reading(now, z)?;
            smbg = Some(z);
        }

        let titrated = spec.is_titration_day(day);
        if titrated {
            let window_start = fasting_time(day - window + 1);
            let in_window: Vec<f64> = log
                .readings()
                .iter()
                .filter(|r| r.time >= window_start)
                .map(|r| r.fbg)
                .collect();
            let input = TitrationInput {
                now,
                u_prev: dose,
                window: &in_window,
                log: &log,
                drug: &settings.drug,
                subject,
            };
            if let Some(decision) = policy.titrate(&input)? {
                let bound = match spec.policy {
                    PolicyKind::Soc => settings.titration.soc_step,
                    PolicyKind::Rhc => settings.titration.step_bound(dose),
                };
                if !(decision.new_dose.is_finite() && decision.new_dose >= 0.0) {
                    return Err(invariant(format!("day {day}: dose {} not a finite non-negative value", decision.new_dose)));
                }
                if decision.delta_u.abs() > bound + 1e-9 {
                    return Err(invariant(format!("day {day}: step {} exceeds bound {bound}", decision.delta_u)));
                }
                dose = decision.new_dose;
                if decision.estimate.is_some() {
                    estimate = decision.estimate;
                }
            }
        }

        if dose > 0.0 {
            plant.inject(dose);
            log.push_dose(DoseEvent::new(now, dose)?)?;
        }

        let trace = cgm_day(avatar, fbg, day);
        let cgm = DailyCgm::from_samples(&trace.samples);
        if settings.keep_traces {
            traces.push(trace);
        }
        days.push(DayRecord {
            day,
            dose,
            fbg,
            smbg,
            titrated,
            cgm,
            estimate,
        });
    }

    let metrics = metrics_of(&days)?;
    Ok(AvatarRun {
        avatar_id: avatar.id,
        days,
        traces,
        metrics,
    })
}

/// Window metrics from a day log.
pub fn metrics_of(days: &[DayRecord]) -> Result<MetricsReport> {
    let daily: Vec<DailyCgm> = days.iter().map(|d| d.cgm).collect();
    let fbg: Vec<f64> = days.iter().map(|d| d.fbg).collect();
    let doses: Vec<f64> = days.iter().map(|d| d.dose).collect();
    metrics_from_daily(&daily, &fbg, &doses)
}

/// Run every avatar in parallel; output order follows the population.
pub fn run_scenario(spec: &ScenarioSpec, population: &[Avatar], settings: &RunSettings) -> Result<ScenarioResult> {
    spec.validate()?;
    settings.titration.validate()?;
    settings.prior.validate()?;
    if population.is_empty() {
        return Err(Error::invalid("population is empty"));
    }
    let outcomes: Vec<Result<AvatarRun>> = population
        .par_iter()
        .map(|avatar| simulate_avatar(spec, avatar, settings))
        .collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (avatar, outcome) in population.iter().zip(outcomes) {
        match outcome {
            Ok(run) => runs.push(run),
            Err(Error::Invariant { reason, .. }) => failures.push(AvatarFailure {
                avatar_id: avatar.id,
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(ScenarioResult {
        spec: spec.clone(),
        runs,
        failures,
    })
}
