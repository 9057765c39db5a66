//! Patient state derived from the event log.

use serde::{Deserialize, Serialize};

use titration_core::controller::{rhc_recommend, soc_recommend, DoseRecommendation, TitrationConfig};
use titration_core::estimator::{map_estimate_from, EstimatorSettings, ObservationLog};
use titration_core::fasting::{envelope, predict_trajectory, ModelParams, PriorSpec, PREDICTION_FLOOR};
use titration_core::pk::{DoseEvent, DrugParams, Subject};
use titration_core::{Minutes, MINUTES_PER_DAY};

use crate::error::{Result, ServiceError};
use crate::store::Event;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    /// kg.
    pub body_weight: f64,
    pub drug: DrugParams,
    pub titration: TitrationConfig,
    pub prior: PriorSpec,
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let id_ok = !self.id.is_empty()
            && self.id.len() <= 64
            && self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !id_ok {
            return Err(ServiceError::Invalid(format!(
                "patient id {:?} must be 1-64 characters of [A-Za-z0-9_-]",
                self.id
            )));
        }
        Subject::new(self.body_weight)?;
        // Deserialized drug constants bypass the constructor checks.
        let d = &self.drug;
        DrugParams::new(d.name(), d.bioavailability(), d.distribution_volume(), d.clearance(), d.k1(), d.k2())?;
        self.titration.validate()?;
        self.prior.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoggedEvent {
    Fbg { seq: u64, time: Minutes, fbg: f64 },
    Dose { seq: u64, time: Minutes, units: f64 },
}

impl LoggedEvent {
    pub fn time(&self) -> Minutes {
        match *self {
            LoggedEvent::Fbg { time, .. } | LoggedEvent::Dose { time, .. } => time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: Minutes,
    pub fbg: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub q_hypo: f64,
    pub q_hyper: f64,
    pub regularization: f64,
    pub total: f64,
    /// Cost of leaving the dose unchanged.
    pub unchanged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocComparison {
    pub readings: Vec<f64>,
    pub delta_u: f64,
    pub new_dose: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub patient: String,
    /// Minute of the injection being recommended.
    pub now: Minutes,
    pub u_prev: f64,
    pub delta_u: f64,
    pub new_dose: f64,
    /// Largest admissible |δu| at this step (U).
    pub bound: f64,
    pub bound_active: bool,
    pub estimate: ModelParams,
    pub observations: usize,
    pub trajectory: Vec<TrajectoryPoint>,
    pub cost: CostBreakdown,
    pub soc: Option<SocComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub patient: String,
    pub now: Minutes,
    pub dose: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastRecommendation {
    /// Sequence number of the reading that triggered it.
    pub seq: u64,
    pub now: Minutes,
    pub u_prev: f64,
    pub delta_u: f64,
    pub new_dose: f64,
    pub estimate: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    profile: Profile,
    log: ObservationLog,
    events: Vec<LoggedEvent>,
    /// Estimate after each reading, in reading order.
    estimates: Vec<ModelParams>,
}

impl PatientRecord {
    pub fn new(profile: Profile) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            profile,
            log: ObservationLog::new(),
            events: Vec::new(),
            estimates: Vec::new(),
        })
    }

    /// Rebuild from the patient's own records, oldest first.
    pub fn replay<'a>(events: impl IntoIterator<Item = (u64, &'a Event)>) -> Result<Self> {
        let mut iter = events.into_iter();
        let Some((_, Event::PatientCreated { profile })) = iter.next() else {
            return Err(ServiceError::Invalid("event log must start with patient creation".into()));
        };
        let mut record = Self::new(profile.clone())?;
        for (seq, event) in iter {
            record.apply(seq, event)?;
        }
        Ok(record)
    }

    pub fn apply(&mut self, seq: u64, event: &Event) -> Result<()> {
        match *event {
            Event::PatientCreated { .. } => Err(ServiceError::Invalid("patient already created".into())),
            Event::FbgLogged { time, fbg } => self.log_fbg(seq, time, fbg),
            Event::DoseLogged { time, units } => self.log_dose(seq, time, units),
        }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn log(&self) -> &ObservationLog {
        &self.log
    }

    pub fn subject(&self) -> Subject {
        Subject::new(self.profile.body_weight).expect("validated profile")
    }

    pub fn estimate(&self) -> ModelParams {
        self.estimates.last().copied().unwrap_or(self.profile.prior.mean)
    }

    fn last_time(&self) -> Option<Minutes> {
        self.events.last().map(LoggedEvent::time)
    }

    pub fn check_fbg(&self, time: Minutes, fbg: f64) -> Result<()> {
        if !(fbg.is_finite() && fbg > 0.0) {
            return Err(ServiceError::Invalid(format!("reading must be a positive number of mg/dL, got {fbg}")));
        }
        if let Some(last) = self.log.readings().last() {
            if time <= last.time {
                return Err(ServiceError::Invalid(format!(
                    "reading at minute {time} is not after the previous reading at {}",
                    last.time
                )));
            }
        }
        self.check_order(time)
    }

    pub fn check_dose(&self, time: Minutes, units: f64) -> Result<()> {
        if !(units.is_finite() && units >= 0.0) {
            return Err(ServiceError::Invalid(format!("dose must be a non-negative number of units, got {units}")));
        }
        self.check_order(time)
    }

    fn check_order(&self, time: Minutes) -> Result<()> {
        if time < 0 {
            return Err(ServiceError::Invalid(format!("time must be >= 0, got {time}")));
        }
        match self.last_time() {
            Some(last) if time < last => Err(ServiceError::Invalid(format!(
                "event at minute {time} precedes the last logged event at {last}"
            ))),
            _ => Ok(()),
        }
    }

    /// Append a reading and refit the estimate, warm-started at the previous one.
    pub fn log_fbg(&mut self, seq: u64, time: Minutes, fbg: f64) -> Result<()> {
        self.check_fbg(time, fbg)?;
        self.log.push_reading(time, fbg)?;
        let p = &self.profile;
        let previous = self.estimate();
        let next = match map_estimate_from(&self.log, &p.prior, &p.drug, self.subject(), &previous, &EstimatorSettings::default()) {
            Ok(fit) => fit.params,
            Err(titration_core::Error::NonConvergence { iterations }) => {
                tracing::warn!(patient = %p.id, iterations, "estimator did not converge; keeping previous estimate");
                previous
            }
            Err(e) => return Err(e.into()),
        };
        self.estimates.push(next);
        self.events.push(LoggedEvent::Fbg { seq, time, fbg });
        Ok(())
    }

    pub fn log_dose(&mut self, seq: u64, time: Minutes, units: f64) -> Result<()> {
        self.check_dose(time, units)?;
        self.log.push_dose(DoseEvent::new(time, units)?)?;
        self.events.push(LoggedEvent::Dose { seq, time, units });
        Ok(())
    }

    /// Minute of the next injection: the latest reading, or a day after a later dose.
    pub fn anchor(&self) -> Minutes {
        let reading = self.log.readings().last().map(|r| r.time);
        let dose = self.log.doses().last().map(|d| d.time + MINUTES_PER_DAY);
        match (reading, dose) {
            (Some(r), Some(d)) => r.max(d),
            (Some(r), None) => r,
            (None, Some(d)) => d,
            (None, None) => 0,
        }
    }

    pub fn u_prev(&self) -> f64 {
        self.log.doses().last().map_or(0.0, |d| d.units)
    }

    /// Engine output for the current state.
    pub fn engine_recommendation(&self) -> Result<DoseRecommendation> {
        let p = &self.profile;
        Ok(rhc_recommend(
            &self.estimate(),
            &p.prior,
            &p.titration,
            self.log.doses(),
            self.u_prev(),
            self.anchor(),
            &p.drug,
            self.subject(),
        )?)
    }

    pub fn recommendation(&self) -> Result<Recommendation> {
        let rec = self.engine_recommendation()?;
        let now = self.anchor();
        let u_prev = self.u_prev();
        let d = &rec.diagnostics;
        let trajectory = points(now, &d.trajectory, &d.low, &d.high);
        Ok(Recommendation {
            patient: self.profile.id.clone(),
            now,
            u_prev,
            delta_u: rec.delta_u,
            new_dose: rec.new_dose,
            bound: d.bound,
            bound_active: d.bound_active,
            estimate: self.estimate(),
            observations: self.log.readings().len(),
            trajectory,
            cost: CostBreakdown {
                q_hypo: d.q_hypo,
                q_hyper: d.q_hyper,
                regularization: d.regularization,
                total: d.total_cost,
                unchanged: d.null_cost,
            },
            soc: self.soc_comparison(now, u_prev)?,
        })
    }

    /// The threshold rule applied to readings of the last `fbg_window` days.
    fn soc_comparison(&self, now: Minutes, u_prev: f64) -> Result<Option<SocComparison>> {
        let config = &self.profile.titration;
        let since = now - config.fbg_window as Minutes * MINUTES_PER_DAY;
        let readings: Vec<f64> = self
            .log
            .readings()
            .iter()
            .filter(|r| r.time > since && r.time <= now)
            .map(|r| r.fbg)
            .collect();
        if readings.is_empty() {
            return Ok(None);
        }
        let delta = soc_recommend(&readings, config)?;
        let new_dose = (u_prev + delta).max(0.0);
        Ok(Some(SocComparison {
            readings,
            delta_u: new_dose - u_prev,
            new_dose,
        }))
    }

    pub fn what_if(&self, dose: f64) -> Result<WhatIf> {
        if !(dose.is_finite() && dose >= 0.0) {
            return Err(ServiceError::Invalid(format!("dose must be a non-negative number of units, got {dose}")));
        }
        let p = &self.profile;
        let now = self.anchor();
        let estimate = self.estimate();
        let y = predict_trajectory(&estimate, self.log.doses(), dose, p.titration.horizon_days, now, &p.drug, self.subject())?;
        let (low, high): (Vec<f64>, Vec<f64>) = y
            .iter()
            .map(|&v| envelope(v.max(PREDICTION_FLOOR), estimate.p2, p.titration.alpha))
            .unzip();
        Ok(WhatIf {
            patient: p.id.clone(),
            now,
            dose,
            trajectory: points(now, &y, &low, &high),
        })
    }

    /// What the service recommended right after each reading in `events`.
    pub fn past_recommendations(&self, events: &[LoggedEvent]) -> Result<Vec<PastRecommendation>> {
        let p = &self.profile;
        let mut out = Vec::new();
        for event in events {
            let LoggedEvent::Fbg { seq, time, .. } = *event else { continue };
            let index = self
                .events
                .iter()
                .filter(|e| matches!(e, LoggedEvent::Fbg { .. }))
                .position(|e| matches!(*e, LoggedEvent::Fbg { seq: s, .. } if s == seq))
                .expect("event belongs to this record");
            let doses: Vec<DoseEvent> = self
                .events
                .iter()
                .take_while(|e| !matches!(**e, LoggedEvent::Fbg { seq: s, .. } if s == seq))
                .filter_map(|e| match *e {
                    LoggedEvent::Dose { time, units, .. } => Some(DoseEvent { time, units }),
                    _ => None,
                })
                .collect();
            let u_prev = doses.last().map_or(0.0, |d| d.units);
            let now = doses.last().map_or(time, |d| time.max(d.time + MINUTES_PER_DAY));
            let estimate = self.estimates[index];
            let rec = rhc_recommend(&estimate, &p.prior, &p.titration, &doses, u_prev, now, &p.drug, self.subject())?;
            out.push(PastRecommendation {
                seq,
                now,
                u_prev,
                delta_u: rec.delta_u,
                new_dose: rec.new_dose,
                estimate,
            });
        }
        Ok(out)
    }
}

fn points(now: Minutes, y: &[f64], low: &[f64], high: &[f64]) -> Vec<TrajectoryPoint> {
    y.iter()
        .zip(low)
        .zip(high)
        .enumerate()
        .map(|(k, ((&fbg, &low), &high))| TrajectoryPoint {
            time: now + k as Minutes * MINUTES_PER_DAY,
            fbg,
            low,
            high,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> Profile {
        Profile {
            id: "alice".into(),
            body_weight: 80.0,
            drug: DrugParams::degludec(),
            titration: TitrationConfig::default(),
            prior: PriorSpec::default(),
        }
    }

    #[test]
    fn treatment_naive_patient_starts_at_one_unit() {
        let r = PatientRecord::new(profile()).unwrap().recommendation().unwrap();
        assert_eq!(r.now, 0);
        assert_eq!(r.u_prev, 0.0);
        assert_eq!(r.delta_u, 1.0);
        assert_eq!(r.estimate, PriorSpec::default().mean);
        assert!(r.soc.is_none());
        assert_eq!(r.trajectory.len(), 11);
    }

    #[test]
    fn first_reading_moves_estimate() {
        let mut r = PatientRecord::new(profile()).unwrap();
        r.log_fbg(2, 420, 210.0).unwrap();
        assert_ne!(r.estimate(), PriorSpec::default().mean);
        assert!(r.estimate().p0 > 150.0);
    }

    #[test]
    fn ordering_rules() {
        let mut r = PatientRecord::new(profile()).unwrap();
        r.log_fbg(2, 420, 150.0).unwrap();
        r.log_dose(3, 420, 2.0).unwrap();
        assert!(r.check_fbg(420, 140.0).is_err());
        assert!(r.check_fbg(1860, 0.0).is_err());
        assert!(r.check_dose(400, 2.0).is_err());
        assert!(r.check_dose(1860, -1.0).is_err());
        assert!(r.check_fbg(1860, 140.0).is_ok());
        assert_eq!(r.anchor(), 1860);
        assert_eq!(r.u_prev(), 2.0);
    }

    #[test]
    fn anchor_follows_latest_event() {
        let mut r = PatientRecord::new(profile()).unwrap();
        r.log_dose(2, 420, 4.0).unwrap();
        assert_eq!(r.anchor(), 1860);
        r.log_fbg(3, 1860, 150.0).unwrap();
        assert_eq!(r.anchor(), 1860);
        r.log_fbg(4, 3300, 150.0).unwrap();
        assert_eq!(r.anchor(), 3300);
    }

    #[test]
    fn what_if_at_recommended_dose_matches_recommendation() {
        let mut r = PatientRecord::new(profile()).unwrap();
        r.log_fbg(2, 420, 180.0).unwrap();
        let rec = r.recommendation().unwrap();
        let w = r.what_if(rec.new_dose).unwrap();
        assert_eq!(w.trajectory, rec.trajectory);
        let higher = r.what_if(rec.new_dose + 10.0).unwrap();
        assert!(higher.trajectory[1..].iter().zip(&w.trajectory[1..]).all(|(h, l)| h.fbg < l.fbg));
        assert!(r.what_if(-1.0).is_err());
    }

    #[test]
    fn invalid_profiles_rejected() {
        let mut p = profile();
        p.titration.fbg_low = 95.0;
        assert!(PatientRecord::new(p).is_err());
        let mut p = profile();
        p.body_weight = 0.0;
        assert!(PatientRecord::new(p).is_err());
        let mut p = profile();
        p.id = "a b".into();
        assert!(PatientRecord::new(p).is_err());
    }

    #[test]
    fn past_recommendation_matches_live_one() {
        let mut r = PatientRecord::new(profile()).unwrap();
        r.log_fbg(2, 420, 180.0).unwrap();
        let live = r.recommendation().unwrap();
        r.log_dose(3, 420, live.new_dose).unwrap();
        r.log_fbg(4, 1860, 170.0).unwrap();
        let live2 = r.recommendation().unwrap();
        let past = r.past_recommendations(r.events()).unwrap();
        assert_eq!(past.len(), 2);
        assert_eq!((past[0].delta_u, past[0].now), (live.delta_u, live.now));
        assert_eq!((past[1].delta_u, past[1].now, past[1].u_prev), (live2.delta_u, live2.now, live2.u_prev));
    }
}
