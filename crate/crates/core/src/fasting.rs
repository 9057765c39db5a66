//! The controller's internal fasting glucose model.
//!
//! Predicted fasting glucose is affine in plasma insulin,
//! `y = p0 − p1 · I(u_{1:τ})`, and measurements are assumed to scatter
//! log-normally around it with log-scale standard deviation `p2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::{plasma_insulin, DoseEvent, DrugParams, InsulinAccumulator, Subject};
use crate::{Minutes, MINUTES_PER_DAY};

/// Pre-breakfast fasting sample, 07:00.
pub const FASTING_MINUTE_OF_DAY: Minutes = 7 * 60;

/// Predictions are floored here before any ratio or logarithm is taken.
pub const PREDICTION_FLOOR: f64 = 1.0;

/// Clock time of the fasting measurement (and daily injection) on `day`.
pub fn fasting_time(day: i64) -> Minutes {
    day * MINUTES_PER_DAY + FASTING_MINUTE_OF_DAY
}

/// Patient parameters of the fasting model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Fasting glucose at zero insulin (mg/dL).
    pub p0: f64,
    /// Fasting glucose sensitivity to plasma insulin (mg/dL per mU/L).
    pub p1: f64,
    /// Log-scale standard deviation of measurement around prediction.
    pub p2: f64,
}

impl ModelParams {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self> {
        let p = Self { p0, p1, p2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p0.is_finite()
            && self.p0 > 0.0
            && self.p1.is_finite()
            && self.p1 > 0.0
            && self.p2.is_finite()
            && self.p2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("model parameters out of range: {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p0, self.p1, self.p2]
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Self {
            p0: p[0],
            p1: p[1],
            p2: p[2],
        }
    }
}

/// Independent log-normal priors on `(p0, p1, p2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: ModelParams,
    /// Log-scale standard deviations `(η0, η1, η2)`.
    pub log_sd: [f64; 3],
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mean: ModelParams {
                p0: 150.0,
                p1: 5.0,
                p2: 0.15,
            },
            log_sd: [0.25, 0.5, 1.0],
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let means_ok = self.mean.as_array().iter().all(|m| m.is_finite() && *m > 0.0);
        let sds_ok = self.log_sd.iter().all(|s| s.is_finite() && *s > 0.0);
        if means_ok && sds_ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("prior must have positive means and log-sds: {self:?}")))
        }
    }
}

/// Predicted fasting glucose at `t`.
pub fn predict_fbg(
    params: &ModelParams,
    doses: &[DoseEvent],
    drug: &DrugParams,
    subject: Subject,
    t: Minutes,
) -> Result<f64> {
    Ok(params.p0 - params.p1 * plasma_insulin(doses, t, drug, subject)?)
}

/// Prediction over `horizon_days + 1` fasting times starting at `now`, with `u_next`
/// injected at `now` and on every following day of the horizon.
pub fn predict_trajectory(
    params: &ModelParams,
    history: &[DoseEvent],
    u_next: f64,
    horizon_days: usize,
    now: Minutes,
    drug: &DrugParams,
    subject: Subject,
) -> Result<Vec<f64>> {
    if !(u_next.is_finite() && u_next >= 0.0) {
        return Err(Error::invalid(format!("next dose must be >= 0, got {u_next}")));
    }
    Ok(HorizonInsulin::new(history, now, horizon_days, drug, subject)?.trajectory(params, u_next))
}

/// Plasma insulin over a prediction horizon, split into the part fixed by the
/// dose history and the response to one unit injected daily from `now` on.
///
/// Linearity in the dose lets every candidate dose reuse one PK evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonInsulin {
    pub now: Minutes,
    pub history: Vec<f64>,
    pub per_unit: Vec<f64>,
}

impl HorizonInsulin {
    pub fn new(
        history: &[DoseEvent],
        now: Minutes,
        horizon_days: usize,
        drug: &DrugParams,
        subject: Subject,
    ) -> Result<Self> {
        if horizon_days == 0 {
            return Err(Error::invalid("prediction horizon must be at least one day"));
        }
        let start = history.first().map_or(now, |d| d.time.min(now));
        let mut past = InsulinAccumulator::new(drug, subject, start);
        for dose in history {
            if dose.time > now {
                return Err(Error::DoseAfterEvaluation {
                    dose_time: dose.time,
                    t: now,
                });
            }
            past.apply(dose)?;
        }
        let mut unit = InsulinAccumulator::new(drug, subject, now);
        let mut hist = Vec::with_capacity(horizon_days + 1);
        let mut per_unit = Vec::with_capacity(horizon_days + 1);
        for k in 0..=horizon_days as i64 {
            let t = now + k * MINUTES_PER_DAY;
            past.advance_to(t)?;
            unit.advance_to(t)?;
            hist.push(past.concentration());
            per_unit.push(unit.concentration());
            unit.inject(1.0);
        }
        Ok(Self {
            now,
            history: hist,
            per_unit,
        })
    }

    pub fn insulin(&self, u_next: f64) -> impl Iterator<Item = f64> + '_ {
        self.history
            .iter()
            .zip(&self.per_unit)
            .map(move |(h, unit)| h + u_next * unit)
    }

    pub fn trajectory(&self, params: &ModelParams, u_next: f64) -> Vec<f64> {
        self.insulin(u_next).map(|i| params.p0 - params.p1 * i).collect()
    }
}

/// Variability envelope `[y·e^{−α·p2}, y·e^{α·p2}]`.
pub fn envelope(y: f64, p2: f64, alpha: f64) -> (f64, f64) {
    let spread = (alpha * p2).exp();
    (y / spread, y * spread)
}
