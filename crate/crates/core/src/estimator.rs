//! Online maximum-a-posteriori estimation of the fasting model parameters.
//!
//! With log-normal measurement error of log-scale deviation `p2` and independent
//! log-normal priors, the negative log posterior (up to constants, times two) is
//!
//! ```text
//! J(p) = (1/p2²)·Σ_k log(z_k / h_p(u_{1:k}))² + 2t·log(p2) + Σ_i (1/η_i²)·log(p_i / p_i0)²
//! ```
//!
//! `J` is minimised over `θ = log p` with a Nelder–Mead simplex. The fit is a
//! full-batch refit of every reading each time it runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fasting::{ModelParams, PriorSpec, PREDICTION_FLOOR};
use crate::pk::{insulin_at_times, DoseEvent, DrugParams, Subject};
use crate::Minutes;

/// Lower bound on the estimated variability `p2`.
pub const P2_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub time: Minutes,
    /// Measured fasting glucose (mg/dL).
    pub fbg: f64,
}

/// Fasting readings together with the dose history that produced them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    readings: Vec<Reading>,
    doses: Vec<DoseEvent>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(readings: Vec<Reading>, doses: Vec<DoseEvent>) -> Result<Self> {
        let mut log = Self::new();
        for r in readings {
            log.push_reading(r.time, r.fbg)?;
        }
        for d in doses {
            log.push_dose(d)?;
        }
        Ok(log)
    }

    pub fn push_reading(&mut self, time: Minutes, fbg: f64) -> Result<()> {
        if !(fbg.is_finite() && fbg > 0.0) {
            return Err(Error::invalid(format!("fasting reading must be > 0, got {fbg}")));
        }
        if let Some(last) = self.readings.last() {
            if time <= last.time {
                return Err(Error::invalid(format!(
                    "reading at {time} does not follow previous reading at {}",
                    last.time
                )));
            }
        }
        self.readings.push(Reading { time, fbg });
        Ok(())
    }

    pub fn push_dose(&mut self, dose: DoseEvent) -> Result<()> {
        if let Some(last) = self.doses.last() {
            if dose.time < last.time {
                return Err(Error::invalid(format!(
                    "dose at {} precedes previous dose at {}",
                    dose.time, last.time
                )));
            }
        }
        self.doses.push(dose);
        Ok(())
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    pub fn doses(&self) -> &[DoseEvent] {
        &self.doses
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// Posterior objective with plasma insulin at each reading precomputed.
#[derive(Debug, Clone)]
pub struct Posterior {
    log_z: Vec<f64>,
    insulin: Vec<f64>,
    prior: PriorSpec,
}

impl Posterior {
    pub fn new(log: &ObservationLog, prior: &PriorSpec, drug: &DrugParams, subject: Subject) -> Result<Self> {
        prior.validate()?;
        let times: Vec<Minutes> = log.readings.iter().map(|r| r.time).collect();
        let insulin = insulin_at_times(&log.doses, &times, drug, subject)?;
        Ok(Self {
            log_z: log.readings.iter().map(|r| r.fbg.ln()).collect(),
            insulin,
            prior: *prior,
        })
    }

    pub fn observations(&self) -> usize {
        self.log_z.len()
    }

    pub fn insulin(&self) -> &[f64] {
        &self.insulin
    }

    /// `J(p)` for strictly positive `p`.
    pub fn value(&self, p: &ModelParams) -> f64 {
        let data: f64 = self
            .log_z
            .iter()
            .zip(&self.insulin)
            .map(|(lz, i)| {
                let h = (p.p0 - p.p1 * i).max(PREDICTION_FLOOR);
                let r = lz - h.ln();
                r * r
            })
            .sum();
        let n = self.log_z.len() as f64;
        let prior: f64 = p
            .as_array()
            .iter()
            .zip(self.prior.mean.as_array())
            .zip(self.prior.log_sd)
            .map(|((pi, mi), eta)| {
                let d = (pi / mi).ln() / eta;
                d * d
            })
            .sum();
        data / (p.p2 * p.p2) + 2.0 * n * p.p2.ln() + prior
    }

    fn params_from_log(theta: &[f64; 3]) -> ModelParams {
        ModelParams {
            p0: theta[0].exp(),
            p1: theta[1].exp(),
            p2: theta[2].exp().max(P2_FLOOR),
        }
    }

    /// Objective as a function of `θ = log p`, with `p2` floored at [`P2_FLOOR`].
    pub fn value_log(&self, theta: &[f64; 3]) -> f64 {
        self.value(&Self::params_from_log(theta))
    }

    /// Analytic gradient of [`Posterior::value_log`].
    pub fn gradient_log(&self, theta: &[f64; 3]) -> [f64; 3] {
        let p = Self::params_from_log(theta);
        let inv_var = 1.0 / (p.p2 * p.p2);
        let mut g = [0.0; 3];
        let mut sum_sq = 0.0;
        for (lz, i) in self.log_z.iter().zip(&self.insulin) {
            let raw = p.p0 - p.p1 * i;
            let h = raw.max(PREDICTION_FLOOR);
            let r = lz - h.ln();
            sum_sq += r * r;
            if raw > PREDICTION_FLOOR {
                // d log h / dθ0 = p0/h, d log h / dθ1 = −p1·I/h
                g[0] += -2.0 * r * p.p0 / h;
                g[1] += 2.0 * r * p.p1 * i / h;
            }
        }
        g[0] *= inv_var;
        g[1] *= inv_var;
        let p2_free = theta[2].exp() > P2_FLOOR;
        if p2_free {
            g[2] = -2.0 * sum_sq * inv_var + 2.0 * self.log_z.len() as f64;
        }
        let means = self.prior.mean.as_array();
        let values = p.as_array();
        for k in 0..3 {
            if k == 2 && !p2_free {
                continue;
            }
            let eta2 = self.prior.log_sd[k] * self.prior.log_sd[k];
            g[k] += 2.0 * (values[k] / means[k]).ln() / eta2;
        }
        g
    }
}

/// Posterior objective `J(p)` of `log` under `prior`.
pub fn map_objective(
    p: &ModelParams,
    log: &ObservationLog,
    prior: &PriorSpec,
    drug: &DrugParams,
    subject: Subject,
) -> Result<f64> {
    if !p.as_array().iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::invalid(format!("parameters must be strictly positive: {p:?}")));
    }
    Ok(Posterior::new(log, prior, drug, subject)?.value(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Initial simplex edge in log-parameter space.
    pub initial_step: f64,
    pub max_restarts: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            rel_tol: 1e-6,
            initial_step: 0.1,
            max_restarts: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEstimate {
    pub params: ModelParams,
    pub objective: f64,
    pub iterations: usize,
}

/// MAP estimate started from the prior means.
pub fn map_estimate(
    log: &ObservationLog,
    prior: &PriorSpec,
    drug: &DrugParams,
    subject: Subject,
) -> Result<ModelParams> {
    map_estimate_from(log, prior, drug, subject, &prior.mean, &EstimatorSettings::default())
        .map(|e| e.params)
}

/// MAP estimate warm-started at `init` (typically the previous cycle's estimate).
pub fn map_estimate_from(
    log: &ObservationLog,
    prior: &PriorSpec,
    drug: &DrugParams,
    subject: Subject,
    init: &ModelParams,
    settings: &EstimatorSettings,
) -> Result<MapEstimate> {
    let posterior = Posterior::new(log, prior, drug, subject)?;
    if posterior.observations() == 0 {
        return Ok(MapEstimate {
            params: prior.mean,
            objective: 0.0,
            iterations: 0,
        });
    }
    let to_theta = |p: &ModelParams| [p.p0.ln(), p.p1.ln(), p.p2.max(P2_FLOOR).ln()];
    let f = |theta: &[f64; 3]| posterior.value_log(theta);

    let candidates = [to_theta(init), to_theta(&prior.mean)];
    let mut best = candidates[0];
    let mut best_value = f(&best);
    if f(&candidates[1]) < best_value {
        best = candidates[1];
        best_value = f(&best);
    }

    let mut iterations = 0;
    for _ in 0..=settings.max_restarts {
        let budget = settings.max_iterations.saturating_sub(iterations);
        if budget == 0 {
            return Err(Error::NonConvergence { iterations });
        }
        let run = nelder_mead(&f, best, settings.initial_step, settings.rel_tol, budget);
        iterations += run.iterations;
        if !run.converged {
            return Err(Error::NonConvergence { iterations });
        }
        let improved = best_value - run.value;
        if run.value <= best_value {
            best = run.point;
            best_value = run.value;
        }
        if improved <= settings.rel_tol * best_value.abs().max(1.0) {
            break;
        }
    }
    Ok(MapEstimate {
        params: Posterior::params_from_log(&best),
        objective: best_value,
        iterations,
    })
}

struct SimplexResult {
    point: [f64; 3],
    value: f64,
    iterations: usize,
    converged: bool,
}

fn nelder_mead(
    f: &impl Fn(&[f64; 3]) -> f64,
    start: [f64; 3],
    step: f64,
    tol: f64,
    max_iterations: usize,
) -> SimplexResult {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(&start)));
    for k in 0..3 {
        let mut x = start;
        x[k] += step;
        simplex.push((x, f(&x)));
    }

    let lerp = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    };

    for it in 0..max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= tol * best.abs().max(1.0) && diameter <= tol.sqrt() * 1e-2 {
            return SimplexResult {
                point: simplex[0].0,
                value: best,
                iterations: it,
                converged: true,
            };
        }

        let mut centroid = [0.0; 3];
        for (x, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += x[k] / 3.0;
            }
        }
        let worst_x = simplex[3].0;
        let reflected = lerp(&centroid, &worst_x, -REFLECT);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst_x, -EXPAND);
            let fe = f(&expanded);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[3].1 {
            let c = lerp(&centroid, &reflected, CONTRACT);
            (c, f(&c))
        } else {
            let c = lerp(&centroid, &worst_x, CONTRACT);
            (c, f(&c))
        };
        if fc < fr.min(simplex[3].1) {
            simplex[3] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0;
        for entry in simplex.iter_mut().skip(1) {
            let x = lerp(&anchor, &entry.0, SHRINK);
            *entry = (x, f(&x));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexResult {
        point: simplex[0].0,
        value: simplex[0].1,
        iterations: max_iterations,
        converged: false,
    }
}
