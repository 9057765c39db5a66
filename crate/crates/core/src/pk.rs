//! Closed-form plasma insulin kinetics for subcutaneous basal insulin.
//!
//! Each injection of `u` units at `t_k` contributes a biexponential
//! absorption/elimination curve
//!
//! ```text
//! I(t) = 1000 · F·k2·k1 / (k_BW·Vi·kcl·(k2 − k1)) · Σ_k (e^{−k1(t−t_k)} − e^{−k2(t−t_k)}) · u_k
//! ```
//!
//! with `I` in mU/L, `u_k` in U, body weight `k_BW` in kg and rates in 1/min.
//! The factor 1000 converts units to milli-units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Minutes, MINUTES_PER_DAY};

/// Pharmacokinetic constants of one basal insulin formulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugParams {
    name: String,
    /// Bioavailability `F` (unitless).
    bioavailability: f64,
    /// Distribution volume `Vi` (L/kg).
    distribution_volume: f64,
    /// Clearance `kcl` (1/min).
    clearance: f64,
    /// Slow time constant `k1` (1/min).
    k1: f64,
    /// Fast time constant `k2` (1/min).
    k2: f64,
}

impl DrugParams {
    pub fn new(
        name: impl Into<String>,
        bioavailability: f64,
        distribution_volume: f64,
        clearance: f64,
        k1: f64,
        k2: f64,
    ) -> Result<Self> {
        let name = name.into();
        let fields = [
            ("F", bioavailability),
            ("Vi", distribution_volume),
            ("kcl", clearance),
            ("k1", k1),
            ("k2", k2),
        ];
        for (field, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidDrug {
                    name,
                    reason: format!("{field} must be strictly positive, got {value}"),
                });
            }
        }
        if k1 >= k2 {
            return Err(Error::InvalidDrug {
                name,
                reason: format!("k1 ({k1}) must be smaller than k2 ({k2})"),
            });
        }
        Ok(Self {
            name,
            bioavailability,
            distribution_volume,
            clearance,
            k1,
            k2,
        })
    }

    pub fn glargine_100() -> Self {
        Self::new("glargine-100", 1.0, 0.1, 0.18, 0.00067, 0.0059).expect("valid preset")
    }

    pub fn glargine_300() -> Self {
        Self::new("glargine-300", 1.0, 0.1, 0.22, 0.00057, 0.0019).expect("valid preset")
    }

    pub fn degludec() -> Self {
        Self::new("degludec", 1.0, 0.1, 0.20, 0.00068, 0.0024).expect("valid preset")
    }

    pub fn presets() -> [Self; 3] {
        [Self::glargine_100(), Self::glargine_300(), Self::degludec()]
    }

    /// Look up a built-in formulation by name (case-insensitive).
    pub fn preset(name: &str) -> Option<Self> {
        let wanted = name.to_ascii_lowercase();
        Self::presets().into_iter().find(|d| d.name == wanted)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bioavailability(&self) -> f64 {
        self.bioavailability
    }

    pub fn distribution_volume(&self) -> f64 {
        self.distribution_volume
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// Same formulation with `k1`, `k2` and `kcl` multiplied by the given factors.
    pub fn perturbed(&self, k1_factor: f64, k2_factor: f64, clearance_factor: f64) -> Result<Self> {
        Self::new(
            format!("{}*", self.name),
            self.bioavailability,
            self.distribution_volume,
            self.clearance * clearance_factor,
            self.k1 * k1_factor,
            self.k2 * k2_factor,
        )
    }

    /// Prefactor turning the bracketed exponential sum into mU/L.
    pub fn concentration_scale(&self, subject: Subject) -> f64 {
        1000.0 * self.bioavailability * self.k2 * self.k1
            / (subject.body_weight()
                * self.distribution_volume
                * self.clearance
                * (self.k2 - self.k1))
    }
}

#[derive(Debug, Deserialize)]
struct DrugRecord {
    #[serde(rename = "F")]
    bioavailability: f64,
    #[serde(rename = "Vi")]
    distribution_volume: f64,
    kcl: f64,
    k1: f64,
    k2: f64,
}

/// Parse a drug table: one TOML table per formulation.
///
/// ```toml
/// [degludec]
/// F = 1.0
/// Vi = 0.1
/// kcl = 0.20
/// k1 = 0.00068
/// k2 = 0.0024
/// ```
pub fn parse_drug_table(text: &str) -> Result<Vec<DrugParams>> {
    let table: BTreeMap<String, DrugRecord> = toml::from_str(text).map_err(|source| Error::Toml {
        context: "drug table".into(),
        source,
    })?;
    table
        .into_iter()
        .map(|(name, r)| {
            DrugParams::new(name, r.bioavailability, r.distribution_volume, r.kcl, r.k1, r.k2)
        })
        .collect()
}

pub fn load_drug_table(path: &std::path::Path) -> Result<Vec<DrugParams>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_drug_table(&text)
}

/// A single subcutaneous injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseEvent {
    /// Minutes since start of therapy.
    pub time: Minutes,
    /// Insulin units (U).
    pub units: f64,
}

impl DoseEvent {
    pub fn new(time: Minutes, units: f64) -> Result<Self> {
        if !(units.is_finite() && units >= 0.0) {
            return Err(Error::invalid(format!("dose units must be >= 0, got {units}")));
        }
        Ok(Self { time, units })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    body_weight: f64,
}

impl Subject {
    pub fn new(body_weight: f64) -> Result<Self> {
        if !(body_weight.is_finite() && body_weight > 0.0) {
            return Err(Error::invalid(format!(
                "body weight must be > 0 kg, got {body_weight}"
            )));
        }
        Ok(Self { body_weight })
    }

    /// Body weight in kg.
    pub fn body_weight(&self) -> f64 {
        self.body_weight
    }
}

/// Dose contributions older than this are negligible (`e^{-k1·window}` ≈ 1e-6 for degludec).
pub const TRUNCATION_WINDOW: Minutes = 14 * MINUTES_PER_DAY;

/// Plasma insulin (mU/L) at time `t` from the full dose history.
pub fn plasma_insulin(doses: &[DoseEvent], t: Minutes, drug: &DrugParams, subject: Subject) -> Result<f64> {
    insulin_sum(doses, t, drug, subject, None)
}

/// Like [`plasma_insulin`] but ignoring doses given more than `window` minutes before `t`.
///
/// The dropped mass is bounded by `scale · e^{−k1·window} · Σ u_k`.
pub fn plasma_insulin_truncated(
    doses: &[DoseEvent],
    t: Minutes,
    drug: &DrugParams,
    subject: Subject,
    window: Minutes,
) -> Result<f64> {
    insulin_sum(doses, t, drug, subject, Some(window))
}

fn insulin_sum(
    doses: &[DoseEvent],
    t: Minutes,
    drug: &DrugParams,
    subject: Subject,
    window: Option<Minutes>,
) -> Result<f64> {
    let mut sum = 0.0;
    for dose in doses {
        if dose.time > t {
            return Err(Error::DoseAfterEvaluation {
                dose_time: dose.time,
                t,
            });
        }
        let elapsed = t - dose.time;
        if window.is_some_and(|w| elapsed > w) {
            continue;
        }
        let dt = elapsed as f64;
        sum += ((-drug.k1 * dt).exp() - (-drug.k2 * dt).exp()) * dose.units;
    }
    Ok(drug.concentration_scale(subject) * sum)
}

/// Apparent elimination half-time, `1/k1` minutes.
pub fn half_life(drug: &DrugParams) -> f64 {
    1.0 / drug.k1
}

/// Time after injection at which plasma insulin peaks under periodic dosing.
pub fn time_to_peak(drug: &DrugParams, injection_period: Minutes) -> Result<f64> {
    if injection_period <= 0 {
        return Err(Error::invalid(format!(
            "injection period must be positive, got {injection_period}"
        )));
    }
    let (k1, k2) = (drug.k1, drug.k2);
    let period = injection_period as f64;
    let accumulation = (-(-k1 * period).exp_m1()) / (-(-k2 * period).exp_m1());
    Ok(((k1 / k2).ln() - accumulation.ln()) / (k1 - k2))
}

/// Time-averaged steady-state concentration for `units` injected every `injection_period`.
pub fn steady_state_avg(drug: &DrugParams, units: f64, injection_period: Minutes, subject: Subject) -> f64 {
    1000.0 * drug.bioavailability * units
        / (subject.body_weight() * drug.distribution_volume * drug.clearance * injection_period as f64)
}

/// Running evaluation of the exponential sums for time-ordered doses and queries.
///
/// Advancing from `t` to `t'` multiplies each sum by `e^{−k(t'−t)}`, so a year of
/// daily doses is evaluated in O(doses + queries) without truncation.
#[derive(Debug, Clone)]
pub struct InsulinAccumulator {
    k1: f64,
    k2: f64,
    scale: f64,
    time: Minutes,
    slow: f64,
    fast: f64,
}

impl InsulinAccumulator {
    pub fn new(drug: &DrugParams, subject: Subject, start: Minutes) -> Self {
        Self {
            k1: drug.k1,
            k2: drug.k2,
            scale: drug.concentration_scale(subject),
            time: start,
            slow: 0.0,
            fast: 0.0,
        }
    }

    pub fn time(&self) -> Minutes {
        self.time
    }

    /// Move the clock forward; moving backwards is an error.
    pub fn advance_to(&mut self, t: Minutes) -> Result<()> {
        if t < self.time {
            return Err(Error::invalid(format!(
                "accumulator cannot move backwards from {} to {t}",
                self.time
            )));
        }
        let dt = (t - self.time) as f64;
        self.slow *= (-self.k1 * dt).exp();
        self.fast *= (-self.k2 * dt).exp();
        self.time = t;
        Ok(())
    }

    /// Inject `units` at the current time.
    pub fn inject(&mut self, units: f64) {
        self.slow += units;
        self.fast += units;
    }

    /// Apply a dose, advancing the clock to its time first.
    pub fn apply(&mut self, dose: &DoseEvent) -> Result<()> {
        self.advance_to(dose.time)?;
        self.inject(dose.units);
        Ok(())
    }

    pub fn concentration(&self) -> f64 {
        self.scale * (self.slow - self.fast)
    }
}

/// Plasma insulin at each of the ascending `times`, from a time-ordered dose history.
pub fn insulin_at_times(
    doses: &[DoseEvent],
    times: &[Minutes],
    drug: &DrugParams,
    subject: Subject,
) -> Result<Vec<f64>> {
    let start = doses
        .first()
        .map(|d| d.time)
        .into_iter()
        .chain(times.first().copied())
        .min()
        .unwrap_or(0);
    let mut acc = InsulinAccumulator::new(drug, subject, start);
    let mut pending = doses.iter().peekable();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while let Some(dose) = pending.next_if(|d| d.time <= t) {
            acc.apply(dose)?;
        }
        acc.advance_to(t)?;
        out.push(acc.concentration());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn daily_doses(units: f64, days: i64) -> Vec<DoseEvent> {
        (0..days)
            .map(|d| DoseEvent::new(d * MINUTES_PER_DAY, units).unwrap())
            .collect()
    }

    fn subject90() -> Subject {
        Subject::new(90.0).unwrap()
    }

    #[test]
    fn empty_history_is_zero() {
        let drug = DrugParams::degludec();
        for t in [0, 17, 100_000] {
            assert_eq!(plasma_insulin(&[], t, &drug, subject90()).unwrap(), 0.0);
        }
    }

    #[test]
    fn dose_at_evaluation_time_contributes_nothing() {
        let drug = DrugParams::degludec();
        let doses = [DoseEvent::new(600, 40.0).unwrap()];
        assert_eq!(plasma_insulin(&doses, 600, &drug, subject90()).unwrap(), 0.0);
    }

    #[test]
    fn rejects_future_dose_and_degenerate_rates() {
        let drug = DrugParams::degludec();
        let doses = [DoseEvent::new(601, 1.0).unwrap()];
        assert!(matches!(
            plasma_insulin(&doses, 600, &drug, subject90()),
            Err(Error::DoseAfterEvaluation { .. })
        ));
        assert!(DrugParams::new("flat", 1.0, 0.1, 0.2, 0.002, 0.002).is_err());
        assert!(DrugParams::new("inverted", 1.0, 0.1, 0.2, 0.003, 0.002).is_err());
        assert!(DrugParams::new("neg", 1.0, -0.1, 0.2, 0.001, 0.002).is_err());
        assert!(Subject::new(0.0).is_err());
        assert!(DoseEvent::new(0, -1.0).is_err());
    }

    #[test]
    fn half_life_values() {
        assert!((half_life(&DrugParams::degludec()) - 1470.588).abs() < 1e-2);
        assert!((half_life(&DrugParams::glargine_100()) - 1492.537).abs() < 1e-2);
        let d = DrugParams::new("x", 1.0, 0.1, 0.2, 0.001, 0.002).unwrap();
        assert!((half_life(&d) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn steady_state_average_degludec() {
        let drug = DrugParams::degludec();
        let avg = steady_state_avg(&drug, 50.0, MINUTES_PER_DAY, subject90());
        assert!((avg - 19.290).abs() < 1e-3, "{avg}");
        assert_eq!(steady_state_avg(&drug, 0.0, MINUTES_PER_DAY, subject90()), 0.0);
        let double = steady_state_avg(&drug, 100.0, MINUTES_PER_DAY, subject90());
        assert!((double - 2.0 * avg).abs() < 1e-12);
    }

    #[test]
    fn long_run_daily_average_matches_analytic_average() {
        // Oracle: brute-force trapezoidal average over the last day, 1-minute grid.
        let drug = DrugParams::degludec();
        let doses = daily_doses(50.0, 60);
        let start = 59 * MINUTES_PER_DAY;
        let samples: Vec<f64> = (0..=MINUTES_PER_DAY)
            .map(|m| plasma_insulin(&doses, start + m, &drug, subject90()).unwrap())
            .collect();
        let area: f64 = samples.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        let avg = area / MINUTES_PER_DAY as f64;
        assert!((avg - 19.29).abs() < 0.05, "{avg}");
    }

    #[test]
    fn time_to_peak_degludec_daily() {
        let t = time_to_peak(&DrugParams::degludec(), MINUTES_PER_DAY).unwrap();
        assert!((t - 478.0).abs() < 1.0, "{t}");
        assert!(time_to_peak(&DrugParams::degludec(), 0).is_err());
    }

    #[test]
    fn time_to_peak_lies_inside_period() {
        for drug in DrugParams::presets() {
            let t = time_to_peak(&drug, MINUTES_PER_DAY).unwrap();
            assert!(t > 0.0 && t < MINUTES_PER_DAY as f64, "{} {t}", drug.name());
        }
    }

    #[test]
    fn truncation_error_is_bounded() {
        let drug = DrugParams::degludec();
        let doses = daily_doses(80.0, 120);
        let t = 120 * MINUTES_PER_DAY;
        let full = plasma_insulin(&doses, t, &drug, subject90()).unwrap();
        let trunc = plasma_insulin_truncated(&doses, t, &drug, subject90(), TRUNCATION_WINDOW).unwrap();
        let total_units: f64 = doses.iter().map(|d| d.units).sum();
        let bound = drug.concentration_scale(subject90())
            * (-drug.k1() * TRUNCATION_WINDOW as f64).exp()
            * total_units;
        assert!(trunc <= full);
        assert!(full - trunc <= bound, "{} > {bound}", full - trunc);
        assert!((full - trunc) / full < 1e-4);
    }

    #[test]
    fn accumulator_matches_direct_summation() {
        let drug = DrugParams::glargine_300();
        let doses: Vec<DoseEvent> = (0..30)
            .map(|d| DoseEvent::new(d * MINUTES_PER_DAY + 420, 10.0 + d as f64).unwrap())
            .collect();
        let times: Vec<Minutes> = (0..40).map(|d| d * MINUTES_PER_DAY + 420).collect();
        let fast = insulin_at_times(&doses, &times, &drug, subject90()).unwrap();
        for (t, got) in times.iter().zip(&fast) {
            let upto: Vec<DoseEvent> = doses.iter().copied().filter(|d| d.time <= *t).collect();
            let want = plasma_insulin(&upto, *t, &drug, subject90()).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{t}: {got} vs {want}");
        }
    }

    #[test]
    fn drug_table_round_trip() {
        let text = r#"
            [degludec]
            F = 1.0
            Vi = 0.1
            kcl = 0.20
            k1 = 0.00068
            k2 = 0.0024

            [weekly]
            F = 0.9
            Vi = 0.12
            kcl = 0.1
            k1 = 0.0001
            k2 = 0.0009
        "#;
        let drugs = parse_drug_table(text).unwrap();
        assert_eq!(drugs.len(), 2);
        assert_eq!(drugs[0], DrugParams::degludec());
        assert_eq!(drugs[1].name(), "weekly");
        assert!(parse_drug_table("[bad]\nF = 1.0\nVi = 0.1\nkcl = 0.2\nk1 = 0.01\nk2 = 0.001\n").is_err());
    }

    #[test]
    fn preset_lookup() {
        assert_eq!(DrugParams::preset("Degludec"), Some(DrugParams::degludec()));
        assert!(DrugParams::preset("nph").is_none());
    }
}
