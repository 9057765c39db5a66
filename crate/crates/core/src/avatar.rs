//! Synthetic type 2 diabetes avatars used as the simulated plant.
//!
//! The ground truth is deliberately richer than the controller's linear model:
//! insulin action saturates (`S·I / (1 + I/I50)`), each avatar absorbs insulin
//! with its own perturbed rate constants, fasting glucose is perturbed daily and
//! the day's CGM trace carries four meal excursions.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fasting::fasting_time;
use crate::pk::{plasma_insulin, steady_state_avg, DoseEvent, DrugParams, Subject};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::{Minutes, MINUTES_PER_DAY, SAMPLE_MINUTES};

pub const SAMPLES_PER_DAY: usize = (MINUTES_PER_DAY / SAMPLE_MINUTES) as usize;

/// Meal clock times (minute of day) and their share of daily carbohydrates:
/// breakfast, lunch, afternoon snack, dinner.
pub const MEAL_TIMES: [Minutes; 4] = [7 * 60 + 30, 12 * 60 + 30, 15 * 60 + 30, 18 * 60 + 30];
pub const MEAL_RATIOS: [f64; 4] = [0.3, 0.3, 0.1, 0.3];

/// Fasting glucose the dose requirement of an avatar is defined against.
const REFERENCE_FBG: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealResponse {
    /// Peak excursion per gram of carbohydrate (mg/dL/g).
    pub per_gram: f64,
    pub rise_minutes: f64,
    pub decay_minutes: f64,
}

impl MealResponse {
    /// Rise-and-decay kernel normalised to a peak of one.
    pub fn kernel(&self, elapsed: f64) -> f64 {
        if elapsed < 0.0 {
            return 0.0;
        }
        let raw = |s: f64| (-s / self.decay_minutes).exp() - (-s / self.rise_minutes).exp();
        raw(elapsed) / raw(self.peak_minutes())
    }

    pub fn peak_minutes(&self) -> f64 {
        let (r, d) = (self.rise_minutes, self.decay_minutes);
        (d / r).ln() * r * d / (d - r)
    }

    /// Integral of the unit-peak kernel (minutes).
    pub fn kernel_area(&self) -> f64 {
        let (r, d) = (self.rise_minutes, self.decay_minutes);
        let raw_peak = (-self.peak_minutes() / d).exp() - (-self.peak_minutes() / r).exp();
        (d - r) / raw_peak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Avatar {
    pub id: u32,
    /// kg.
    pub body_weight: f64,
    /// Fasting glucose at zero insulin, B0 (mg/dL).
    pub baseline_fbg: f64,
    /// Baseline HbA1c (%), used to calibrate meal excursions.
    pub baseline_hba1c: f64,
    /// Low-insulin slope of the insulin effect, S (mg/dL per mU/L).
    pub insulin_effect: f64,
    /// Half-effect plasma insulin, I50 (mU/L).
    pub saturation: f64,
    /// mg/dL.
    pub glucose_floor: f64,
    /// Standard deviation of the daily fasting perturbation (mg/dL).
    pub fasting_sd: f64,
    /// g/day.
    pub daily_carbs: f64,
    pub meal_ratios: [f64; 4],
    pub meal: MealResponse,
    /// Multipliers on (k1, k2, kcl) of the nominal formulation.
    pub pk_factors: [f64; 3],
    /// Log-scale SD of fingerstick error.
    pub smbg_sigma: f64,
    /// CGM sensor noise SD (mg/dL).
    pub cgm_noise_sd: f64,
    pub seed: u64,
}

impl Avatar {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::Invariant {
                avatar: self.id,
                reason: reason.to_string(),
            })
        };
        if !(self.glucose_floor > 0.0 && self.baseline_fbg > self.glucose_floor) {
            return fail("need baseline_fbg > glucose_floor > 0");
        }
        if !(self.insulin_effect > 0.0 && self.saturation > 0.0 && self.saturation.is_finite()) {
            return fail("insulin effect and saturation must be positive and finite");
        }
        if !(self.fasting_sd >= 0.0 && self.smbg_sigma >= 0.0 && self.cgm_noise_sd >= 0.0) {
            return fail("noise levels must be non-negative");
        }
        if !(self.body_weight > 0.0 && self.daily_carbs >= 0.0) {
            return fail("body weight must be positive and carbs non-negative");
        }
        if (self.meal_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail("meal ratios must sum to one");
        }
        if !(self.meal.per_gram >= 0.0 && self.meal.rise_minutes > 0.0 && self.meal.decay_minutes > self.meal.rise_minutes) {
            return fail("meal response needs per_gram >= 0 and 0 < rise < decay");
        }
        if !self.pk_factors.iter().all(|f| f.is_finite() && *f > 0.0) {
            return fail("pk factors must be positive");
        }
        Ok(())
    }

    pub fn subject(&self) -> Subject {
        Subject::new(self.body_weight).expect("validated body weight")
    }

    /// The avatar's own absorption kinetics for a nominal formulation.
    pub fn drug(&self, nominal: &DrugParams) -> Result<DrugParams> {
        let [k1, k2, kcl] = self.pk_factors;
        nominal.perturbed(k1, k2, kcl)
    }

    /// Glucose lowering at plasma insulin `insulin`.
    pub fn insulin_action(&self, insulin: f64) -> f64 {
        self.insulin_effect * insulin / (1.0 + insulin / self.saturation)
    }

    /// Fasting perturbation ε for `day`.
    pub fn fasting_perturbation(&self, day: i64) -> f64 {
        if self.fasting_sd == 0.0 {
            return 0.0;
        }
        let mut rng = stream_rng(self.seed, day as u64, Stream::FastingPerturbation);
        let z: f64 = StandardNormal.sample(&mut rng);
        self.fasting_sd * z
    }

    /// True fasting glucose given the plasma insulin at that morning.
    pub fn fasting_from_insulin(&self, insulin: f64, day: i64) -> f64 {
        (self.baseline_fbg - self.insulin_action(insulin) + self.fasting_perturbation(day)).max(self.glucose_floor)
    }

    /// Copy with all day-to-day randomness switched off.
    pub fn without_variability(&self) -> Self {
        Self {
            fasting_sd: 0.0,
            smbg_sigma: 0.0,
            cgm_noise_sd: 0.0,
            ..self.clone()
        }
    }

    /// Steady-state average insulin for `units` daily under this avatar's kinetics.
    pub fn steady_insulin(&self, units: f64, nominal: &DrugParams) -> Result<f64> {
        Ok(steady_state_avg(&self.drug(nominal)?, units, MINUTES_PER_DAY, self.subject()))
    }
}

/// Statistics a generated population is calibrated to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationTargets {
    pub n: usize,
    pub hba1c_mean: f64,
    pub hba1c_sd: f64,
    pub fbg_mean: f64,
    pub fbg_sd: f64,
}

impl Default for PopulationTargets {
    fn default() -> Self {
        Self {
            n: 427,
            hba1c_mean: 8.3,
            hba1c_sd: 1.0,
            fbg_mean: 169.0,
            fbg_sd: 49.0,
        }
    }
}

impl PopulationTargets {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("population size must be at least 1"));
        }
        if !(self.hba1c_sd >= 0.0 && self.fbg_sd >= 0.0 && self.fbg_mean > 0.0 && self.hba1c_mean > 0.0) {
            return Err(Error::invalid("population targets need positive means and non-negative sds"));
        }
        Ok(())
    }
}

/// Mean glucose (mg/dL) whose glucose management indicator equals `hba1c`.
fn glucose_for_hba1c(hba1c: f64) -> f64 {
    (hba1c - 3.31) / 0.02392
}

fn truncated_normal(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if (lo..=hi).contains(&z) {
            return z;
        }
    }
}

/// Rescale to zero sample mean and unit sample SD (n ≥ 2).
fn standardize(z: &mut [f64]) {
    if z.len() < 2 {
        z.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for v in z.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Generate a deterministic population whose baseline FBG and HbA1c match `targets`.
///
/// Baseline scores are moment-matched to the targets; each avatar's insulin
/// effect is chosen so that the daily dose needed to bring fasting glucose to
/// 100 mg/dL follows a log-normal distribution clipped to 10–200 U.
pub fn generate_population(targets: &PopulationTargets, master_seed: u64, nominal: &DrugParams) -> Result<Vec<Avatar>> {
    targets.validate()?;
    let n = targets.n;
    let mut rngs: Vec<_> = (0..n as u64).map(|i| stream_rng(master_seed, i, Stream::AvatarTraits)).collect();

    let mut fbg_z: Vec<f64> = rngs.iter_mut().map(|r| truncated_normal(r, -1.6, 3.0)).collect();
    standardize(&mut fbg_z);
    const HBA1C_FBG_CORRELATION: f64 = 0.7;
    let mut hba1c_z: Vec<f64> = rngs
        .iter_mut()
        .zip(&fbg_z)
        .map(|(r, zf)| {
            let e: f64 = StandardNormal.sample(r);
            HBA1C_FBG_CORRELATION * zf + (1.0 - HBA1C_FBG_CORRELATION.powi(2)).sqrt() * e
        })
        .collect();
    standardize(&mut hba1c_z);

    let mut population = Vec::with_capacity(n);
    for (i, rng) in rngs.iter_mut().enumerate() {
        let baseline_fbg = targets.fbg_mean + targets.fbg_sd * fbg_z[i];
        let baseline_hba1c = targets.hba1c_mean + targets.hba1c_sd * hba1c_z[i];
        let body_weight = Normal::new(90.0f64, 15.0).unwrap().sample(rng).clamp(55.0, 150.0);
        let daily_carbs = Normal::new(200.0f64, 40.0).unwrap().sample(rng).clamp(100.0, 350.0);
        let rise_minutes = rng.random_range(20.0..40.0);
        let decay_minutes = rng.random_range(70.0..120.0);
        let mut meal = MealResponse {
            per_gram: 0.0,
            rise_minutes,
            decay_minutes,
        };
        let mean_excursion = (glucose_for_hba1c(baseline_hba1c) - baseline_fbg).clamp(15.0, 100.0);
        meal.per_gram = mean_excursion * MINUTES_PER_DAY as f64 / (daily_carbs * meal.kernel_area());

        let pk_factors = [(); 3].map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (0.1 * z).exp()
        });
        let required_dose = (55.0 * (0.6 * Distribution::<f64>::sample(&StandardNormal, rng)).exp()).clamp(10.0, 200.0);

        let mut avatar = Avatar {
            id: i as u32,
            body_weight,
            baseline_fbg,
            baseline_hba1c,
            insulin_effect: 1.0,
            saturation: 40.0,
            glucose_floor: 40.0,
            fasting_sd: 20.0,
            daily_carbs,
            meal_ratios: MEAL_RATIOS,
            meal,
            pk_factors,
            smbg_sigma: 0.05,
            cgm_noise_sd: 2.0,
            seed: derive_seed(master_seed, i as u64, Stream::AvatarSeed),
        };
        let insulin = avatar.steady_insulin(required_dose, nominal)?;
        let drop = (baseline_fbg - REFERENCE_FBG).max(15.0);
        avatar.insulin_effect = drop * (1.0 + insulin / avatar.saturation) / insulin;
        avatar.validate()?;
        population.push(avatar);
    }
    Ok(population)
}

/// Ground-truth fasting glucose on `day` from the full dose history.
pub fn true_fbg(avatar: &Avatar, doses: &[DoseEvent], day: i64, nominal: &DrugParams) -> Result<f64> {
    if day < 0 {
        return Err(Error::invalid(format!("day must be >= 0, got {day}")));
    }
    let insulin = plasma_insulin(doses, fasting_time(day), &avatar.drug(nominal)?, avatar.subject())?;
    Ok(avatar.fasting_from_insulin(insulin, day))
}

/// One day of 5-minute CGM samples starting at midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlucoseTrace {
    pub start: Minutes,
    pub samples: Vec<f64>,
}

impl GlucoseTrace {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Meal excursion (mg/dL) at `minute` of the day, including the previous evening's tail.
pub fn meal_excursion(avatar: &Avatar, minute: f64) -> f64 {
    let day_offset = MINUTES_PER_DAY as f64;
    MEAL_TIMES
        .iter()
        .zip(avatar.meal_ratios)
        .map(|(&t, ratio)| {
            let amplitude = avatar.daily_carbs * ratio * avatar.meal.per_gram;
            let since = minute - t as f64;
            amplitude * (avatar.meal.kernel(since) + avatar.meal.kernel(since + day_offset))
        })
        .sum()
}

/// CGM trace for `day`, anchored at the day's fasting level.
pub fn cgm_day(avatar: &Avatar, fasting_level: f64, day: i64) -> GlucoseTrace {
    let mut rng = stream_rng(avatar.seed, day as u64, Stream::CgmNoise);
    let floor = 0.9 * avatar.glucose_floor;
    let samples = (0..SAMPLES_PER_DAY)
        .map(|k| {
            let minute = (k as Minutes * SAMPLE_MINUTES) as f64;
            let noise = if avatar.cgm_noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                avatar.cgm_noise_sd * z
            } else {
                0.0
            };
            (fasting_level + meal_excursion(avatar, minute) + noise).max(floor)
        })
        .collect();
    GlucoseTrace {
        start: day * MINUTES_PER_DAY,
        samples,
    }
}

/// Fingerstick reading of `true_value`, with multiplicative log-normal error.
pub fn measure_smbg(avatar: &Avatar, true_value: f64, day: i64) -> f64 {
    if avatar.smbg_sigma == 0.0 {
        return true_value;
    }
    let mut rng = stream_rng(avatar.seed, day as u64, Stream::Smbg);
    let z: f64 = StandardNormal.sample(&mut rng);
    true_value * (avatar.smbg_sigma * z).exp()
}

/// Write one JSON avatar record per line.
pub fn write_population(path: &Path, population: &[Avatar]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for avatar in population {
        let line = serde_json::to_string(avatar).map_err(|source| Error::Json {
            context: format!("avatar {}", avatar.id),
            source,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_population(path: &Path) -> Result<Vec<Avatar>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut population = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let avatar: Avatar = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source,
        })?;
        avatar.validate()?;
        population.push(avatar);
    }
    Ok(population)
}
