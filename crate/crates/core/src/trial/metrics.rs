//! Glycemic outcome metrics over 14-day windows and target attainment.

use serde::{Deserialize, Serialize};

use crate::avatar::GlucoseTrace;
use crate::error::{Error, Result};

pub const WINDOW_DAYS: usize = 14;
pub const RANGE_LOW: f64 = 70.0;
pub const RANGE_HIGH: f64 = 180.0;
pub const LEVEL2_HYPO: f64 = 54.0;

/// Glucose management indicator (%) from mean CGM glucose (mg/dL).
pub fn gmi(mean_glucose: f64) -> f64 {
    3.31 + 0.02392 * mean_glucose
}

/// Per-day CGM tallies; enough to rebuild any window statistic exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyCgm {
    pub samples: u32,
    pub in_range: u32,
    pub below: u32,
    pub sum: f64,
}

impl DailyCgm {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut day = DailyCgm::default();
        for &g in samples {
            day.samples += 1;
            day.sum += g;
            if g < RANGE_LOW {
                day.below += 1;
            } else if g <= RANGE_HIGH {
                day.in_range += 1;
            }
        }
        day
    }

    pub fn tir(&self) -> f64 {
        100.0 * self.in_range as f64 / self.samples as f64
    }

    pub fn tbr(&self) -> f64 {
        100.0 * self.below as f64 / self.samples as f64
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.samples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub index: usize,
    pub start_day: usize,
    /// Exclusive.
    pub end_day: usize,
    /// % of CGM samples in 70–180 mg/dL.
    pub tir: f64,
    /// % of CGM samples below 70 mg/dL.
    pub tbr: f64,
    pub mean_cgm: f64,
    pub gmi: f64,
    pub mean_fbg: f64,
    /// Fasting values below 54 mg/dL.
    pub level2_count: u32,
    /// Basal insulin injected in the window (U).
    pub total_insulin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub windows: Vec<WindowMetrics>,
}

impl MetricsReport {
    /// Window ending at the end of `week` (weeks counted from therapy start).
    pub fn checkpoint(&self, week: usize) -> Option<&WindowMetrics> {
        let end = week * 7;
        self.windows.iter().find(|w| w.end_day == end)
    }
}

/// Metrics from raw daily traces, daily fasting values and daily doses.
pub fn compute_metrics(traces: &[GlucoseTrace], fbg_log: &[f64], dose_log: &[f64]) -> Result<MetricsReport> {
    if traces.is_empty() {
        return Err(Error::invalid("no CGM traces"));
    }
    let daily: Vec<DailyCgm> = traces.iter().map(|t| DailyCgm::from_samples(&t.samples)).collect();
    metrics_from_daily(&daily, fbg_log, dose_log)
}

pub fn metrics_from_daily(daily: &[DailyCgm], fbg_log: &[f64], dose_log: &[f64]) -> Result<MetricsReport> {
    let days = daily.len();
    if fbg_log.len() != days || dose_log.len() != days {
        return Err(Error::invalid(format!(
            "day counts differ: {days} CGM days, {} fasting values, {} doses",
            fbg_log.len(),
            dose_log.len()
        )));
    }
    if days < WINDOW_DAYS {
        return Err(Error::invalid(format!("need at least {WINDOW_DAYS} days, got {days}")));
    }
    if daily.iter().any(|d| d.samples == 0) {
        return Err(Error::invalid("empty CGM day"));
    }
    let windows = (0..days / WINDOW_DAYS)
        .map(|index| {
            let range = index * WINDOW_DAYS..(index + 1) * WINDOW_DAYS;
            let mut total = DailyCgm::default();
            for d in &daily[range.clone()] {
                total.samples += d.samples;
                total.in_range += d.in_range;
                total.below += d.below;
                total.sum += d.sum;
            }
            let fbg = &fbg_log[range.clone()];
            WindowMetrics {
                index,
                start_day: range.start,
                end_day: range.end,
                tir: total.tir(),
                tbr: total.tbr(),
                mean_cgm: total.mean(),
                gmi: gmi(total.mean()),
                mean_fbg: fbg.iter().sum::<f64>() / fbg.len() as f64,
                level2_count: fbg.iter().filter(|&&f| f < LEVEL2_HYPO).count() as u32,
                total_insulin: dose_log[range].iter().sum(),
            }
        })
        .collect();
    Ok(MetricsReport { windows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetAttainment {
    /// Mean fasting glucose within 80–130 mg/dL.
    pub fasting: bool,
    /// GMI below 7% and no fasting value below 54 mg/dL.
    pub hba1c: bool,
    /// TIR above 70% and TBR below 4%.
    pub cgm: bool,
}

pub fn attainment(window: &WindowMetrics) -> TargetAttainment {
    TargetAttainment {
        fasting: (80.0..=130.0).contains(&window.mean_fbg),
        hba1c: window.gmi < 7.0 && window.level2_count == 0,
        cgm: window.tir > 70.0 && window.tbr < 4.0,
    }
}
