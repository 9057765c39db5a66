//! Titration scenarios: which policy, how many readings, how often.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "SoC")]
    Soc,
    #[serde(rename = "RHC")]
    Rhc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Days 0, 3, 7, 10, 14, … (alternating 3- and 4-day intervals).
    TwiceWeekly,
    /// Every `n` days starting at day 0.
    EveryDays(u32),
}

impl Schedule {
    pub fn is_titration_day(&self, day: i64) -> bool {
        match *self {
            Schedule::TwiceWeekly => matches!(day.rem_euclid(7), 0 | 3),
            Schedule::EveryDays(n) => day.rem_euclid(n as i64) == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub policy: PolicyKind,
    /// Consecutive daily readings ending on each titration day.
    pub fbg_window: usize,
    pub schedule: Schedule,
    pub duration_weeks: u32,
    /// Probability that a scheduled reading is skipped.
    #[serde(default)]
    pub miss_probability: f64,
}

pub const CANONICAL: [&str; 5] = ["SoC-3", "SoC-1", "RHC-3", "RHC-1", "RHC-1-acc"];

impl ScenarioSpec {
    /// One of the five canonical experiments.
    pub fn preset(name: &str) -> Result<Self> {
        let (policy, fbg_window, schedule) = match name {
            "SoC-3" => (PolicyKind::Soc, 3, Schedule::TwiceWeekly),
            "SoC-1" => (PolicyKind::Soc, 1, Schedule::TwiceWeekly),
            "RHC-3" => (PolicyKind::Rhc, 3, Schedule::TwiceWeekly),
            "RHC-1" => (PolicyKind::Rhc, 1, Schedule::TwiceWeekly),
            "RHC-1-acc" => (PolicyKind::Rhc, 1, Schedule::EveryDays(1)),
            other => return Err(Error::Config(format!("unknown scenario {other:?}; expected one of {CANONICAL:?}"))),
        };
        Ok(Self {
            name: name.to_string(),
            policy,
            fbg_window,
            schedule,
            duration_weeks: 52,
            miss_probability: 0.0,
        })
    }

    pub fn canonical() -> Vec<Self> {
        CANONICAL.iter().map(|n| Self::preset(n).expect("canonical preset")).collect()
    }

    pub fn with_weeks(mut self, weeks: u32) -> Self {
        self.duration_weeks = weeks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fbg_window == 0 || self.duration_weeks == 0 {
            return Err(Error::Config(format!("{}: window and duration must be positive", self.name)));
        }
        if let Schedule::EveryDays(0) = self.schedule {
            return Err(Error::Config(format!("{}: titration interval must be positive", self.name)));
        }
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(Error::Config(format!("{}: miss probability must lie in [0, 1]", self.name)));
        }
        Ok(())
    }

    pub fn days(&self) -> i64 {
        self.duration_weeks as i64 * 7
    }

    pub fn is_titration_day(&self, day: i64) -> bool {
        self.schedule.is_titration_day(day)
    }

    /// A reading is due if a titration falls within the next `fbg_window − 1` days.
    pub fn is_measurement_day(&self, day: i64) -> bool {
        (0..self.fbg_window as i64).any(|ahead| self.is_titration_day(day + ahead))
    }
}
