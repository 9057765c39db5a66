//! Virtual clinical trial harness.

pub mod config;
pub mod export;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use config::{PriorConfig, TrialConfig};
pub use export::{export_results, recompute_summary, render_report, RunSummary, ScenarioSummary};
pub use metrics::{attainment, compute_metrics, gmi, MetricsReport, TargetAttainment, WindowMetrics};
pub use run::{run_scenario, simulate_avatar, AvatarRun, DayRecord, RunSettings, ScenarioResult};
pub use scenario::{PolicyKind, Schedule, ScenarioSpec};

impl TrialConfig {
    pub fn run_settings(&self) -> crate::Result<RunSettings> {
        Ok(RunSettings {
            titration: self.titration,
            prior: self.prior_spec(),
            drug: self.resolve_drug()?,
            initial_dose: self.initial_dose,
            keep_traces: self.keep_traces,
        })
    }
}
