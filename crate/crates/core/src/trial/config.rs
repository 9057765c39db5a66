//! Harness configuration file (TOML).
//!
//! Every key is optional; omitted keys take the defaults shown below.
//!
//! ```toml
//! drug = "degludec"          # preset name, or a table name in `drug_file`
//! # drug_file = "drugs.toml"
//! initial_dose = 0.0         # U, dose before the first titration
//! miss_probability = 0.0     # chance that a scheduled reading is skipped
//! keep_traces = false        # retain raw CGM traces for export
//!
//! [titration]
//! fbg_low = 72.0
//! fbg_high = 90.0
//! gamma = 250.0
//! xi = 100.0
//! alpha = 1.65
//! horizon_days = 10
//! beta = 0.15
//! du_min = 1.0
//! soc_step = 2.0
//!
//! [prior]
//! p0 = 150.0
//! p1 = 5.0
//! p2 = 0.15
//! eta0 = 0.25
//! eta1 = 0.5
//! eta2 = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::TitrationConfig;
use crate::error::{Error, Result};
use crate::fasting::{ModelParams, PriorSpec};
use crate::pk::{load_drug_table, DrugParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let prior = PriorSpec::default();
        Self {
            p0: prior.mean.p0,
            p1: prior.mean.p1,
            p2: prior.mean.p2,
            eta0: prior.log_sd[0],
            eta1: prior.log_sd[1],
            eta2: prior.log_sd[2],
        }
    }
}

impl From<PriorConfig> for PriorSpec {
    fn from(c: PriorConfig) -> Self {
        PriorSpec {
            mean: ModelParams {
                p0: c.p0,
                p1: c.p1,
                p2: c.p2,
            },
            log_sd: [c.eta0, c.eta1, c.eta2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub drug: String,
    pub drug_file: Option<PathBuf>,
    pub initial_dose: f64,
    pub miss_probability: f64,
    pub keep_traces: bool,
    pub titration: TitrationConfig,
    pub prior: PriorConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            drug: "degludec".into(),
            drug_file: None,
            initial_dose: 0.0,
            miss_probability: 0.0,
            keep_traces: false,
            titration: TitrationConfig::default(),
            prior: PriorConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|source| Error::Toml {
            context: "trial configuration".into(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        // Relative drug files resolve against the config file's directory.
        if let (Some(file), Some(dir)) = (config.drug_file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.titration.validate()?;
        self.prior_spec().validate()?;
        if !(self.initial_dose.is_finite() && self.initial_dose >= 0.0) {
            return Err(Error::Config(format!("initial dose must be >= 0, got {}", self.initial_dose)));
        }
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(Error::Config("miss_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn prior_spec(&self) -> PriorSpec {
        self.prior.into()
    }

    /// The selected formulation: a drug-file entry if present, else a built-in preset.
    pub fn resolve_drug(&self) -> Result<DrugParams> {
        if let Some(path) = &self.drug_file {
            if let Some(drug) = load_drug_table(path)?.into_iter().find(|d| d.name() == self.drug) {
                return Ok(drug);
            }
        }
        DrugParams::preset(&self.drug).ok_or_else(|| Error::Config(format!("unknown drug {:?}", self.drug)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = TrialConfig::parse("").unwrap();
        assert_eq!(c, TrialConfig::default());
        assert_eq!(c.prior_spec(), PriorSpec::default());
        assert_eq!(c.resolve_drug().unwrap(), DrugParams::degludec());
    }

    #[test]
    fn documented_example_parses() {
        let text = r#"
            drug = "glargine-300"
            initial_dose = 10.0
            [titration]
            gamma = 100.0
            horizon_days = 7
            [prior]
            p1 = 4.0
        "#;
        let c = TrialConfig::parse(text).unwrap();
        assert_eq!(c.titration.gamma, 100.0);
        assert_eq!(c.titration.horizon_days, 7);
        assert_eq!(c.titration.fbg_low, 72.0);
        assert_eq!(c.prior.p1, 4.0);
        assert_eq!(c.resolve_drug().unwrap(), DrugParams::glargine_300());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(TrialConfig::parse("[titration]\nfbg_low = 95.0\n").is_err());
        assert!(TrialConfig::parse("unknown_key = 1\n").is_err());
        assert!(TrialConfig::parse("drug = \"nph\"\n").unwrap().resolve_drug().is_err());
        assert!(TrialConfig::parse("[prior]\neta1 = 0.0\n").is_err());
    }

    #[test]
    fn drug_file_entries_are_found() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("drugs.toml"),
            "[weekly]\nF = 1.0\nVi = 0.1\nkcl = 0.2\nk1 = 0.0001\nk2 = 0.0006\n",
        )
        .unwrap();
        let cfg = dir.path().join("trial.toml");
        std::fs::write(&cfg, "drug = \"weekly\"\ndrug_file = \"drugs.toml\"\n").unwrap();
        let c = TrialConfig::load(&cfg).unwrap();
        assert_eq!(c.resolve_drug().unwrap().name(), "weekly");
    }
}
