//! Defaults applied to patients created without explicit settings.
//!
//! ```toml
//! drug = "degludec"
//! # drug_file = "drugs.toml"
//!
//! [titration]
//! fbg_low = 72.0
//! fbg_high = 90.0
//!
//! [prior]
//! p0 = 150.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use titration_core::controller::TitrationConfig;
use titration_core::pk::{load_drug_table, DrugParams};
use titration_core::trial::PriorConfig;

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub drug: String,
    pub drug_file: Option<PathBuf>,
    pub titration: TitrationConfig,
    pub prior: PriorConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            drug: "degludec".into(),
            drug_file: None,
            titration: TitrationConfig::default(),
            prior: PriorConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| ServiceError::Invalid(format!("service configuration: {e}")))?;
        config.titration.validate()?;
        titration_core::fasting::PriorSpec::from(config.prior).validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Store {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        if let (Some(file), Some(dir)) = (config.drug_file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(config)
    }

    /// Known formulations: built-in presets plus any drug-file entries.
    pub fn drugs(&self) -> Result<Vec<DrugParams>> {
        let mut drugs = DrugParams::presets().to_vec();
        if let Some(path) = &self.drug_file {
            drugs.extend(load_drug_table(path)?);
        }
        Ok(drugs)
    }

    pub fn find_drug(&self, name: &str) -> Result<DrugParams> {
        self.drugs()?
            .into_iter()
            .rev()
            .find(|d| d.name() == name)
            .ok_or_else(|| ServiceError::Invalid(format!("unknown drug {name:?}")))
    }
}
