use std::path::Path;

use collusion_core::harness::ExperimentConfig;
use collusion_core::market::{CournotParams, PriceGrid};
use collusion_core::verifier::PunishmentFamily;
use serde::{Deserialize, Serialize};

/// Everything a run reads from its TOML file. Missing tables and keys take
/// their defaults, so an empty file reproduces the default experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub experiment: ExperimentConfig,
    pub cournot: CournotParams,
    pub verify: VerifySettings,
    pub sweep: SweepSettings,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            cournot: CournotParams::symmetric(10.0, 1.0, 2).expect("valid default"),
            verify: VerifySettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    /// Points of the price grid, spanning the experiment's grid range.
    pub price_points: usize,
    /// Quantity grid for the direct market.
    pub quantity_points: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub max_punishment_length: usize,
    pub max_strategies: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        let family = PunishmentFamily::default();
        Self {
            price_points: 15,
            quantity_points: 20,
            q_min: 0.0,
            q_max: 9.5,
            max_punishment_length: family.max_length,
            max_strategies: family.max_strategies,
        }
    }
}

impl VerifySettings {
    pub fn family(&self) -> PunishmentFamily {
        PunishmentFamily {
            max_length: self.max_punishment_length,
            max_strategies: self.max_strategies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Symmetric cost estimates handed to the simplified rule.
    pub estimates: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            estimates: vec![0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.25],
        }
    }
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::from_toml(&text).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.experiment.validate().map_err(|e| e.to_string())?;
        self.cournot.validate().map_err(|e| e.to_string())?;
        self.price_grid()?;
        self.quantity_grid()?;
        Ok(())
    }

    pub fn price_grid(&self) -> Result<PriceGrid, String> {
        let g = &self.experiment.grid;
        PriceGrid::new(self.verify.price_points, g.p_min, g.p_max).map_err(|e| e.to_string())
    }

    pub fn quantity_grid(&self) -> Result<PriceGrid, String> {
        let v = &self.verify;
        PriceGrid::new(v.quantity_points, v.q_min, v.q_max).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
