use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agent::RetrievalConfig;
use crate::baselines::BaselineConfig;
use crate::calibrate::{CalibrationConfig, InitialPersona};
use crate::env::{Scenario, TravelerId};
use crate::gateway::ProviderConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Inclusive period range written `first:last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodRange {
    pub first: u32,
    pub last: u32,
}

impl PeriodRange {
    pub fn new(first: u32, last: u32) -> Self {
        Self { first, last }
    }

    pub fn iter(self) -> std::ops::RangeInclusive<u32> {
        self.first..=self.last
    }

    pub fn len(self) -> u32 {
        self.last + 1 - self.first
    }

    pub fn is_empty(self) -> bool {
        self.last < self.first
    }
}

impl fmt::Display for PeriodRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.last)
    }
}

impl FromStr for PeriodRange {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::Invalid(format!("range must look like `81:160`, got `{s}`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let r = PeriodRange { first: a.trim().parse().map_err(|_| bad())?, last: b.trim().parse().map_err(|_| bad())? };
        if r.first < 1 || r.last < r.first {
            return Err(bad());
        }
        Ok(r)
    }
}

impl Serialize for PeriodRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeriodRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub agent: RetrievalConfig,
    pub calibration: CalibrationConfig,
    pub provider: ProviderConfig,
    pub baselines: BaselineConfig,
    /// Root of every random stream; copied into the calibration and provider sections.
    pub seed: u64,
    pub initial_persona: InitialPersona,
    pub train_range: PeriodRange,
    pub test_range: PeriodRange,
    /// Travelers to calibrate and evaluate; all of them when absent.
    pub agents: Option<Vec<TravelerId>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            agent: RetrievalConfig::default(),
            calibration: CalibrationConfig::default(),
            provider: ProviderConfig::default(),
            baselines: BaselineConfig::default(),
            seed: 0,
            initial_persona: InitialPersona::Auto,
            train_range: PeriodRange::new(1, 80),
            test_range: PeriodRange::new(81, 160),
            agents: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let mut c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.seed_everything();
        c.validate()?;
        Ok(c)
    }

    pub fn seed_everything(&mut self) {
        self.calibration.seed = self.seed;
        self.provider.seed = Some(self.seed);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.calibration.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.provider.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.agent.t_s < 1 || self.agent.t_l < self.agent.t_s {
            return Err(ConfigError::Invalid("need 1 <= t_s <= t_l".into()));
        }
        if let Some(agents) = &self.agents {
            for a in agents {
                if self.scenario.group_of(*a).is_err() {
                    return Err(ConfigError::Invalid(format!("agent {a} is not in the scenario")));
                }
            }
        }
        Ok(())
    }

    pub fn agent_ids(&self) -> Vec<TravelerId> {
        match &self.agents {
            Some(a) => {
                let mut a = a.clone();
                a.sort_unstable();
                a.dedup();
                a
            }
            None => self.scenario.travelers().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!("81:160".parse::<PeriodRange>().unwrap(), PeriodRange::new(81, 160));
        assert!("160:81".parse::<PeriodRange>().is_err());
        assert!("0:3".parse::<PeriodRange>().is_err());
        assert_eq!(PeriodRange::new(81, 160).len(), 80);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"calibration": {"t_w": 6, "J": 2, "stride": 8}, "seed": 9, "agents": [3, 1]}"#).unwrap();
        assert_eq!(c.calibration.t_w, 6);
        assert_eq!(c.calibration.j, 2);
        assert_eq!(c.calibration.t_m, 80);
        assert_eq!(c.agent_ids(), vec![1, 3]);
        assert_eq!(c.test_range, PeriodRange::new(81, 160));
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 1}"#).is_err());
    }
}
