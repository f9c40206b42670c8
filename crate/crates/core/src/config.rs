//! Run configuration bundle, read from TOML.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{AggregationConfig, ConfigError, WeightingPolicy};
use crate::hon::HonConfig;
use crate::ingest::{
    StayConfig, DEFAULT_MAX_REJECT_RATIO, DEFAULT_SPEED_KMH, DEFAULT_SPLIT_GAP_SECONDS,
    DEFAULT_TAIL_STAY_SECONDS,
};
use crate::time::bins_per_day;

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Aggregation(#[from] ConfigError),
    #[error("invalid setting `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSettings {
    pub split_gap_seconds: i64,
    pub tail_stay_seconds: f64,
    pub speed_kmh: f64,
    pub max_reject_ratio: f64,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            split_gap_seconds: DEFAULT_SPLIT_GAP_SECONDS,
            tail_stay_seconds: DEFAULT_TAIL_STAY_SECONDS,
            speed_kmh: DEFAULT_SPEED_KMH,
            max_reject_ratio: DEFAULT_MAX_REJECT_RATIO,
        }
    }
}

impl IngestSettings {
    pub fn stay_config(&self) -> StayConfig {
        StayConfig {
            split_gap_seconds: self.split_gap_seconds,
            tail_stay_seconds: self.tail_stay_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoSettings {
    pub adjacency_epsilon_m: f64,
    pub weighting: WeightingPolicy,
}

impl Default for GeoSettings {
    fn default() -> Self {
        Self {
            adjacency_epsilon_m: 1.0,
            weighting: WeightingPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSettings {
    pub checkins: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ingest: IngestSettings,
    pub geo: GeoSettings,
    pub aggregate: AggregationConfig,
    pub hon: HonConfig,
    pub paths: PathSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RunConfigError> {
        self.aggregate.validate()?;
        let invalid = |key, reason: &str| RunConfigError::Invalid {
            key,
            reason: reason.to_string(),
        };
        if self.ingest.split_gap_seconds <= 0 {
            return Err(invalid("ingest.split_gap_seconds", "must be positive"));
        }
        if !(self.ingest.tail_stay_seconds >= 0.0) {
            return Err(invalid("ingest.tail_stay_seconds", "must be non-negative"));
        }
        if !(self.ingest.speed_kmh > 0.0) {
            return Err(invalid("ingest.speed_kmh", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ingest.max_reject_ratio) {
            return Err(invalid("ingest.max_reject_ratio", "must lie in [0, 1]"));
        }
        if !(self.geo.adjacency_epsilon_m >= 0.0) {
            return Err(invalid("geo.adjacency_epsilon_m", "must be non-negative"));
        }
        if bins_per_day(self.hon.bin_width_minutes).is_err() {
            return Err(invalid("hon.bin_width_minutes", "must divide 1440"));
        }
        if self.hon.max_order == 0 {
            return Err(invalid("hon.max_order", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.hon.max_order, 3);
        assert_eq!(cfg.hon.min_support, 5);
        assert_eq!((cfg.aggregate.beta_min, cfg.aggregate.beta_max), (3, 9));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[hon]\nmax_ordr = 3\n").is_err());
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("[aggregate]\nalpha = [1.9, 2.2, 2.5]\n").unwrap();
        assert_eq!(cfg.aggregate.alpha.len(), 3);
        assert_eq!(cfg.aggregate.levels, 3);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[aggregate]\nbeta_min = 9\nbeta_max = 3\n").is_err());
        assert!(RunConfig::from_toml("[hon]\nbin_width_minutes = 7\n").is_err());
        assert!(RunConfig::from_toml("[ingest]\nspeed_kmh = 0.0\n").is_err());
    }
}
