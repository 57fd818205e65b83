//! Experiment configuration and JSON overlays.
//!
//! A configuration file is a partial JSON object laid over the defaults of
//! the chosen preset. Keys that do not exist in the defaults are rejected so
//! that typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{default_horizons, Horizon};
use super::HarnessError;
use crate::planner::PlannerConfig;
use crate::policy::env::EnvConfig;
use crate::policy::{NetworkConfig, OptimizerConfig, Preset, TrainConfig};
use crate::world::GeneratorParams;

/// Held-out evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Generator seed of the first held-out scenario.
    pub first_seed: u64,
    pub suite_size: usize,
    /// Each scenario is run once per seed; the seed drives detector and
    /// controller randomness.
    pub seeds: Vec<u64>,
    /// Learned policies take their most probable action instead of sampling.
    pub greedy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            first_seed: 1000,
            suite_size: 100,
            seeds: vec![0],
            greedy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub env: EnvConfig,
    pub generator: GeneratorParams,
    pub planner: PlannerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub horizons: Vec<Horizon>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let network = NetworkConfig::for_preset(preset);
        let train = match preset {
            // The small network trains within minutes only with a larger
            // step size than the published one.
            Preset::Desk => TrainConfig {
                iterations: 300,
                episodes_per_iteration: 8,
                optimizer: OptimizerConfig {
                    lr: 3e-4,
                    ..OptimizerConfig::default()
                },
                ..TrainConfig::default()
            },
            Preset::Paper => TrainConfig::default(),
        };
        Self {
            env: EnvConfig::for_network(&network),
            network,
            generator: GeneratorParams::occlusion(),
            planner: PlannerConfig::default(),
            train,
            eval: EvalConfig::default(),
            horizons: default_horizons(),
        }
    }

    /// Preset defaults with an optional JSON overlay file applied.
    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self, HarnessError> {
        let base = Self::for_preset(preset);
        let Some(path) = path else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        base.overlay(&text)
    }

    pub fn overlay(&self, json: &str) -> Result<Self, HarnessError> {
        let patch: Value = serde_json::from_str(json)
            .map_err(|e| HarnessError::Config(format!("config is not valid JSON: {e}")))?;
        let mut merged = serde_json::to_value(self).expect("configuration serializes");
        merge(&mut merged, &patch, "")?;
        let cfg: Self = serde_json::from_value(merged)
            .map_err(|e| HarnessError::Config(format!("bad config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |e: String| HarnessError::Config(e);
        self.network.validate().map_err(|e| cfg(e.to_string()))?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        self.env.oracle.validate().map_err(cfg)?;
        self.env.reward.validate().map_err(cfg)?;
        if self.env.mask_resolution != self.network.mask_resolution
            || self.env.mask_history != self.network.mask_history
        {
            return Err(cfg(
                "env mask resolution/history must match the network".into()
            ));
        }
        if self.env.lidar.beams != self.network.lidar_beams {
            return Err(cfg("env lidar beams must match the network".into()));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| h.ticks == 0) {
            return Err(cfg("horizons must be non-empty and positive".into()));
        }
        if self.eval.seeds.is_empty() || self.eval.suite_size == 0 {
            return Err(cfg("eval needs at least one seed and one scenario".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: &Value, at: &str) -> Result<(), HarnessError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() {
                    k.clone()
                } else {
                    format!("{at}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => {
                        return Err(HarnessError::Config(format!("unknown config key `{path}`")))
                    }
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_changes_only_named_fields() {
        let base = ExperimentConfig::default();
        let cfg = base
            .overlay(r#"{"env": {"oracle": {"lambda": 0.5}}, "eval": {"suite_size": 7}}"#)
            .unwrap();
        assert_eq!(cfg.env.oracle.lambda, 0.5);
        assert_eq!(cfg.eval.suite_size, 7);
        assert_eq!(cfg.network, base.network);
        assert_eq!(cfg.env.reward, base.env.reward);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let base = ExperimentConfig::default();
        for bad in [
            r#"{"env": {"lamda": 0.5}}"#,
            r#"{"train": {"n_step": 0}}"#,
            "not json",
            r#"{"horizons": []}"#,
        ] {
            assert!(
                matches!(base.overlay(bad), Err(HarnessError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn presets_are_self_consistent() {
        for p in [Preset::Desk, Preset::Paper] {
            ExperimentConfig::for_preset(p).validate().unwrap();
        }
        assert_eq!(
            ExperimentConfig::for_preset(Preset::Paper)
                .train
                .optimizer
                .lr,
            4e-5
        );
    }
}
