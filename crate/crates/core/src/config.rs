//! Experiment configuration: one TOML file drives every pipeline stage.
//!
//! Every section is required and unknown keys are rejected. Per-stage seeds
//! are not written in the file; they are derived from the global `seed`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::base::{BaseSpec, DatasetSpec, LayerProfile};
use crate::cache::ExploreConfig;
use crate::compose::ComposerConfig;
use crate::nn::TrainConfig;
use crate::planner::SplitPolicy;
use crate::sim::{AdaptationConfig, WorkloadSpec};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Run the base model and the trained caches on every request.
    Model,
    /// Draw hits from the plan's effective hit rates.
    Profile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub mode: SimMode,
    /// Stream length in profile mode; model mode follows the workload.
    pub profile_requests: usize,
    pub workload: WorkloadSpec,
    pub adaptation: AdaptationConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            mode: SimMode::Model,
            profile_requests: 100_000,
            workload: WorkloadSpec::default(),
            adaptation: AdaptationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// DAG file, relative to the config file; absent means the built-in
    /// traffic-analysis DAG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<PathBuf>,
    pub policy: SplitPolicy,
    pub slo_min_ms: f64,
    pub slo_max_ms: f64,
    pub slo_step_ms: f64,
    pub queries: usize,
    /// Node whose model answers early with `hit_probability`; absent means
    /// every model takes its profiled latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_node: Option<String>,
    pub hit_probability: f64,
    pub hit_latency_ms: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dag: None,
            policy: SplitPolicy::Equal,
            slo_min_ms: 60.0,
            slo_max_ms: 160.0,
            slo_step_ms: 10.0,
            queries: 10_000,
            cache_node: Some("objdet".into()),
            hit_probability: 0.3,
            hit_latency_ms: 20.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("planner", r));
        if !(self.slo_min_ms > 0.0 && self.slo_min_ms.is_finite()) {
            return bad("slo_min_ms must be > 0");
        }
        if !(self.slo_max_ms >= self.slo_min_ms && self.slo_max_ms.is_finite()) {
            return bad("slo_max_ms must be >= slo_min_ms");
        }
        if !(self.slo_step_ms > 0.0 && self.slo_step_ms.is_finite()) {
            return bad("slo_step_ms must be > 0");
        }
        if self.slo_grid().len() > 10_000 {
            return bad("more than 10000 SLO values");
        }
        if self.queries == 0 {
            return bad("queries must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.hit_probability) {
            return bad("hit_probability must be in [0,1]");
        }
        if !(self.hit_latency_ms >= 0.0 && self.hit_latency_ms.is_finite()) {
            return bad("hit_latency_ms must be finite and >= 0");
        }
        Ok(())
    }

    /// `slo_min_ms, slo_min_ms + step, ...` up to `slo_max_ms` inclusive.
    pub fn slo_grid(&self) -> Vec<f64> {
        let n = ((self.slo_max_ms - self.slo_min_ms) / self.slo_step_ms + 1e-9).floor();
        if !(n >= 0.0 && n < 1e6) {
            return Vec::new();
        }
        (0..=n as usize)
            .map(|k| self.slo_min_ms + k as f64 * self.slo_step_ms)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub base: BaseSpec,
    pub base_training: TrainConfig,
    pub profile: LayerProfile,
    pub explore: ExploreConfig,
    pub composer: ComposerConfig,
    pub simulation: SimulationConfig,
    pub planner: PlannerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            version: CONFIG_VERSION,
            seed: 42,
            dataset: DatasetSpec::default(),
            base: BaseSpec::default(),
            base_training: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            profile: LayerProfile::default(),
            explore: ExploreConfig::default(),
            composer: ComposerConfig::default(),
            simulation: SimulationConfig::default(),
            planner: PlannerConfig::default(),
        };
        cfg.set_seed(cfg.seed);
        cfg
    }
}

/// Independent sub-seed for a named pipeline stage.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    // splitmix64 finaliser over the global seed mixed with an FNV-1a tag.
    let tag = stage
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut z = (global ^ tag).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    /// Sets the global seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dataset.seed = derive_seed(seed, "dataset");
        self.base_training.seed = derive_seed(seed, "base");
        self.simulation.workload.seed = derive_seed(seed, "workload");
        self.simulation.adaptation.seed = derive_seed(seed, "adaptation");
    }

    pub fn explore_seed(&self) -> u64 {
        derive_seed(self.seed, "explore")
    }

    pub fn profile_sim_seed(&self) -> u64 {
        derive_seed(self.seed, "profile-sim")
    }

    pub fn planner_seed(&self) -> u64 {
        derive_seed(self.seed, "planner")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(
                "config",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        self.dataset.validate()?;
        let blocks = self.base.block_widths()?.len();
        self.base_training.validate()?;
        self.profile.validate()?;
        if self.profile.num_layers() != blocks {
            return Err(Error::invalid(
                "config",
                format!(
                    "profile has {} layers but the base model has {blocks} blocks",
                    self.profile.num_layers()
                ),
            ));
        }
        self.explore.train.validate()?;
        if let Some(&l) = self.explore.layers.iter().find(|&&l| l == 0 || l > blocks) {
            return Err(Error::invalid("explore", format!("layer {l} outside 1..={blocks}")));
        }
        if !(self.explore.measure_fraction > 0.0 && self.explore.measure_fraction < 1.0) {
            return Err(Error::invalid("explore", "measure_fraction must be in (0,1)"));
        }
        if self.explore.menu.is_empty() {
            return Err(Error::invalid("explore", "empty variant menu"));
        }
        self.composer.validate()?;
        self.simulation.workload.validate()?;
        self.simulation.adaptation.validate()?;
        if self.simulation.workload.num_classes != self.dataset.num_classes {
            return Err(Error::invalid(
                "config",
                format!(
                    "workload has {} classes but the dataset has {}",
                    self.simulation.workload.num_classes, self.dataset.num_classes
                ),
            ));
        }
        if self.simulation.profile_requests == 0 {
            return Err(Error::invalid("simulation", "profile_requests must be >= 1"));
        }
        self.planner.validate()
    }

    /// Canonical TOML; derived seeds are omitted.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// SHA-256 of the canonical TOML, as lowercase hex.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a config; derived seeds are filled in.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = crate::textfmt::toml_value(text, "config")?;
    cfg.set_seed(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}
