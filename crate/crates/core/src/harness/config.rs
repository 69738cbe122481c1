//! Experiment configuration: scenario, task distribution, network shape and
//! trainer settings, loaded from TOML or one of the built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::a3c::TrainConfig;
use crate::channel::ChannelParams;
use crate::env::{self, RewardWeights};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::scenario::{Area, FleetParams, GraphSpec, QoSParams, RoadGraph, Scenario, TaskDistribution};

pub const BUILTIN_NAMES: [&str; 2] = ["default", "smoke"];

const DEFAULT_TOML: &str = include_str!("../../configs/default.toml");
const SMOKE_TOML: &str = include_str!("../../configs/smoke.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphConfig {
    /// n×n Manhattan grid spanning the whole area.
    Grid {
        n: usize,
        speed_limit: f64,
    },
    Explicit(GraphSpec),
}

impl GraphConfig {
    pub fn build(&self, area: &Area) -> Result<RoadGraph> {
        match self {
            GraphConfig::Grid { n, speed_limit } => RoadGraph::manhattan(*n, area.width, area.height, *speed_limit),
            GraphConfig::Explicit(spec) => RoadGraph::build(spec),
        }
    }
}

/// How tasks vary. Unset user counts fall back to `fleet.num_users`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub user_count: Option<[usize; 2]>,
    /// Defaults to the whole area.
    pub x_range: Option<[f64; 2]>,
    pub y_range: Option<[f64; 2]>,
    /// Users cluster within this radius of a per-task hotspot.
    pub hotspot_radius: Option<f64>,
    pub channel_jitter: f64,
    /// Defaults to `[qos.r_min, qos.r_min]`.
    pub r_min_range: Option<[f64; 2]>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            user_count: None,
            x_range: None,
            y_range: None,
            hotspot_radius: None,
            channel_jitter: 0.0,
            r_min_range: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Seed of the task used by train, eval and export-traj.
    pub task_seed: u64,
    /// First episode seed; episode i uses `episode_seed + i`.
    pub episode_seed: u64,
    /// Inner steps for online adaptation.
    pub adapt_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 5, task_seed: 0, episode_seed: 1000, adapt_steps: 5 }
    }
}

impl EvalConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64).map(|i| self.episode_seed + i).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub area: Area,
    pub graph: GraphConfig,
    #[serde(default)]
    pub fleet: FleetParams,
    #[serde(default)]
    pub qos: QoSParams,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub tasks: TaskConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let src = match name {
            "default" => DEFAULT_TOML,
            "smoke" => SMOKE_TOML,
            _ => return None,
        };
        Some(Self::from_toml_str(src).expect("built-in configs are valid"))
    }

    /// A path to a TOML file, or the name of a built-in preset.
    pub fn load(path_or_name: &str) -> Result<Self> {
        let path = Path::new(path_or_name);
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            return Self::from_toml_str(&text);
        }
        Self::builtin(path_or_name).ok_or_else(|| {
            Error::Config(format!(
                "no config file at {path_or_name:?} and no built-in preset of that name (built-ins: {})",
                BUILTIN_NAMES.join(", ")
            ))
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area.width > 0.0 && self.area.height > 0.0) {
            return Err(Error::InvalidRange { name: "area", lo: self.area.width, hi: self.area.height });
        }
        self.fleet.validate()?;
        self.qos.validate()?;
        self.channel.validate()?;
        let graph = self.graph.build(&self.area)?;
        if let Some(n) = graph.nodes().iter().position(|&p| !self.area.contains(p)) {
            return Err(Error::Config(format!("graph node {n} lies outside the area")));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "network.hidden must be non-empty and positive, got {:?}",
                self.network.hidden
            )));
        }
        self.distribution().validate()?;
        self.train.validate()?;
        self.meta.validate()?;
        if self.eval.episodes == 0 {
            return Err(Error::param("eval.episodes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario { graph: self.graph.build(&self.area)?, fleet: self.fleet, area: self.area, reward: self.reward })
    }

    pub fn distribution(&self) -> TaskDistribution {
        let k = self.fleet.num_users;
        TaskDistribution {
            area: self.area,
            user_count: self.tasks.user_count.unwrap_or([k, k]),
            x_range: self.tasks.x_range.unwrap_or([0.0, self.area.width]),
            y_range: self.tasks.y_range.unwrap_or([0.0, self.area.height]),
            channel_nominal: self.channel,
            hotspot_radius: self.tasks.hotspot_radius,
            channel_jitter: self.tasks.channel_jitter,
            r_min_range: self.tasks.r_min_range.unwrap_or([self.qos.r_min, self.qos.r_min]),
            qos_nominal: self.qos,
        }
    }

    /// Sets a fixed user count K for both the fleet and the task distribution.
    pub fn with_users(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.fleet.num_users = k;
        c.tasks.user_count = Some([k, k]);
        c
    }

    pub fn feature_dim(&self) -> usize {
        env::feature_dim(self.fleet.num_uav, self.fleet.num_ugv)
    }

    pub fn action_dim(&self) -> usize {
        env::Action::dim(self.fleet.num_uav, self.fleet.num_ugv)
    }

    /// SHA-256 over everything that fixes the network's input/output meaning:
    /// area, road graph, fleet and hidden sizes. Task-level settings are not
    /// included, so one checkpoint serves the whole task family.
    pub fn fingerprint(&self) -> Result<[u8; 32]> {
        #[derive(Serialize)]
        struct Key<'a> {
            area: &'a Area,
            graph: &'a RoadGraph,
            fleet: FleetParams,
            hidden: &'a [usize],
        }
        let graph = self.graph.build(&self.area)?;
        // User count varies per task and is not part of the network contract.
        let fleet = FleetParams { num_users: 0, ..self.fleet };
        let key = Key { area: &self.area, graph: &graph, fleet, hidden: &self.network.hidden };
        let bytes = serde_json::to_vec(&key).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Sha256::digest(&bytes).into())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
