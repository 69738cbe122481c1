//! Experiment orchestration behind the command-line interface.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ActorCritic;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    A3c = 0,
    MetaA3c = 1,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::A3c => "a3c",
            Algo::MetaA3c => "meta-a3c",
        })
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a3c" => Ok(Algo::A3c),
            "meta-a3c" => Ok(Algo::MetaA3c),
            _ => Err(Error::Config(format!("unknown algorithm {s:?} (expected a3c or meta-a3c)"))),
        }
    }
}

/// Fresh networks for `cfg`. Uses its own random stream so initialization
/// never shares draws with the rollout streams of the same seed.
pub fn init_model(cfg: &ExperimentConfig, seed: u64) -> Result<ActorCritic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    ActorCritic::init(cfg.feature_dim(), cfg.action_dim(), &cfg.network.hidden, &mut rng)
}
