//! Experiment configuration: one TOML file covering every pipeline.
//!
//! Missing keys take their defaults and unknown keys are rejected. The
//! section-level `mpc` is the teacher for both data collection and closed-loop
//! runs, so the two can never disagree.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline_pp::PurePursuitConfig;
use crate::error::{Error, Result};
use crate::evaluation::{CarRunConfig, CartpoleRunConfig, TargetSchedule};
use crate::imitation::{CarCollectConfig, CartpoleCollectConfig};
use crate::neuralnet::TrainConfig;
use crate::nmpc::{CarMpcConfig, CartpoleMpcConfig};
use crate::plants::{CarParams, CartpoleParams};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; [`ExperimentConfig::with_seed`] propagates it to every stage.
    pub seed: u64,
    pub cartpole: CartpoleSection,
    pub car: CarSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleSection {
    pub plant: CartpoleParams,
    pub mpc: CartpoleMpcConfig,
    pub collect: CartpoleCollectConfig,
    pub run: CartpoleRunConfig,
    pub schedule: TargetSchedule,
    pub train: TrainConfig,
}

impl Default for CartpoleSection {
    fn default() -> Self {
        Self {
            plant: CartpoleParams::default(),
            mpc: CartpoleMpcConfig::default(),
            collect: CartpoleCollectConfig::default(),
            run: CartpoleRunConfig::default(),
            schedule: TargetSchedule::standard(),
            train: TrainConfig {
                float_epochs: 60,
                qat_epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarSection {
    pub plant: CarParams,
    pub mpc: CarMpcConfig,
    pub pp: PurePursuitConfig,
    pub collect: CarCollectConfig,
    pub run: CarRunConfig,
    pub train: TrainConfig,
    /// Bundled track name or CSV path used for data collection.
    pub train_track: String,
    /// Held-out track for closed-loop evaluation.
    pub eval_track: String,
}

impl Default for CarSection {
    fn default() -> Self {
        Self {
            plant: CarParams::default(),
            mpc: CarMpcConfig::default(),
            pp: PurePursuitConfig::default(),
            collect: CarCollectConfig::default(),
            run: CarRunConfig::default(),
            train: TrainConfig {
                float_epochs: 30,
                qat_epochs: 20,
                target_sparsity: 0.8,
                prune_start: 5,
                prune_end: 25,
                ..TrainConfig::default()
            },
            train_track: "train".into(),
            eval_track: "test".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cartpole;
        c.plant.validate()?;
        c.mpc.validate()?;
        self.cartpole_collect().validate()?;
        c.run.validate()?;
        c.schedule.validate()?;
        c.train.validate()?;
        let k = &self.car;
        k.plant.validate()?;
        k.mpc.validate()?;
        k.pp.validate()?;
        self.car_collect().validate()?;
        k.run.validate()?;
        k.train.validate()
    }

    /// Copy with `seed` as the master seed and every stage seed derived from it.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        let c = &mut cfg.cartpole;
        c.mpc.optimizer.seed = seed;
        c.collect.seed = seed;
        c.run.seed = seed;
        c.train.seed = seed;
        let k = &mut cfg.car;
        k.mpc.optimizer.seed = seed;
        k.collect.seed = seed;
        k.train.seed = seed;
        cfg
    }

    /// Collection settings with the section's teacher.
    pub fn cartpole_collect(&self) -> CartpoleCollectConfig {
        CartpoleCollectConfig {
            mpc: self.cartpole.mpc.clone(),
            ..self.cartpole.collect.clone()
        }
    }

    pub fn car_collect(&self) -> CarCollectConfig {
        CarCollectConfig {
            mpc: self.car.mpc.clone(),
            ..self.car.collect.clone()
        }
    }

    /// SHA-256 of the canonical JSON form; equal configs hash equally
    /// whatever their TOML layout.
    pub fn digest(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(value.to_string().as_bytes())))
    }
}
