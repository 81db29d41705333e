//! Teacher demonstrations: closed-loop NMPC rollouts recorded as
//! (features, label) pairs, their augmentation, and the dataset file format.
//!
//! A dataset file is CSV. Its first line is `# ` followed by a JSON header
//! naming the plant, the feature, label and state columns and every episode
//! that produced the data; the second line holds the column names
//! `episode,t,f_*,l_*,s_*`. Numbers are written in shortest round-trip form,
//! so saving and loading is lossless.

mod car;
mod cartpole;
mod dataset;

pub use car::{car_features, collect_car, replay_car, CarCollectConfig};
pub use cartpole::{
    augment_cartpole, cartpole_features, collect_cartpole, replay_cartpole, CartpoleCollectConfig,
    AUGMENT_SHIFT,
};
pub use dataset::{Dataset, EpisodeInfo, PlantKind, Sample, DATASET_MAGIC, DATASET_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CARTPOLE_FEATURES: usize = 7;
pub const CAR_FEATURES: usize = 64;

pub const CARTPOLE_FEATURE_NAMES: [&str; CARTPOLE_FEATURES] =
    ["sin_theta", "cos_theta", "omega", "x", "v", "x_target", "up"];

/// Worst label disagreement found by a replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayReport {
    pub checked: usize,
    pub max_abs_diff: f64,
}

impl ReplayReport {
    pub fn exact(&self) -> bool {
        self.max_abs_diff == 0.0
    }
}

/// Independent random stream for sub-episode `index` of slot `slot`.
pub(crate) fn episode_rng(seed: u64, slot: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((slot as u64) << 20) | index as u64);
    rng
}

/// Samples per slot when `total` samples are cut into slots of at most `per_slot`.
pub(crate) fn slot_quotas(total: usize, per_slot: usize) -> Vec<usize> {
    let per_slot = per_slot.max(1);
    let mut out = vec![per_slot; total / per_slot];
    if !total.is_multiple_of(per_slot) {
        out.push(total % per_slot);
    }
    out
}
