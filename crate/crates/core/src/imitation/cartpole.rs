use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, EpisodeInfo, PlantKind, Sample};
use super::{episode_rng, slot_quotas, ReplayReport, CARTPOLE_FEATURES};
use crate::error::{Error, Result};
use crate::nmpc::{CartpoleMpc, CartpoleMpcConfig, CartpoleTarget};
use crate::par;
use crate::plants::{step_euler, CartpoleParams, CartpoleSensor, CartpoleState, SensorModel};

/// Time (s) by which the augmented copy's velocities lag the original.
pub const AUGMENT_SHIFT: f64 = 0.02;

/// Network input for an observed state and a target.
pub fn cartpole_features(obs: &CartpoleState, target: CartpoleTarget) -> [f64; CARTPOLE_FEATURES] {
    let (s, c) = obs.theta.sin_cos();
    [
        s,
        c,
        obs.omega,
        obs.x,
        obs.v,
        target.position,
        if target.up { 1.0 } else { 0.0 },
    ]
}

fn target_from_features(f: &[f64]) -> CartpoleTarget {
    CartpoleTarget {
        position: f[5],
        up: f[6] > 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleCollectConfig {
    /// Total simulated time (s) across all episodes.
    pub duration: f64,
    /// Longest single episode (s); episodes run concurrently.
    pub episode_duration: f64,
    pub control_rate: f64,
    pub sim_dt: f64,
    /// Half-width of the uniform noise added to executed commands.
    pub noise: f64,
    /// Target redraw interval bounds (s).
    pub target_interval: [f64; 2],
    /// Share of the track, centered, from which target positions are drawn.
    pub target_span: f64,
    pub up_probability: f64,
    pub sensor: Option<SensorModel>,
    pub seed: u64,
    /// The teacher; an experiment config fills it from its section.
    #[serde(skip)]
    pub mpc: CartpoleMpcConfig,
    pub parallel: bool,
}

impl Default for CartpoleCollectConfig {
    fn default() -> Self {
        Self {
            duration: 3600.0,
            episode_duration: 60.0,
            control_rate: 50.0,
            sim_dt: 0.001,
            noise: 0.2,
            target_interval: [4.0, 8.0],
            target_span: 0.7,
            up_probability: 0.7,
            sensor: Some(SensorModel::default()),
            seed: 0,
            mpc: CartpoleMpcConfig::default(),
            parallel: true,
        }
    }
}

impl CartpoleCollectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !(self.episode_duration > 0.0) {
            return Err(Error::Config("collection needs duration >= 0 and episode duration > 0".into()));
        }
        if !(self.control_rate > 0.0) || !(self.sim_dt > 0.0) {
            return Err(Error::Config("collection needs positive control rate and sim step".into()));
        }
        let ratio = 1.0 / (self.control_rate * self.sim_dt);
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::Config("control period must be a whole number of sim steps".into()));
        }
        let [lo, hi] = self.target_interval;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("target interval needs 0 < min <= max".into()));
        }
        if !(0.0..=1.0).contains(&self.target_span)
            || !(0.0..=1.0).contains(&self.up_probability)
            || !(self.noise >= 0.0)
        {
            return Err(Error::Config("target span and up probability must be in [0, 1], noise >= 0".into()));
        }
        if let Some(s) = &self.sensor {
            s.validate()?;
        }
        self.mpc.validate()
    }
}

struct Episode {
    info: EpisodeInfo,
    samples: Vec<Sample>,
}

fn draw_target<R: Rng>(rng: &mut R, cfg: &CartpoleCollectConfig, plant: &CartpoleParams) -> CartpoleTarget {
    let reach = cfg.target_span * plant.half_track();
    let position = if reach > 0.0 { rng.gen_range(-reach..=reach) } else { 0.0 };
    CartpoleTarget {
        position,
        up: rng.gen_bool(cfg.up_probability),
    }
}

/// One episode of at most `quota` decisions; stops early if the cart leaves the track.
fn run_episode(
    cfg: &CartpoleCollectConfig,
    plant: &CartpoleParams,
    slot: usize,
    index: usize,
    quota: usize,
) -> Result<Episode> {
    let mut rng = episode_rng(cfg.seed, slot, index);
    let seed = rng.next_u64();
    let mut mpc_cfg = cfg.mpc.clone();
    mpc_cfg.optimizer.seed = seed;
    let mut mpc = CartpoleMpc::new(mpc_cfg, plant.clone())?;
    let mut sensor = CartpoleSensor::new(cfg.sensor.clone().unwrap_or_else(SensorModel::ideal), cfg.sim_dt);
    let per_control = (1.0 / (cfg.control_rate * cfg.sim_dt)).round() as usize;
    let period = 1.0 / cfg.control_rate;

    let reach = cfg.target_span * plant.half_track();
    let mut state = CartpoleState::new(
        if reach > 0.0 { rng.gen_range(-reach..=reach) } else { 0.0 },
        0.0,
        std::f64::consts::PI + rng.gen_range(-0.1..=0.1),
        0.0,
    );
    let mut target = draw_target(&mut rng, cfg, plant);
    let [lo, hi] = cfg.target_interval;
    let mut next_switch = rng.gen_range(lo..=hi);
    let mut observed = sensor.measure(&state, &mut rng);
    let mut samples = Vec::with_capacity(quota);
    let mut crashed = false;
    for k in 0..quota {
        let t = k as f64 * period;
        if t >= next_switch {
            target = draw_target(&mut rng, cfg, plant);
            next_switch += rng.gen_range(lo..=hi);
        }
        let seen = if cfg.sensor.is_some() { observed } else { state };
        let label = mpc.step(&seen, target)?.command.clamp(-1.0, 1.0);
        let noise = if cfg.noise > 0.0 { rng.gen_range(-cfg.noise..=cfg.noise) } else { 0.0 };
        let u = (label + noise).clamp(-1.0, 1.0);
        samples.push(Sample {
            episode: 0,
            t,
            features: cartpole_features(&seen, target).to_vec(),
            label: vec![label],
            state: seen.to_array().to_vec(),
        });
        for _ in 0..per_control {
            state = step_euler(&state, u, cfg.sim_dt, 1, plant)?;
            observed = sensor.measure(&state, &mut rng);
        }
        if plant.out_of_track(&state) {
            crashed = true;
            break;
        }
    }
    Ok(Episode {
        info: EpisodeInfo {
            id: 0,
            seed,
            start: 0,
            len: samples.len(),
            rate: cfg.control_rate,
            crashed,
            speed_factor: None,
            track: None,
            augmented_from: None,
        },
        samples,
    })
}

/// Closed-loop NMPC demonstrations with random targets and noisy execution.
///
/// Yields exactly `duration * control_rate` samples: an episode that leaves
/// the track is kept up to the crash, flagged, and its slot continues with a
/// fresh episode.
pub fn collect_cartpole(cfg: &CartpoleCollectConfig, plant: &CartpoleParams) -> Result<Dataset> {
    cfg.validate()?;
    plant.validate()?;
    let total = (cfg.duration * cfg.control_rate).round() as usize;
    let per_slot = (cfg.episode_duration * cfg.control_rate).round() as usize;
    let quotas = slot_quotas(total, per_slot);
    let slots = par::map_indexed(quotas.len(), cfg.parallel, |slot| -> Result<Vec<Episode>> {
        let mut left = quotas[slot];
        let mut out = Vec::new();
        while left > 0 {
            let ep = run_episode(cfg, plant, slot, out.len(), left)?;
            left -= ep.samples.len();
            out.push(ep);
        }
        Ok(out)
    });
    let mut ds = Dataset::new(PlantKind::Cartpole);
    for slot in slots {
        for ep in slot? {
            ds.push_episode(ep.info, ep.samples);
        }
    }
    Ok(ds)
}

/// Re-run a fresh teacher on the first `count` recorded observations of an
/// episode and compare its outputs with the stored labels.
pub fn replay_cartpole(
    ds: &Dataset,
    episode: usize,
    count: usize,
    mpc: &CartpoleMpcConfig,
    plant: &CartpoleParams,
) -> Result<ReplayReport> {
    if ds.plant != PlantKind::Cartpole {
        return Err(Error::Dataset("replay_cartpole needs a cartpole dataset".into()));
    }
    let (info, samples) = ds
        .episode(episode)
        .ok_or_else(|| Error::Dataset(format!("no episode {episode}")))?;
    if info.augmented_from.is_some() {
        return Err(Error::Dataset("augmented episodes cannot be replayed".into()));
    }
    let mut cfg = mpc.clone();
    cfg.optimizer.seed = info.seed;
    let mut teacher = CartpoleMpc::new(cfg, plant.clone())?;
    let mut report = ReplayReport {
        checked: 0,
        max_abs_diff: 0.0,
    };
    for s in samples.iter().take(count) {
        let obs = CartpoleState::from_array([s.state[0], s.state[1], s.state[2], s.state[3]]);
        let u = teacher.step(&obs, target_from_features(&s.features))?.command.clamp(-1.0, 1.0);
        report.max_abs_diff = report.max_abs_diff.max((u - s.label[0]).abs());
        report.checked += 1;
    }
    Ok(report)
}

/// The sensor-quantized dataset followed by a copy whose velocity features
/// come from [`AUGMENT_SHIFT`] earlier in the same episode.
pub fn augment_cartpole(ds: &Dataset, sensor: &SensorModel) -> Result<Dataset> {
    if ds.plant != PlantKind::Cartpole {
        return Err(Error::Dataset("augment_cartpole needs a cartpole dataset".into()));
    }
    ds.validate()?;
    let quantize = |f: &[f64]| -> Vec<f64> {
        let theta = sensor.quantize_angle(f[0].atan2(f[1]));
        let (s, c) = theta.sin_cos();
        vec![
            s,
            c,
            quantize_to(f[2], sensor.angular_velocity_quantum()),
            sensor.quantize_position(f[3]),
            quantize_to(f[4], sensor.velocity_quantum()),
            f[5],
            f[6],
        ]
    };
    let mut out = Dataset::new(PlantKind::Cartpole);
    let mut quantized = Vec::with_capacity(ds.episodes.len());
    for e in &ds.episodes {
        let samples: Vec<Sample> = ds.samples[e.start..e.start + e.len]
            .iter()
            .map(|s| Sample {
                features: quantize(&s.features),
                ..s.clone()
            })
            .collect();
        quantized.push(samples.clone());
        out.push_episode(e.clone(), samples);
    }
    for (e, rows) in ds.episodes.iter().zip(&quantized) {
        let shift = (AUGMENT_SHIFT * e.rate).round().max(1.0) as usize;
        if rows.len() <= shift {
            continue;
        }
        let copy = (shift..rows.len())
            .map(|k| {
                let mut s = rows[k].clone();
                s.features[2] = rows[k - shift].features[2];
                s.features[4] = rows[k - shift].features[4];
                s
            })
            .collect();
        let info = EpisodeInfo {
            augmented_from: Some(e.id),
            ..e.clone()
        };
        out.push_episode(info, copy);
    }
    Ok(out)
}

fn quantize_to(x: f64, quantum: f64) -> f64 {
    crate::plants::quantize_to(x, quantum)
}
