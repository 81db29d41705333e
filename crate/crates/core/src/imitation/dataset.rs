use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First token of the header line of a dataset file.
pub const DATASET_MAGIC: &str = "ncsim-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Cartpole,
    Car,
}

impl PlantKind {
    pub fn feature_names(self) -> Vec<String> {
        match self {
            PlantKind::Cartpole => super::CARTPOLE_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            PlantKind::Car => {
                let mut names = Vec::with_capacity(super::CAR_FEATURES);
                for i in 0..crate::raceline::WINDOW_LEN {
                    for c in ["x", "y", "v"] {
                        names.push(format!("wp{i}_{c}"));
                    }
                }
                names.extend(["v_x", "omega_z", "theta_s", "beta"].map(String::from));
                names
            }
        }
    }

    pub fn label_names(self) -> Vec<String> {
        match self {
            PlantKind::Cartpole => vec!["u".into()],
            PlantKind::Car => vec!["speed".into(), "steer".into()],
        }
    }

    /// Raw state the teacher saw: the observed cartpole state or the full car state.
    pub fn state_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            PlantKind::Cartpole => &["x", "v", "theta", "omega"],
            PlantKind::Car => &["x", "y", "yaw", "v_x", "omega_z", "theta_s", "beta"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// One teacher decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub episode: usize,
    /// Episode time (s) at which the decision was taken.
    pub t: f64,
    pub features: Vec<f64>,
    /// Clean teacher output; exploration noise is never part of it.
    pub label: Vec<f64>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub id: usize,
    /// Seed of the teacher's optimizer and of the episode's random draws.
    pub seed: u64,
    /// Index of the first sample and sample count; episodes are contiguous.
    pub start: usize,
    pub len: usize,
    /// Decision rate (Hz).
    pub rate: f64,
    pub crashed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<String>,
    /// Source episode of an augmented copy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    plant: PlantKind,
    features: Vec<String>,
    labels: Vec<String>,
    state: Vec<String>,
    episodes: Vec<EpisodeInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub plant: PlantKind,
    pub episodes: Vec<EpisodeInfo>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(plant: PlantKind) -> Self {
        Self {
            plant,
            episodes: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.plant.feature_names().len()
    }

    pub fn label_dim(&self) -> usize {
        self.plant.label_names().len()
    }

    pub fn episode(&self, id: usize) -> Option<(&EpisodeInfo, &[Sample])> {
        let info = self.episodes.iter().find(|e| e.id == id)?;
        Some((info, &self.samples[info.start..info.start + info.len]))
    }

    /// Append an episode's samples, renumbering them to the next free id.
    pub fn push_episode(&mut self, mut info: EpisodeInfo, mut samples: Vec<Sample>) {
        info.id = self.episodes.len();
        info.start = self.samples.len();
        info.len = samples.len();
        for s in &mut samples {
            s.episode = info.id;
        }
        self.episodes.push(info);
        self.samples.extend(samples);
    }

    /// Check shapes, finiteness and the episode layout.
    pub fn validate(&self) -> Result<()> {
        let (nf, nl, ns) = (self.feature_dim(), self.label_dim(), self.plant.state_names().len());
        let mut next = 0;
        for (i, e) in self.episodes.iter().enumerate() {
            if e.id != i || e.start != next {
                return Err(Error::Dataset(format!("episode {i} is out of order")));
            }
            if !(e.rate > 0.0) {
                return Err(Error::Dataset(format!("episode {i} has no positive rate")));
            }
            next += e.len;
        }
        if next != self.samples.len() {
            return Err(Error::Dataset(format!(
                "episodes cover {next} samples, dataset has {}",
                self.samples.len()
            )));
        }
        for e in &self.episodes {
            for (k, s) in self.samples[e.start..e.start + e.len].iter().enumerate() {
                if s.episode != e.id {
                    return Err(Error::Dataset(format!("sample {} is not in episode {}", e.start + k, e.id)));
                }
                if s.features.len() != nf || s.label.len() != nl || s.state.len() != ns {
                    return Err(Error::Dataset(format!("sample {} has the wrong shape", e.start + k)));
                }
                let finite = s.t.is_finite()
                    && s.features.iter().chain(&s.label).chain(&s.state).all(|v| v.is_finite());
                if !finite {
                    return Err(Error::Dataset(format!("sample {} is not finite", e.start + k)));
                }
            }
        }
        Ok(())
    }

    /// Split by episode, never by row. Augmented copies follow their source.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        let root = |e: &EpisodeInfo| e.augmented_from.unwrap_or(e.id);
        let mut roots: Vec<usize> = self.episodes.iter().filter(|e| e.augmented_from.is_none()).map(|e| e.id).collect();
        roots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((roots.len() as f64 * validation_fraction).round() as usize)
            .min(roots.len().saturating_sub(1));
        let val_roots = &roots[..n_val];
        let mut parts = [Dataset::new(self.plant), Dataset::new(self.plant)];
        let mut new_id = vec![0; self.episodes.len()];
        for e in &self.episodes {
            let part = &mut parts[usize::from(val_roots.contains(&root(e)))];
            new_id[e.id] = part.episodes.len();
            let mut info = e.clone();
            info.augmented_from = e.augmented_from.map(|src| new_id[src]);
            part.push_episode(info, self.samples[e.start..e.start + e.len].to_vec());
        }
        let [train, val] = parts;
        Ok((train, val))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let header = Header {
            format: DATASET_MAGIC.into(),
            version: DATASET_VERSION,
            plant: self.plant,
            features: self.plant.feature_names(),
            labels: self.plant.label_names(),
            state: self.plant.state_names(),
            episodes: self.episodes.clone(),
        };
        let json = serde_json::to_string(&header).map_err(|e| Error::Dataset(e.to_string()))?;
        let mut out = String::new();
        let _ = writeln!(out, "# {json}");
        let mut cols = vec!["episode".to_string(), "t".to_string()];
        cols.extend(header.features.iter().map(|n| format!("f_{n}")));
        cols.extend(header.labels.iter().map(|n| format!("l_{n}")));
        cols.extend(header.state.iter().map(|n| format!("s_{n}")));
        let _ = writeln!(out, "{}", cols.join(","));
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.episode, s.t);
            for v in s.features.iter().chain(&s.label).chain(&s.state) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::Dataset("empty dataset file".into()))?;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Dataset("missing dataset header line".into()))?;
        let header: Header =
            serde_json::from_str(json).map_err(|e| Error::Dataset(format!("bad header: {e}")))?;
        if header.format != DATASET_MAGIC {
            return Err(Error::Dataset(format!("not a dataset file ({})", header.format)));
        }
        if header.version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported dataset version {}", header.version)));
        }
        let (nf, nl, ns) = (header.features.len(), header.labels.len(), header.state.len());
        if header.features != header.plant.feature_names()
            || header.labels != header.plant.label_names()
            || header.state != header.plant.state_names()
        {
            return Err(Error::Dataset("column names do not match the plant".into()));
        }
        lines.next().ok_or_else(|| Error::Dataset("missing column line".into()))?;
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Dataset(format!("row {}: {what}", i + 1));
            let mut it = line.split(',');
            let episode = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("bad episode id"))?;
            let values: Vec<f64> = it
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad number"))?;
            if values.len() != 1 + nf + nl + ns {
                return Err(bad("wrong column count"));
            }
            samples.push(Sample {
                episode,
                t: values[0],
                features: values[1..1 + nf].to_vec(),
                label: values[1 + nf..1 + nf + nl].to_vec(),
                state: values[1 + nf + nl..].to_vec(),
            });
        }
        let ds = Dataset {
            plant: header.plant,
            episodes: header.episodes,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }
}
