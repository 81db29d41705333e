use serde::{Deserialize, Serialize};

use super::{InferencePath, QMlpModel};
use crate::error::{Error, Result};
use crate::imitation::Sample;
use crate::par;

/// Distribution of per-sample fixed-vs-float output gaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub count: usize,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

/// Per sample, the largest `|fixed - float|` over outputs in physical units,
/// after clamping both outputs into `bounds` (the actuator limits).
pub fn path_deviations(
    model: &QMlpModel,
    samples: &[Sample],
    bounds: &[(f64, f64)],
    parallel: bool,
) -> Result<Vec<f64>> {
    if bounds.len() != model.output_dim() {
        return Err(Error::Shape {
            expected: model.output_dim(),
            actual: bounds.len(),
        });
    }
    let gaps = par::map_indexed(samples.len(), parallel, |i| -> Result<f64> {
        let f = &samples[i].features;
        let a = model.predict(f, InferencePath::Float)?;
        let b = model.predict(f, InferencePath::Fixed)?;
        Ok(a.iter()
            .zip(&b)
            .zip(bounds)
            .map(|((a, b), (lo, hi))| (a.clamp(*lo, *hi) - b.clamp(*lo, *hi)).abs())
            .fold(0.0, f64::max))
    });
    gaps.into_iter().collect()
}

/// Nearest-rank percentiles; an empty set summarizes to zeros.
pub fn summarize_deviations(gaps: &[f64]) -> DeviationSummary {
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = |q: f64| {
        let k = (q * sorted.len() as f64).ceil() as usize;
        sorted.get(k.saturating_sub(1)).copied().unwrap_or(0.0)
    };
    DeviationSummary {
        count: sorted.len(),
        p50: rank(0.5),
        p99: rank(0.99),
        max: sorted.last().copied().unwrap_or(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{QuantConfig, CARTPOLE_LAYERS};
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let gaps: Vec<f64> = (1..=200).map(f64::from).collect();
        let s = summarize_deviations(&gaps);
        assert_eq!((s.count, s.p50, s.p99, s.max), (200, 100.0, 198.0, 200.0));
        assert_eq!(summarize_deviations(&[]).max, 0.0);
    }

    #[test]
    fn gaps_are_bounded_by_the_clamp_and_thread_independent() {
        let model = QMlpModel::new(&CARTPOLE_LAYERS, QuantConfig::cartpole(), 3).unwrap();
        let samples: Vec<Sample> = (0..50)
            .map(|i| Sample {
                episode: 0,
                t: i as f64,
                features: (0..7).map(|k| ((i * 7 + k) as f64 * 0.37).sin()).collect(),
                label: vec![0.0],
                state: vec![],
            })
            .collect();
        let a = path_deviations(&model, &samples, &[(-1.0, 1.0)], true).unwrap();
        let b = path_deviations(&model, &samples, &[(-1.0, 1.0)], false).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|g| (0.0..=2.0).contains(g)));
        let tight = path_deviations(&model, &samples, &[(0.0, 0.0)], false).unwrap();
        assert!(tight.iter().all(|g| *g == 0.0));
        assert!(path_deviations(&model, &samples, &[], false).is_err());
    }
}
