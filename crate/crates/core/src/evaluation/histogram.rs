use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-width bins from 0; bin `k` counts samples in `[k w, (k + 1) w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

/// Bins just wide enough to hold the largest sample; counts sum to `samples.len()`.
pub fn histogram(samples: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("histogram bin width must be positive, got {bin_width}")));
    }
    if let Some(bad) = samples.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Numeric(format!("histogram samples must be finite and >= 0, got {bad}")));
    }
    let bin = |d: f64| (d / bin_width).floor() as usize;
    let top = samples.iter().copied().fold(0.0, f64::max);
    let mut counts = vec![0; bin(top) + 1];
    for &d in samples {
        counts[bin(d)] += 1;
    }
    Ok(Histogram { bin_width, counts })
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `lower,upper,count` rows under a header.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let lo = k as f64 * self.bin_width;
            out.push_str(&format!("{lo},{},{c}\n", (k + 1) as f64 * self.bin_width));
        }
        out
    }
}
