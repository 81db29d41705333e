//! Regenerates the bundled race-line fixtures.
//!
//! Each track is a smooth closed curve `r(phi) = R (1 + sum a_k cos(k phi + p_k))`
//! resampled at uniform arc length. Suggested speeds follow the grip limit
//! `sqrt(mu g / |curvature|)`, capped, then smoothed by forward (acceleration)
//! and backward (braking) passes around the loop.
//!
//! Usage: `cargo run -p ncsim --example make_tracks [OUT_DIR]`

use std::f64::consts::PI;
use std::path::PathBuf;

use ncsim::raceline::{Raceline, Waypoint};

struct Shape {
    name: &'static str,
    radius: f64,
    harmonics: &'static [(f64, f64, f64)],
}

const SPACING: f64 = 0.2;
const MU: f64 = 1.0;
const G: f64 = 9.81;
const V_MAX: f64 = 9.0;
const ACCEL: f64 = 4.0;
const BRAKE: f64 = 6.0;

const SHAPES: [Shape; 2] = [
    Shape {
        name: "train",
        radius: 9.0,
        harmonics: &[(2.0, 0.22, 0.0), (3.0, 0.12, 1.1), (5.0, 0.05, 2.0), (7.0, 0.015, 0.5)],
    },
    Shape {
        name: "test",
        radius: 8.5,
        harmonics: &[(2.0, 0.18, 0.7), (3.0, 0.14, 0.2), (4.0, 0.06, 2.9), (6.0, 0.02, 1.3)],
    },
];

fn polar(shape: &Shape, phi: f64) -> (f64, f64) {
    let r = shape.radius
        * (1.0
            + shape
                .harmonics
                .iter()
                .map(|&(k, a, p)| a * (k * phi + p).cos())
                .sum::<f64>());
    (r * phi.cos(), r * phi.sin())
}

fn resample(shape: &Shape) -> Vec<(f64, f64)> {
    let dense = 20_000;
    let pts: Vec<(f64, f64)> = (0..=dense)
        .map(|i| polar(shape, 2.0 * PI * i as f64 / dense as f64))
        .collect();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1));
    }
    let total = *cum.last().unwrap();
    let n = (total / SPACING).round() as usize;
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let s = i as f64 * step;
        while cum[j + 1] < s {
            j += 1;
        }
        let t = (s - cum[j]) / (cum[j + 1] - cum[j]);
        out.push((
            pts[j].0 + t * (pts[j + 1].0 - pts[j].0),
            pts[j].1 + t * (pts[j + 1].1 - pts[j].1),
        ));
    }
    out
}

/// Menger curvature through each point and its neighbors.
fn curvature(p: &[(f64, f64)]) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|i| {
            let a = p[(i + n - 1) % n];
            let b = p[i];
            let c = p[(i + 1) % n];
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            let ab = (b.0 - a.0).hypot(b.1 - a.1);
            let bc = (c.0 - b.0).hypot(c.1 - b.1);
            let ca = (a.0 - c.0).hypot(a.1 - c.1);
            2.0 * cross / (ab * bc * ca)
        })
        .collect()
}

fn speed_profile(p: &[(f64, f64)]) -> Vec<f64> {
    let n = p.len();
    let mut v: Vec<f64> = curvature(p)
        .iter()
        .map(|k| (MU * G / k.abs().max(1e-9)).sqrt().min(V_MAX))
        .collect();
    let ds = |i: usize| {
        let (a, b) = (p[i], p[(i + 1) % n]);
        (b.0 - a.0).hypot(b.1 - a.1)
    };
    // two laps of each pass settle the wrap-around
    for _ in 0..2 {
        for i in 0..n {
            let j = (i + 1) % n;
            v[j] = v[j].min((v[i] * v[i] + 2.0 * ACCEL * ds(i)).sqrt());
        }
        for i in (0..n).rev() {
            let j = (i + 1) % n;
            v[i] = v[i].min((v[j] * v[j] + 2.0 * BRAKE * ds(i)).sqrt());
        }
    }
    v
}

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/tracks"));
    std::fs::create_dir_all(&out_dir).expect("create output directory");
    for shape in &SHAPES {
        let pts = resample(shape);
        let v = speed_profile(&pts);
        let min_radius = curvature(&pts)
            .iter()
            .map(|k| 1.0 / k.abs())
            .fold(f64::INFINITY, f64::min);
        let line = Raceline::new(
            pts.iter()
                .zip(&v)
                .map(|(&(x, y), &v)| Waypoint::new(round(x), round(y), round(v)))
                .collect(),
        )
        .expect("generated line is valid");
        let path = out_dir.join(format!("{}.csv", shape.name));
        line.save(&path).expect("write track");
        println!(
            "{}: {} points, {:.1} m, min radius {:.2} m, speeds {:.2}..{:.2} m/s",
            path.display(),
            line.len(),
            line.length(),
            min_radius,
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(0.0, f64::max),
        );
    }
}

fn round(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}
