//! Closed race lines: storage, progress queries, car-relative windows and lap timing.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plants::CarState;

/// Waypoints in a controller window.
pub const WINDOW_LEN: usize = 20;
/// Arc-length spacing of window points (m); 20 points cover 8 m.
pub const WINDOW_SPACING: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Suggested longitudinal speed (m/s).
    pub v_x: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, v_x: f64) -> Self {
        Self { x, y, v_x }
    }
}

/// Arc-length coordinate of the closest point on the line and the distance to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub s: f64,
    pub d: f64,
}

/// A closed polyline of waypoints; the last point connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Raceline {
    points: Vec<Waypoint>,
    /// `cum[i]` is the arc length at point `i`; `cum[n]` is the loop length.
    cum: Vec<f64>,
}

impl Raceline {
    pub fn new(points: Vec<Waypoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Config(format!(
                "a race line needs at least 3 waypoints, got {}",
                points.len()
            )));
        }
        let n = points.len();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let a = points[i];
            let b = points[(i + 1) % n];
            if !(a.x.is_finite() && a.y.is_finite() && a.v_x.is_finite()) {
                return Err(Error::Config(format!("waypoint {i} is not finite")));
            }
            if a.v_x < 0.0 {
                return Err(Error::Config(format!("waypoint {i} has negative speed")));
            }
            let len = (b.x - a.x).hypot(b.y - a.y);
            if !(len > 0.0) {
                return Err(Error::Config(format!(
                    "waypoints {i} and {} coincide",
                    (i + 1) % n
                )));
            }
            cum.push(cum[i] + len);
        }
        Ok(Self { points, cum })
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("race line file is empty".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["x", "y", "v_x"] {
            return Err(Error::Config(format!(
                "race line header must be \"x,y,v_x\", got {header:?}"
            )));
        }
        let mut points = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("race line row {}: {e}", row + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Config(format!(
                    "race line row {} has {} columns",
                    row + 1,
                    vals.len()
                )));
            }
            points.push(Waypoint::new(vals[0], vals[1], vals[2]));
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x,y,v_x\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.x, p.y, p.v_x);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.cum[self.points.len()]
    }

    /// Arc length at waypoint `i`.
    pub fn arc_length_at(&self, i: usize) -> f64 {
        self.cum[i]
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length());
        if w >= self.length() {
            0.0
        } else {
            w
        }
    }

    fn segment(&self, i: usize) -> (Waypoint, Waypoint) {
        (self.points[i], self.points[(i + 1) % self.points.len()])
    }

    /// Interpolated `(x, y, v_x)` at arc length `s` (wrapped onto the loop).
    pub fn sample(&self, s: f64) -> Waypoint {
        let s = self.wrap_s(s);
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 1),
            Err(i) => i - 1,
        };
        let (a, b) = self.segment(i);
        let t = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i]);
        Waypoint::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.v_x + t * (b.v_x - a.v_x),
        )
    }

    /// Closest point on the polyline; ties go to the smaller arc length.
    pub fn nearest_progress(&self, x: f64, y: f64) -> Progress {
        let mut best = Progress {
            s: 0.0,
            d: f64::INFINITY,
        };
        for i in 0..self.points.len() {
            let (a, b) = self.segment(i);
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let len2 = ex * ex + ey * ey;
            let t = (((x - a.x) * ex + (y - a.y) * ey) / len2).clamp(0.0, 1.0);
            let d = (x - (a.x + t * ex)).hypot(y - (a.y + t * ey));
            if d < best.d {
                best = Progress {
                    s: self.cum[i] + t * (self.cum[i + 1] - self.cum[i]),
                    d,
                };
            }
        }
        best.s = self.wrap_s(best.s);
        best
    }

    /// Points at arc lengths `s0 + offsets[k]` in the car's body frame, speeds
    /// scaled by `speed_factor`.
    pub fn body_frame_samples(
        &self,
        car: &CarState,
        s0: f64,
        offsets: impl Iterator<Item = f64>,
        speed_factor: f64,
    ) -> Vec<[f64; 3]> {
        let (sy, cy) = car.yaw.sin_cos();
        offsets
            .map(|off| {
                let w = self.sample(s0 + off);
                let (dx, dy) = (w.x - car.x, w.y - car.y);
                [cy * dx + sy * dy, -sy * dx + cy * dy, w.v_x * speed_factor]
            })
            .collect()
    }

    /// The next [`WINDOW_LEN`] points ahead of the car, resampled every
    /// [`WINDOW_SPACING`] meters of arc, in the body frame.
    pub fn window(&self, car: &CarState, speed_factor: f64) -> Result<WaypointWindow> {
        if self.points.len() < WINDOW_LEN {
            return Err(Error::Config(format!(
                "race line has {} waypoints, a window needs {WINDOW_LEN}",
                self.points.len()
            )));
        }
        if !(speed_factor > 0.0) {
            return Err(Error::Config(format!(
                "speed factor must be positive, got {speed_factor}"
            )));
        }
        let s0 = self.nearest_progress(car.x, car.y).s;
        let pts = self.body_frame_samples(
            car,
            s0,
            (1..=WINDOW_LEN).map(|k| k as f64 * WINDOW_SPACING),
            speed_factor,
        );
        let mut points = [[0.0; 3]; WINDOW_LEN];
        points.copy_from_slice(&pts);
        Ok(WaypointWindow { points })
    }

    /// Same line moved by a rigid transform (rotation `angle`, then shift).
    pub fn transformed(&self, angle: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let points = self
            .points
            .iter()
            .map(|p| Waypoint::new(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy, p.v_x))
            .collect();
        Self::new(points).expect("rigid transforms preserve a valid line")
    }
}

/// Twenty upcoming race-line points `(x, y, v)` relative to the car.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointWindow {
    pub points: [[f64; 3]; WINDOW_LEN],
}

impl WaypointWindow {
    /// Back to world coordinates for a car pose.
    pub fn to_world(&self, car: &CarState) -> Vec<(f64, f64)> {
        let (sy, cy) = car.yaw.sin_cos();
        self.points
            .iter()
            .map(|p| (car.x + cy * p[0] - sy * p[1], car.y + sy * p[0] + cy * p[1]))
            .collect()
    }

    /// Flattened `x0, y0, v0, x1, ...`.
    pub fn flatten(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lap {
    pub time: f64,
    /// False if the car went backwards during the lap.
    pub valid: bool,
}

/// Turns a stream of `(t, s)` progress samples into lap times.
///
/// A lap ends whenever progress wraps from the end of the loop to its start;
/// the crossing instant is interpolated between samples. The first crossing
/// only starts the clock.
#[derive(Debug, Clone)]
pub struct LapTimer {
    length: f64,
    tolerance: f64,
    last: Option<(f64, f64)>,
    lap_start: Option<f64>,
    valid: bool,
}

impl LapTimer {
    pub fn new(length: f64, tolerance: f64) -> Self {
        Self {
            length,
            tolerance,
            last: None,
            lap_start: None,
            valid: true,
        }
    }

    pub fn push(&mut self, t: f64, s: f64) -> Option<Lap> {
        let mut out = None;
        if let Some((t0, s0)) = self.last {
            let ds = s - s0;
            if ds < -0.5 * self.length {
                let frac = (self.length - s0) / (s + self.length - s0);
                let tc = t0 + frac * (t - t0);
                if let Some(start) = self.lap_start {
                    out = Some(Lap {
                        time: tc - start,
                        valid: self.valid,
                    });
                }
                self.lap_start = Some(tc);
                self.valid = true;
            } else if ds > 0.5 * self.length || ds < -self.tolerance {
                self.valid = false;
            }
        }
        self.last = Some((t, s));
        out
    }
}

/// Lap times of a whole progress log.
pub fn lap_times(samples: &[(f64, f64)], length: f64, tolerance: f64) -> Vec<Lap> {
    let mut timer = LapTimer::new(length, tolerance);
    samples
        .iter()
        .filter_map(|&(t, s)| timer.push(t, s))
        .collect()
}

/// Names of the bundled race lines: one for training, one held out for testing.
pub const BUILTIN_TRACKS: [&str; 2] = ["train", "test"];

/// A bundled race line by name.
pub fn builtin(name: &str) -> Result<Raceline> {
    let text = match name {
        "train" => include_str!("../fixtures/tracks/train.csv"),
        "test" => include_str!("../fixtures/tracks/test.csv"),
        _ => {
            return Err(Error::Config(format!(
                "unknown bundled track {name:?}; available: {BUILTIN_TRACKS:?}"
            )))
        }
    };
    Raceline::from_csv_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square() -> Raceline {
        // 4 m x 4 m square, counter-clockwise, 1 m spacing
        let mut pts = Vec::new();
        for i in 0..4 {
            pts.push(Waypoint::new(i as f64, 0.0, 2.0));
        }
        for i in 0..4 {
            pts.push(Waypoint::new(4.0, i as f64, 2.0));
        }
        for i in 0..4 {
            pts.push(Waypoint::new(4.0 - i as f64, 4.0, 2.0));
        }
        for i in 0..4 {
            pts.push(Waypoint::new(0.0, 4.0 - i as f64, 2.0));
        }
        Raceline::new(pts).unwrap()
    }

    pub(crate) fn circle(r: f64, n: usize, v: f64) -> Raceline {
        let pts = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                Waypoint::new(r * a.cos(), r * a.sin(), v)
            })
            .collect();
        Raceline::new(pts).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Raceline::new(vec![Waypoint::new(0.0, 0.0, 1.0); 2]).is_err());
        let dup = vec![
            Waypoint::new(0.0, 0.0, 1.0),
            Waypoint::new(0.0, 0.0, 1.0),
            Waypoint::new(1.0, 0.0, 1.0),
        ];
        assert!(Raceline::new(dup).is_err());
        let neg = vec![
            Waypoint::new(0.0, 0.0, 1.0),
            Waypoint::new(1.0, 0.0, -1.0),
            Waypoint::new(1.0, 1.0, 1.0),
        ];
        assert!(Raceline::new(neg).is_err());
    }

    #[test]
    fn length_includes_closing_segment() {
        assert!((square().length() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn on_waypoint_is_zero_distance() {
        let line = square();
        for i in 0..line.len() {
            let p = line.points()[i];
            let pr = line.nearest_progress(p.x, p.y);
            assert_eq!(pr.d, 0.0);
            assert!((pr.s - line.arc_length_at(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn perpendicular_offset() {
        let line = square();
        let pr = line.nearest_progress(2.0, -0.5);
        assert!((pr.d - 0.5).abs() < 1e-12);
        assert!((pr.s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smaller_arc_length() {
        // the center is equidistant to all four sides
        let pr = square().nearest_progress(2.0, 2.0);
        assert!((pr.d - 2.0).abs() < 1e-12);
        assert!((pr.s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let line = square();
        let back = Raceline::from_csv_str(&line.to_csv_string()).unwrap();
        assert_eq!(back, line);
        assert!(Raceline::from_csv_str("a,b,c\n0,0,0\n").is_err());
        assert!(Raceline::from_csv_str("x,y,v_x\n0,0\n").is_err());
        assert!(Raceline::from_csv_str("").is_err());
    }

    #[test]
    fn window_frame_and_speed_factor() {
        let line = circle(10.0, 400, 3.0);
        let p = line.points()[0];
        // tangent of a counter-clockwise circle at angle 0 points along +y
        let car = CarState {
            x: p.x,
            y: p.y,
            yaw: PI / 2.0,
            ..CarState::default()
        };
        let w1 = line.window(&car, 1.0).unwrap();
        let w2 = line.window(&car, 2.0).unwrap();
        assert!(w1.points[0][0] > 0.0 && w1.points[0][0] < 0.45);
        assert!(w1.points[0][1].abs() < 0.01);
        for (a, b) in w1.points.iter().zip(&w2.points) {
            assert_eq!(a[0], b[0]);
            assert_eq!(a[1], b[1]);
            assert!((b[2] - 2.0 * a[2]).abs() < 1e-12);
        }
        assert!(line.window(&car, 0.0).is_err());
        assert!(square().window(&car, 1.0).is_err());
    }

    #[test]
    fn window_round_trips_to_world() {
        let line = circle(5.0, 300, 2.0);
        let car = CarState {
            x: 4.7,
            y: 1.2,
            yaw: 1.9,
            ..CarState::default()
        };
        let s0 = line.nearest_progress(car.x, car.y).s;
        let w = line.window(&car, 1.3).unwrap();
        for (k, (x, y)) in w.to_world(&car).into_iter().enumerate() {
            let expect = line.sample(s0 + (k + 1) as f64 * WINDOW_SPACING);
            assert!((x - expect.x).abs() < 1e-9 && (y - expect.y).abs() < 1e-9);
        }
    }

    #[test]
    fn window_wraps_across_seam() {
        let line = circle(3.0, 100, 1.0);
        let last = line.points()[99];
        let car = CarState {
            x: last.x,
            y: last.y,
            yaw: 2.0 * PI * 99.0 / 100.0 + PI / 2.0,
            ..CarState::default()
        };
        let w = line.window(&car, 1.0).unwrap();
        for p in w.points {
            let r = (p[0] - 0.0).hypot(p[1]);
            assert!(r < 8.1);
        }
    }

    #[test]
    fn constant_speed_laps() {
        let length = 50.0;
        let v = 4.0;
        let dt = 0.02;
        let samples: Vec<(f64, f64)> = (0..5000)
            .map(|k| {
                let t = k as f64 * dt;
                (t, (3.0 + v * t).rem_euclid(length))
            })
            .collect();
        let laps = lap_times(&samples, length, 0.5);
        assert!(laps.len() >= 7);
        for lap in laps {
            assert!(lap.valid);
            assert!((lap.time - length / v).abs() < 1e-9);
        }
    }

    #[test]
    fn no_wrap_no_laps() {
        let samples: Vec<(f64, f64)> = (0..100).map(|k| (k as f64, k as f64 * 0.1)).collect();
        assert!(lap_times(&samples, 100.0, 0.5).is_empty());
    }

    #[test]
    fn two_crossings_make_one_lap() {
        let samples = [(0.0, 99.0), (0.5, 1.0), (9.0, 50.0), (17.51, 99.0), (18.01, 1.0)];
        let laps = lap_times(&samples, 100.0, 0.5);
        assert_eq!(laps.len(), 1);
        assert!((laps[0].time - 17.51).abs() < 1e-9);
        assert!(laps[0].valid);
    }

    #[test]
    fn going_backwards_invalidates_lap() {
        let samples = [(0.0, 99.0), (1.0, 1.0), (2.0, 30.0), (3.0, 20.0), (4.0, 99.5), (5.0, 0.5)];
        let laps = lap_times(&samples, 100.0, 0.5);
        assert_eq!(laps.len(), 1);
        assert!(!laps[0].valid);
    }
}
