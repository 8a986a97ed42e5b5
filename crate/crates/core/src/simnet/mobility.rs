use serde::{Deserialize, Serialize};

use crate::types::SimTime;
use crate::vep::Kinematics;

/// Piecewise-linear path through waypoints in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<(f64, f64)>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Path {
    pub fn new(waypoints: Vec<(f64, f64)>) -> Self {
        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        for (i, w) in waypoints.iter().enumerate() {
            if i > 0 {
                let p = waypoints[i - 1];
                acc += ((w.0 - p.0).powi(2) + (w.1 - p.1).powi(2)).sqrt();
            }
            cumulative.push(acc);
        }
        Path { waypoints, cumulative }
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Point and unit heading at arc length `s`, wrapping to the start at
    /// the end of the path.
    pub fn at(&self, s: f64) -> ((f64, f64), (f64, f64)) {
        let len = self.length();
        if self.waypoints.len() < 2 || len <= 0.0 {
            let p = self.waypoints.first().copied().unwrap_or((0.0, 0.0));
            return (p, (0.0, 0.0));
        }
        let s = s.rem_euclid(len);
        let i = self
            .cumulative
            .partition_point(|c| *c <= s)
            .clamp(1, self.waypoints.len() - 1);
        let (a, b) = (self.waypoints[i - 1], self.waypoints[i]);
        let seg = self.cumulative[i] - self.cumulative[i - 1];
        let t = if seg > 0.0 {
            (s - self.cumulative[i - 1]) / seg
        } else {
            0.0
        };
        let dir = if seg > 0.0 {
            ((b.0 - a.0) / seg, (b.1 - a.1) / seg)
        } else {
            (0.0, 0.0)
        };
        ((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)), dir)
    }
}

/// A vehicle moving along a path at a nominal speed, with an optional
/// temporary speed change that decays linearly back to nominal.
#[derive(Debug, Clone, PartialEq)]
pub struct Mobility {
    path: Path,
    nominal_mps: f64,
    ref_time: SimTime,
    ref_distance: f64,
    factor: f64,
    ramp_s: f64,
}

impl Mobility {
    pub fn new(path: Path, speed_kmh: f64, start_offset_m: f64) -> Self {
        Mobility {
            path,
            nominal_mps: speed_kmh / 3.6,
            ref_time: SimTime::ZERO,
            ref_distance: start_offset_m,
            factor: 1.0,
            ramp_s: 0.0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn elapsed_s(&self, now: SimTime) -> f64 {
        now.saturating_sub(self.ref_time).as_ms() / 1000.0
    }

    pub fn speed(&self, now: SimTime) -> f64 {
        let dt = self.elapsed_s(now);
        let left = if self.ramp_s > 0.0 {
            (1.0 - dt / self.ramp_s).max(0.0)
        } else {
            0.0
        };
        self.nominal_mps * (1.0 + (self.factor - 1.0) * left)
    }

    /// Arc length travelled since the start of the path, unwrapped.
    pub fn distance(&self, now: SimTime) -> f64 {
        let dt = self.elapsed_s(now);
        let excess = if self.ramp_s <= 0.0 {
            0.0
        } else if dt <= self.ramp_s {
            dt - dt * dt / (2.0 * self.ramp_s)
        } else {
            self.ramp_s / 2.0
        };
        self.ref_distance + self.nominal_mps * dt + self.nominal_mps * (self.factor - 1.0) * excess
    }

    pub fn kinematics(&self, now: SimTime) -> Kinematics {
        let ((x, y), (hx, hy)) = self.path.at(self.distance(now));
        let v = self.speed(now);
        Kinematics {
            x,
            y,
            vx: v * hx,
            vy: v * hy,
        }
    }

    /// Jumps to `factor` times nominal speed now, back to nominal after
    /// `ramp_ms`.
    pub fn speed_change(&mut self, now: SimTime, factor: f64, ramp_ms: u64) {
        self.ref_distance = self.distance(now);
        self.ref_time = now;
        self.factor = factor;
        self.ramp_s = ramp_ms as f64 / 1000.0;
    }

    /// Laps completed so far.
    pub fn laps(&self, now: SimTime) -> u64 {
        let len = self.path.length();
        if len <= 0.0 {
            0
        } else {
            (self.distance(now) / len).floor().max(0.0) as u64
        }
    }
}
