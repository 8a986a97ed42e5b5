//! Upper-layer message generators that run regardless of extensions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PeriodDistribution;
use crate::types::{MsgType, SimTime};
use crate::vep::Kinematics;

/// Body size of a CAM: a variable high-frequency part every time, a
/// low-frequency container at most every `lf_interval_ms`, and the
/// sender certificate at most every `cert_interval_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CamSizeModel {
    pub hf_min_bytes: u32,
    pub hf_max_bytes: u32,
    pub lf_bytes: u32,
    pub lf_interval_ms: u64,
    pub cert_bytes: u32,
    pub cert_interval_ms: u64,
}

impl Default for CamSizeModel {
    /// Frames span 92 to 553 bytes under the default header model.
    fn default() -> Self {
        CamSizeModel {
            hf_min_bytes: 0,
            hf_max_bytes: 200,
            lf_bytes: 100,
            lf_interval_ms: 500,
            cert_bytes: 161,
            cert_interval_ms: 1000,
        }
    }
}

impl CamSizeModel {
    pub fn max_body(&self) -> u32 {
        self.hf_max_bytes + self.lf_bytes + self.cert_bytes
    }
}

#[derive(Debug, Clone)]
pub struct CamGenerator {
    pub periods: PeriodDistribution,
    pub size: CamSizeModel,
    last_lf: Option<SimTime>,
    last_cert: Option<SimTime>,
}

impl CamGenerator {
    pub fn new(periods: PeriodDistribution, size: CamSizeModel) -> Self {
        CamGenerator {
            periods,
            size,
            last_lf: None,
            last_cert: None,
        }
    }

    /// First emission drawn from the stationary residual life, so the
    /// process is in equilibrium from time zero: a size-biased period, then
    /// a uniform point inside it.
    pub fn first_emission(&self, rng: &mut ChaCha8Rng) -> SimTime {
        let mean = self.periods.mean();
        let u: f64 = rng.gen::<f64>() * mean;
        let mut acc = 0.0;
        let mut chosen = self.periods.t_max();
        for p in self.periods.support() {
            acc += p.period_ms as f64 * p.probability;
            if u < acc {
                chosen = p.period_ms;
                break;
            }
        }
        let offset_us = rng.gen_range(0..chosen * 1000);
        SimTime(offset_us)
    }

    pub fn next_period(&self, rng: &mut ChaCha8Rng) -> SimTime {
        SimTime::from_ms(self.periods.sample(rng))
    }

    pub fn body(&mut self, now: SimTime, seq: u64, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let s = &self.size;
        let mut len = rng.gen_range(s.hf_min_bytes..=s.hf_max_bytes.max(s.hf_min_bytes));
        let due =
            |last: Option<SimTime>, every: u64| last.is_none_or(|t| now.saturating_sub(t) >= SimTime::from_ms(every));
        if s.lf_bytes > 0 && due(self.last_lf, s.lf_interval_ms) {
            len += s.lf_bytes;
            self.last_lf = Some(now);
        }
        if s.cert_bytes > 0 && due(self.last_cert, s.cert_interval_ms) {
            len += s.cert_bytes;
            self.last_cert = Some(now);
        }
        filler(len as usize, seq)
    }
}

/// A strictly periodic generator, e.g. maneuver trajectory broadcasts or
/// service announcements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedGenerator {
    pub msg_type: MsgType,
    pub period_ms: u64,
    /// Bytes appended after the optional kinematics prefix.
    pub body: Vec<u8>,
    /// Prefix the body with position and velocity (4 x f64, big endian).
    pub kinematics_prefix: bool,
}

impl FixedGenerator {
    pub fn first_emission(&self, rng: &mut ChaCha8Rng) -> SimTime {
        SimTime(rng.gen_range(0..self.period_ms.max(1) * 1000))
    }

    pub fn body(&self, kin: &Kinematics) -> Vec<u8> {
        let mut b = Vec::with_capacity(32 + self.body.len());
        if self.kinematics_prefix {
            b.extend_from_slice(&encode_kinematics(kin));
        }
        b.extend_from_slice(&self.body);
        b
    }
}

pub fn encode_kinematics(k: &Kinematics) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, v) in [k.x, k.y, k.vx, k.vy].iter().enumerate() {
        out[i * 8..i * 8 + 8].copy_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_kinematics(b: &[u8]) -> Option<Kinematics> {
    if b.len() < 32 {
        return None;
    }
    let f = |i: usize| f64::from_be_bytes(b[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
    Some(Kinematics {
        x: f(0),
        y: f(1),
        vx: f(2),
        vy: f(3),
    })
}

fn filler(len: usize, seq: u64) -> Vec<u8> {
    (0..len).map(|i| (seq as usize).wrapping_add(i) as u8).collect()
}

#[derive(Debug, Clone)]
pub enum Generator {
    Cam(CamGenerator),
    Fixed(FixedGenerator),
}

impl Generator {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Generator::Cam(_) => MsgType::Cam,
            Generator::Fixed(f) => f.msg_type,
        }
    }
}
