use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("empty support")]
    Empty,
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("negative or non-finite probability {0}")]
    BadProbability(f64),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("cannot read distribution: {0}")]
    Io(String),
    #[error("cannot parse distribution: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodPoint {
    pub period_ms: u64,
    pub probability: f64,
}

/// Discrete distribution of the period between two messages of a
/// periodic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistFile", into = "DistFile")]
pub struct PeriodDistribution {
    name: String,
    support: Vec<PeriodPoint>,
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DistFile {
    #[serde(default)]
    name: String,
    support: Vec<PeriodPoint>,
}

impl TryFrom<DistFile> for PeriodDistribution {
    type Error = DistError;
    fn try_from(f: DistFile) -> Result<Self, DistError> {
        let pairs: Vec<(u64, f64)> = f.support.iter().map(|p| (p.period_ms, p.probability)).collect();
        Ok(PeriodDistribution::new(&pairs)?.named(&f.name))
    }
}

impl From<PeriodDistribution> for DistFile {
    fn from(d: PeriodDistribution) -> DistFile {
        DistFile {
            name: d.name,
            support: d.support,
        }
    }
}

impl PeriodDistribution {
    /// Builds from (period_ms, probability) pairs. Repeated periods are
    /// merged; zero-probability points are dropped.
    pub fn new(pairs: &[(u64, f64)]) -> Result<Self, DistError> {
        let mut pts: Vec<(u64, f64)> = Vec::with_capacity(pairs.len());
        for &(t, p) in pairs {
            if !p.is_finite() || p < 0.0 {
                return Err(DistError::BadProbability(p));
            }
            if t == 0 {
                return Err(DistError::ZeroPeriod);
            }
            pts.push((t, p));
        }
        pts.sort_by_key(|x| x.0);
        let mut support: Vec<PeriodPoint> = Vec::new();
        for (t, p) in pts {
            match support.last_mut() {
                Some(last) if last.period_ms == t => last.probability += p,
                _ => support.push(PeriodPoint {
                    period_ms: t,
                    probability: p,
                }),
            }
        }
        support.retain(|p| p.probability > 0.0);
        if support.is_empty() {
            return Err(DistError::Empty);
        }
        let total: f64 = support.iter().map(|p| p.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DistError::NotNormalized(total));
        }
        let mut acc = 0.0;
        let cumulative = support
            .iter()
            .map(|p| {
                acc += p.probability;
                acc
            })
            .collect();
        Ok(PeriodDistribution {
            name: String::new(),
            support,
            cumulative,
        })
    }

    pub fn constant(period_ms: u64) -> Result<Self, DistError> {
        PeriodDistribution::new(&[(period_ms, 1.0)])
    }

    /// Equal mass on `lo, lo+step, ..., hi`.
    pub fn uniform(lo: u64, hi: u64, step: u64) -> Result<Self, DistError> {
        let step = step.max(1);
        let pts: Vec<u64> = (lo..=hi).step_by(step as usize).collect();
        let p = 1.0 / pts.len().max(1) as f64;
        PeriodDistribution::new(&pts.iter().map(|&t| (t, p)).collect::<Vec<_>>())
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> &[PeriodPoint] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|p| p.period_ms as f64 * p.probability).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.support
            .iter()
            .map(|p| (p.period_ms as f64).powi(2) * p.probability)
            .sum()
    }

    pub fn t_min(&self) -> u64 {
        self.support[0].period_ms
    }

    pub fn t_max(&self) -> u64 {
        self.support[self.support.len() - 1].period_ms
    }

    /// P(T <= t).
    pub fn cdf(&self, t: f64) -> f64 {
        let idx = self.support.partition_point(|p| (p.period_ms as f64) <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)].period_ms
    }

    pub fn from_toml_str(s: &str) -> Result<Self, DistError> {
        toml::from_str(s).map_err(|e| DistError::Parse(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, DistError> {
        serde_json::from_str(s).map_err(|e| DistError::Parse(e.to_string()))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, DistError> {
        let text = std::fs::read_to_string(path).map_err(|e| DistError::Io(e.to_string()))?;
        let d = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        if d.name.is_empty() {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            return Ok(d.named(stem));
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_and_cdf() {
        let d = PeriodDistribution::new(&[(300, 0.5), (100, 0.5)]).unwrap();
        assert_eq!(d.mean(), 200.0);
        assert_eq!(d.second_moment(), 50_000.0);
        assert_eq!((d.t_min(), d.t_max()), (100, 300));
        assert_eq!(d.cdf(99.9), 0.0);
        assert_eq!(d.cdf(100.0), 0.5);
        assert_eq!(d.cdf(1e9), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(PeriodDistribution::new(&[]), Err(DistError::Empty));
        assert!(matches!(
            PeriodDistribution::new(&[(100, 0.5)]),
            Err(DistError::NotNormalized(_))
        ));
        assert_eq!(PeriodDistribution::new(&[(0, 1.0)]), Err(DistError::ZeroPeriod));
    }

    #[test]
    fn toml_round_trip() {
        let d = PeriodDistribution::uniform(100, 500, 100).unwrap().named("u");
        let s = toml::to_string(&d).unwrap();
        assert_eq!(PeriodDistribution::from_toml_str(&s).unwrap(), d);
    }
}
