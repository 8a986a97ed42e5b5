//! Waiting time until the next periodic emission, queued delays, and order
//! statistics over discrete delay distributions.

use serde::{Deserialize, Serialize};

use super::DomainError;
use crate::simnet::PeriodDistribution;

/// A finite discrete distribution with sorted, distinct support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(mut pairs: Vec<(f64, f64)>) -> Result<Self, DomainError> {
        if pairs.is_empty() {
            return Err(DomainError("empty support".into()));
        }
        if pairs.iter().any(|(v, p)| !v.is_finite() || !p.is_finite() || *p < 0.0) {
            return Err(DomainError("non-finite or negative entry".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            if values.last() == Some(&v) {
                *probs.last_mut().unwrap() += p;
            } else {
                values.push(v);
                probs.push(p);
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DomainError(format!("probabilities sum to {total}")));
        }
        Ok(DiscreteDist { values, probs })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// Cumulative probabilities at each support point.
    pub fn cdf_points(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc.min(1.0)
            })
            .collect()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let idx = self.values.partition_point(|v| *v <= x);
        if idx == 0 {
            0.0
        } else {
            self.cdf_points()[idx - 1]
        }
    }
}

impl From<&PeriodDistribution> for DiscreteDist {
    fn from(d: &PeriodDistribution) -> Self {
        DiscreteDist {
            values: d.support().iter().map(|p| p.period_ms as f64).collect(),
            probs: d.support().iter().map(|p| p.probability).collect(),
        }
    }
}

/// Stationary waiting time from a uniformly random instant to the next
/// emission of a renewal process with the given periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingTime {
    pub mean_ms: f64,
    /// `cdf[k]` is P(W <= k ms) for k = 0..=T_max. W has a density, so the
    /// CDF is linear between grid points.
    pub cdf: Vec<f64>,
}

impl WaitingTime {
    pub fn cdf_at(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let k = w.floor() as usize;
        if k + 1 >= self.cdf.len() {
            return 1.0;
        }
        let frac = w - k as f64;
        self.cdf[k] + frac * (self.cdf[k + 1] - self.cdf[k])
    }

    /// W re-discretized on 1 ms bins, each bin's mass placed at its
    /// midpoint. Any order statistic of the binned variable is within
    /// 0.5 ms of the exact one, since each draw moves by at most that much.
    pub fn binned(&self) -> DiscreteDist {
        let mut pairs = Vec::with_capacity(self.cdf.len());
        for k in 1..self.cdf.len() {
            let p = self.cdf[k] - self.cdf[k - 1];
            if p > 0.0 {
                pairs.push((k as f64 - 0.5, p));
            }
        }
        // guard rounding drift so the bins sum to exactly one
        let total: f64 = pairs.iter().map(|x| x.1).sum();
        for x in &mut pairs {
            x.1 /= total;
        }
        DiscreteDist::new(pairs).expect("binned waiting time is a distribution")
    }
}

/// Mean waiting time E(T^2) / 2E(T) and its CDF.
///
/// P(W <= w) = (1/E(T)) * integral_0^w P(T > u) du, evaluated exactly:
/// with integer periods, P(T > u) is constant on each [k, k+1).
pub fn waiting_time(dist: &PeriodDistribution) -> WaitingTime {
    let mean_t = dist.mean();
    let t_max = dist.t_max() as usize;
    let mut cdf = Vec::with_capacity(t_max + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for k in 0..t_max {
        acc += (1.0 - dist.cdf(k as f64)) / mean_t;
        cdf.push(acc.min(1.0));
    }
    *cdf.last_mut().unwrap() = 1.0;
    WaitingTime {
        mean_ms: dist.second_moment() / (2.0 * mean_t),
        cdf,
    }
}

/// Mean delay of a passive extension with `j` entries ahead of it.
pub fn queued_delay(dist: &PeriodDistribution, j: usize) -> f64 {
    waiting_time(dist).mean_ms + j as f64 * dist.mean()
}

fn binomial_row(m: usize) -> Vec<f64> {
    let mut row = vec![1.0f64; m + 1];
    for i in 1..m {
        row[i] = row[i - 1] * (m - i + 1) as f64 / i as f64;
    }
    row
}

/// P(g-th smallest of m i.i.d. draws <= y), given F(y).
fn order_cdf(f: f64, m: usize, g: usize, binom: &[f64]) -> f64 {
    if g == m {
        return f.powi(m as i32);
    }
    (g..=m)
        .map(|i| binom[i] * f.powi(i as i32) * (1.0 - f).powi((m - i) as i32))
        .sum()
}

/// CDF values at each support point and the mean of the g-th smallest of
/// `m` i.i.d. draws from `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStat {
    pub m: usize,
    pub g: usize,
    pub values: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
}

pub fn order_stat(y: &DiscreteDist, m: usize, g: usize) -> Result<OrderStat, DomainError> {
    if g == 0 || g > m {
        return Err(DomainError(format!("need 1 <= g <= m, got g={g}, m={m}")));
    }
    let binom = binomial_row(m);
    let cdf: Vec<f64> = y.cdf_points().into_iter().map(|f| order_cdf(f, m, g, &binom)).collect();
    let mut mean = 0.0;
    let mut prev = 0.0;
    for (v, c) in y.values.iter().zip(&cdf) {
        mean += v * (c - prev);
        prev = *c;
    }
    Ok(OrderStat {
        m,
        g,
        values: y.values.clone(),
        cdf,
        mean,
    })
}

/// Which delay a protocol round waits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    /// Residual waiting time, for the first round after a trigger.
    Waiting,
    /// A full period, for rounds that start right after an emission.
    Period,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub m: usize,
    pub g: usize,
    pub kind: RoundKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessDelay {
    pub mean_ms: f64,
    pub lower_ms: f64,
    pub upper_ms: f64,
    pub per_round_ms: Vec<f64>,
}

/// Sum of the expected round delays, with the [T_min(k-1), T_max k]
/// envelope for k rounds.
pub fn process_delay(dist: &PeriodDistribution, rounds: &[Round]) -> Result<ProcessDelay, DomainError> {
    if rounds.is_empty() {
        return Err(DomainError("no rounds".into()));
    }
    let t = DiscreteDist::from(dist);
    let w = waiting_time(dist).binned();
    let mut per_round = Vec::with_capacity(rounds.len());
    for r in rounds {
        let y = match r.kind {
            RoundKind::Waiting => &w,
            RoundKind::Period => &t,
        };
        per_round.push(order_stat(y, r.m, r.g)?.mean);
    }
    let k = rounds.len() as f64;
    Ok(ProcessDelay {
        mean_ms: per_round.iter().sum(),
        lower_ms: dist.t_min() as f64 * (k - 1.0),
        upper_ms: dist.t_max() as f64 * k,
        per_round_ms: per_round,
    })
}

/// Verification of an event by `participants` stations that all start
/// waiting at the same instant.
pub fn verification_delay(dist: &PeriodDistribution, participants: usize) -> Result<f64, DomainError> {
    process_delay(
        dist,
        &[Round {
            m: participants,
            g: participants,
            kind: RoundKind::Waiting,
        }],
    )
    .map(|p| p.mean_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    /// Averaged over all nodes: the commit round waits for 2f+1 of n.
    AllNodes,
    /// The primary counts its own commit and waits for 2f of n-1.
    Primary,
}

/// Expected three-stage BFT consensus delay over periodic transport with
/// empty queues.
pub fn pbft_delay(dist: &PeriodDistribution, n: usize, viewpoint: Viewpoint) -> Result<f64, DomainError> {
    if n < 4 {
        return Err(DomainError(format!("need n >= 4, got {n}")));
    }
    let f = (n - 1) / 3;
    let commit = match viewpoint {
        Viewpoint::AllNodes => Round {
            m: n,
            g: 2 * f + 1,
            kind: RoundKind::Period,
        },
        Viewpoint::Primary => Round {
            m: n - 1,
            g: 2 * f,
            kind: RoundKind::Period,
        },
    };
    let rounds = [
        Round {
            m: 1,
            g: 1,
            kind: RoundKind::Waiting,
        },
        Round {
            m: n - 1,
            g: 2 * f,
            kind: RoundKind::Waiting,
        },
        commit,
    ];
    process_delay(dist, &rounds).map(|p| p.mean_ms)
}

/// Delay after `r` retransmission rounds of timeout `tau_d`.
pub fn retrans_delay(tau_p: f64, r: u32, tau_d: f64) -> f64 {
    tau_p + r as f64 * tau_d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_period() {
        let d = PeriodDistribution::constant(100).unwrap();
        let w = waiting_time(&d);
        assert_eq!(w.mean_ms, 50.0);
        assert!((w.cdf_at(25.0) - 0.25).abs() < 1e-12);
        assert!((queued_delay(&d, 3) - 350.0).abs() < 1e-12);
        let p = pbft_delay(&d, 4, Viewpoint::AllNodes).unwrap();
        assert!((p - 200.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn order_stat_domain() {
        let y = DiscreteDist::new(vec![(1.0, 1.0)]).unwrap();
        assert!(order_stat(&y, 2, 3).is_err());
        assert!(order_stat(&y, 2, 0).is_err());
        assert_eq!(order_stat(&y, 3, 2).unwrap().mean, 1.0);
    }

    #[test]
    fn small_n_rejected() {
        let d = PeriodDistribution::constant(100).unwrap();
        assert!(pbft_delay(&d, 3, Viewpoint::Primary).is_err());
    }
}
