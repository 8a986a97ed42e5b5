#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use vep_core::scenario::{self, RunResult, ScenarioFile};
use vep_core::simnet::PeriodDistribution;

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> PeriodDistribution {
    PeriodDistribution::load(&workspace().join("fixtures").join(format!("{name}.toml"))).expect("fixture")
}

/// Scenario text resolved relative to `scenarios/`, so fixture references
/// read `../fixtures/<name>.toml`.
pub fn scenario(text: &str) -> ScenarioFile {
    ScenarioFile::from_toml_str(text, workspace().join("scenarios")).expect("scenario")
}

pub fn shipped(name: &str) -> ScenarioFile {
    ScenarioFile::load(&workspace().join("scenarios").join(format!("{name}.toml"))).expect("scenario")
}

pub fn with(file: &ScenarioFile, sets: &[(&str, String)]) -> ScenarioFile {
    let sets: Vec<(String, String)> = sets.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    file.with_overrides(&sets).expect("override")
}

pub fn run(file: &ScenarioFile) -> RunResult {
    scenario::run(file).expect("run")
}

/// Runs `file` once per seed, in parallel, and maps each result.
pub fn over_seeds<T: Send>(
    file: &ScenarioFile,
    seeds: std::ops::Range<u64>,
    f: impl Fn(RunResult) -> T + Sync,
) -> Vec<T> {
    seeds
        .into_par_iter()
        .map(|s| f(run(&with(file, &[("seed", s.to_string())]))))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Four vehicles with one consensus process started at 3 s.
pub fn single_process(dist: &str, n: u32) -> ScenarioFile {
    scenario(&format!(
        r#"
name = "single_process"
duration_s = 15
seed = 1
[distributions]
d = {{ file = "../fixtures/{dist}.toml" }}
[paths]
p = [[0.0, 0.0], [2000.0, 0.0]]
[[group]]
count = {n}
distribution = "d"
path = "p"
[view]
trigger_period_ms = 1000000
first_trigger_ms = 3000
"#
    ))
}

/// Two highway vehicles negotiating a maneuver every 10 s.
pub fn maneuver_pair() -> ScenarioFile {
    scenario(
        r#"
name = "maneuver_pair"
duration_s = 600
seed = 1
[distributions]
highway = { file = "../fixtures/highway.toml" }
[paths]
highway = [[0.0, 0.0], [2000.0, 0.0]]
on_ramp = [[0.0, -80.0], [400.0, -4.0], [2000.0, -4.0]]
[mcs]
period_ms = 100
[[group]]
count = 1
distribution = "highway"
path = "highway"
[[group]]
count = 1
distribution = "highway"
path = "on_ramp"
[maneuver]
trigger = "periodic"
trigger_period_ms = 10000
promise_amount = 100
"#,
    )
}

pub const FIXTURES: [&str; 6] = ["const100", "two_point", "highway", "on_ramp", "uniform", "mixed"];

/// Sampler for a period distribution, built from the raw support so it
/// shares nothing with the library's own sampling.
pub struct Periods {
    cum: Vec<(f64, u64)>,
}

impl Periods {
    pub fn new(d: &PeriodDistribution) -> Self {
        let mut acc = 0.0;
        let cum = d
            .support()
            .iter()
            .map(|p| {
                acc += p.probability;
                (acc, p.period_ms)
            })
            .collect();
        Periods { cum }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        self.cum
            .iter()
            .find(|(c, _)| u < *c)
            .unwrap_or(self.cum.last().unwrap())
            .1 as f64
    }
}

/// Residual times seen from `n` uniformly random instants of one long
/// renewal sequence.
pub fn residual_samples(d: &PeriodDistribution, n: usize, seed: u64) -> Vec<f64> {
    let periods = Periods::new(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ends = Vec::new();
    let mut t = 0.0;
    // long enough that edge effects vanish: ~20 renewals per sample
    while ends.len() < n * 20 {
        t += periods.draw(&mut rng);
        ends.push(t);
    }
    (0..n)
        .map(|_| {
            let at = rng.gen_range(0.0..t);
            let i = ends.partition_point(|e| *e <= at);
            ends[i] - at
        })
        .collect()
}

/// Enumerates every m-tuple of support indices.
pub fn brute_force(values: &[f64], probs: &[f64], m: usize, g: usize) -> Vec<f64> {
    let k = values.len();
    let mut mass = vec![0.0; k];
    let mut idx = vec![0usize; m];
    loop {
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        let p: f64 = idx.iter().map(|&i| probs[i]).product();
        mass[sorted[g - 1]] += p;
        // odometer increment
        let mut pos = 0;
        while pos < m {
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == m {
            break;
        }
    }
    mass
}
