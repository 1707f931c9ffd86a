//! Monte Carlo estimation of logical error rates over parameter grids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::NoiseParams;
use crate::decoder::decode;
use crate::error::{config, Error, Result};
use crate::lattice::ToricLayout;
use crate::simulator::{Architecture, LeakageModel, LeakedReadout, RandomFaults, Simulator};

/// Trials handed to one worker at a time.
const CHUNK: u64 = 512;

/// z-score of a two-sided 95% interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub arch: Architecture,
    pub model: LeakageModel,
    pub d: usize,
    pub rounds: usize,
    pub noise: NoiseParams,
    pub seed: u64,
    pub trials: u64,
    #[serde(default)]
    pub leaked_readout: LeakedReadout,
}

impl TrialConfig {
    /// `d` noisy rounds, one trial, seed 0.
    pub fn new(arch: Architecture, model: LeakageModel, d: usize, noise: NoiseParams) -> Self {
        TrialConfig { arch, model, d, rounds: d, noise, seed: 0, trials: 1, leaked_readout: LeakedReadout::default() }
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return config("trial count must be at least 1");
        }
        if self.rounds == 0 {
            return config("at least one noisy round is required");
        }
        ToricLayout::new(self.d)?;
        self.noise.validate()
    }
}

/// One estimated point, flattened in output column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub arch: Architecture,
    pub model: LeakageModel,
    pub d: usize,
    pub rounds: usize,
    pub p_s: f64,
    pub p_s_1q: f64,
    #[serde(rename = "p_M")]
    pub p_m: f64,
    #[serde(rename = "sigma_uG")]
    pub sigma_ug: Option<f64>,
    pub trials: u64,
    pub failures_x: u64,
    pub failures_z: u64,
    pub failures: u64,
    #[serde(rename = "p_L")]
    pub p_l: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
}

/// Failure tallies over a batch of trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub trials: u64,
    pub x: u64,
    pub z: u64,
    pub either: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally { trials: self.trials + o.trials, x: self.x + o.x, z: self.z + o.z, either: self.either + o.either }
    }
}

/// splitmix64 finalizer over `a` and `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG of trial `index` under point seed `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, index))
}

/// Runs trials `range` of `config` sequentially.
pub fn run_trials(config: &TrialConfig, range: std::ops::Range<u64>) -> Result<Tally> {
    let layout = ToricLayout::new(config.d)?;
    let mut sim = Simulator::from_config(&layout, config)?;
    let mut tally = Tally::default();
    for i in range {
        let record = sim.run(&mut RandomFaults(trial_rng(config.seed, i)))?;
        let (x, z) = decode(&record, &layout)?;
        tally.trials += 1;
        tally.x += x as u64;
        tally.z += z as u64;
        tally.either += (x || z) as u64;
    }
    Ok(tally)
}

pub fn estimate_point(config: &TrialConfig) -> Result<SweepRecord> {
    config.validate()?;
    let chunks = config.trials.div_ceil(CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|c| run_trials(config, c * CHUNK..((c + 1) * CHUNK).min(config.trials)))
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
    record(config, tally)
}

fn record(config: &TrialConfig, t: Tally) -> Result<SweepRecord> {
    let (ci_lo, ci_hi) = wilson_interval(t.either, t.trials, Z_95)?;
    Ok(SweepRecord {
        arch: config.arch,
        model: config.model,
        d: config.d,
        rounds: config.rounds,
        p_s: config.noise.p_s_2q,
        p_s_1q: config.noise.p_s_1q,
        p_m: config.noise.p_m,
        sigma_ug: config.noise.sigma_ug,
        trials: t.trials,
        failures_x: t.x,
        failures_z: t.z,
        failures: t.either,
        p_l: t.either as f64 / t.trials as f64,
        ci_lo,
        ci_hi,
        seed: config.seed,
    })
}

/// Seed of grid point `index` under base seed `base`.
pub fn point_seed(base: u64, index: usize) -> u64 {
    mix(base, index as u64)
}

/// Estimates every point of `grid` in grid order. Each point runs under
/// [`point_seed`] of its own base seed and grid position, so a record does
/// not depend on which other points ran or in what order.
pub fn sweep(grid: &[TrialConfig]) -> Result<Vec<SweepRecord>> {
    if grid.is_empty() {
        return config("empty sweep grid");
    }
    grid.iter()
        .enumerate()
        .map(|(i, c)| estimate_point(&TrialConfig { seed: point_seed(c.seed, i), ..c.clone() }))
        .collect()
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Least-squares slope of `ln p_L` against `ln p_s`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    for &(p_s, p_l) in points {
        if !(p_l > 0.0) {
            return Err(Error::Fit(format!("p_L = {p_l} at p_s = {p_s}; raise the trial count")));
        }
        if !(p_s > 0.0) {
            return Err(Error::Fit(format!("non-positive p_s = {p_s}")));
        }
    }
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(s, l)| (s.ln(), l.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all points share one p_s".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Wilson score interval for `failures` out of `trials`.
pub fn wilson_interval(failures: u64, trials: u64, z: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Config("Wilson interval needs at least one trial".into()));
    }
    if failures > trials {
        return Err(Error::Config(format!("{failures} failures out of {trials} trials")));
    }
    let n = trials as f64;
    let p = failures as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if failures == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if failures == trials { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((lo, hi))
}
