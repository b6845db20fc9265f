//! Monte-Carlo simulation of projective z measurements.
//!
//! Each time point draws `up_counts[k] ~ Binomial(n_e, p₊(k))` with
//! `p₊ = (1 + (1 - 2η) z(kΔt)) / 2`. Randomness comes from
//! `ChaCha8Rng::seed_from_u64(seed)` with the stream selected per time point,
//! so results do not depend on evaluation order or thread count.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_z, DecoherenceRates, HamiltonianParams};
use crate::error::{ensure_finite, Error, Result};

/// Rounding slack tolerated on an outcome probability before it is rejected.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

const AUX_TOPUP_TAG: u64 = 1 << 62;
const AUX_GROWING_TAG: u64 = 2 << 62;
const AUX_CHAIN_TAG: u64 = 3 << 62;

/// Spacing of the auxiliary measure-wait-measure sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxInterval {
    /// Pairs measured back to back without re-preparation; the second outcome
    /// at lag `k` is binned by the first.
    #[default]
    Fixed,
    /// Independent shots per lag, each waiting `k·dt` after the binning
    /// measurement.
    Growing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dt: f64,
    pub n_t: usize,
    pub n_e: u64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_init_z")]
    pub init_z: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub aux_interval: AuxInterval,
}

fn default_init_z() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn new(dt: f64, n_t: usize, n_e: u64) -> Self {
        Self { dt, n_t, n_e, eta: 0.0, init_z: 1.0, seed: 0, aux_interval: AuxInterval::Fixed }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_measurements(&self) -> u64 {
        self.n_t as u64 * self.n_e
    }

    pub fn observation_time(&self) -> f64 {
        self.n_t as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.dt, "dt")?;
        ensure_finite(self.eta, "eta")?;
        if self.dt <= 0.0 {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.n_t < 2 {
            return Err(Error::InvalidInput(format!("n_t must be >= 2, got {}", self.n_t)));
        }
        if self.n_e < 1 {
            return Err(Error::InvalidInput("n_e must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.eta) {
            return Err(Error::InvalidInput(format!("eta must lie in [0, 0.5), got {}", self.eta)));
        }
        if self.init_z != 1.0 && self.init_z != -1.0 {
            return Err(Error::InvalidInput(format!("init_z must be +1 or -1, got {}", self.init_z)));
        }
        Ok(())
    }
}

/// Ensemble-averaged record on a uniform grid.
///
/// `n_e = 0` marks an exact expectation-value series with no counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub up_counts: Vec<u64>,
    pub n_e: u64,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    z_mean: f64,
    up_counts: u64,
    n_e: u64,
}

fn grid(dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

impl TimeSeries {
    pub fn from_counts(dt: f64, up_counts: Vec<u64>, n_e: u64) -> Self {
        let z_mean = up_counts.iter().map(|&u| count_to_z(u, n_e)).collect();
        Self { times: grid(dt, up_counts.len()), z_mean, up_counts, n_e }
    }

    pub fn exact(dt: f64, z: Vec<f64>) -> Self {
        Self { times: grid(dt, z.len()), up_counts: vec![0; z.len()], z_mean: z, n_e: 0 }
    }

    pub fn len(&self) -> usize {
        self.z_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_mean.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.n_e == 0
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            return f64::NAN;
        }
        self.times[1] - self.times[0]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.z_mean.len();
        if self.times.len() != n || self.up_counts.len() != n {
            return Err(Error::InvalidInput("time series columns differ in length".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput("time series needs at least 2 points".into()));
        }
        let dt = self.dt();
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
        }
        for (k, (&t, &z)) in self.times.iter().zip(&self.z_mean).enumerate() {
            ensure_finite(z, "z_mean")?;
            if (t - k as f64 * dt).abs() > 1e-9 * dt.max(t.abs()) {
                return Err(Error::InvalidInput(format!("time grid is not uniform at row {k}")));
            }
            if z.abs() > 1.0 + PROBABILITY_TOLERANCE {
                return Err(Error::InvalidInput(format!("|z_mean| > 1 at row {k}")));
            }
        }
        if self.n_e > 0 {
            for (k, (&u, &z)) in self.up_counts.iter().zip(&self.z_mean).enumerate() {
                if u > self.n_e || (z - count_to_z(u, self.n_e)).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!("z_mean disagrees with up_counts at row {k}")));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for k in 0..self.len() {
            w.serialize(CsvRow {
                t: self.times[k],
                z_mean: self.z_mean[k],
                up_counts: self.up_counts[k],
                n_e: self.n_e,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut s = Self { times: vec![], z_mean: vec![], up_counts: vec![], n_e: 0 };
        for (k, row) in r.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            if k == 0 {
                s.n_e = row.n_e;
            } else if row.n_e != s.n_e {
                return Err(Error::InvalidInput(format!("n_e changes at row {k}")));
            }
            s.times.push(row.t);
            s.z_mean.push(row.z_mean);
            s.up_counts.push(row.up_counts);
        }
        s.validate()?;
        Ok(s)
    }
}

fn count_to_z(up: u64, n_e: u64) -> f64 {
    2.0 * up as f64 / n_e as f64 - 1.0
}

/// Probability of recording `+1` given the noiseless projection `z`.
pub fn outcome_probability(z: f64, eta: f64) -> Result<f64> {
    let p = 0.5 * (1.0 + (1.0 - 2.0 * eta) * z);
    if !p.is_finite() {
        return Err(Error::NonFinite("outcome probability"));
    }
    if p < -PROBABILITY_TOLERANCE || p > 1.0 + PROBABILITY_TOLERANCE {
        return Err(Error::ProbabilityOutOfRange { p });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// SplitMix64 finalizer applied to `seed + index·golden`, for per-replicate
/// master seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn binomial_draw(n_e: u64, p: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    let dist = Binomial::new(n_e, p).map_err(|_| Error::ProbabilityOutOfRange { p })?;
    Ok(dist.sample(rng))
}

fn sample_points(z: &[f64], cfg: &ExperimentConfig, tag: u64) -> Result<Vec<u64>> {
    z.par_iter()
        .enumerate()
        .map(|(k, &zk)| {
            let p = outcome_probability(zk, cfg.eta)?;
            binomial_draw(cfg.n_e, p, &mut stream_rng(cfg.seed, tag | k as u64))
        })
        .collect()
}

/// Measured-signal expectation `(1 - 2η) z(kΔt)` as an exact series.
pub fn expected_series(h: &HamiltonianParams, rates: &DecoherenceRates, cfg: &ExperimentConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    let z = propagate_z(h, rates, cfg.init_z, cfg.dt, cfg.n_t)?;
    let scale = 1.0 - 2.0 * cfg.eta;
    Ok(TimeSeries::exact(cfg.dt, z.into_iter().map(|v| scale * v).collect()))
}

pub fn sample_experiment(h: &HamiltonianParams, rates: &DecoherenceRates, cfg: &ExperimentConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    let z = propagate_z(h, rates, cfg.init_z, cfg.dt, cfg.n_t)?;
    let counts = sample_points(&z, cfg, 0)?;
    Ok(TimeSeries::from_counts(cfg.dt, counts, cfg.n_e))
}

/// z trace when the bit flip acts on the prepared state: the ensemble starts
/// as the mixture `(1 - η)|init⟩ + η|-init⟩`.
pub fn flip_before_evolution(
    h: &HamiltonianParams,
    rates: &DecoherenceRates,
    init_z: f64,
    eta: f64,
    dt: f64,
    n_t: usize,
) -> Result<Vec<f64>> {
    let kept = propagate_z(h, rates, init_z, dt, n_t)?;
    let flipped = propagate_z(h, rates, -init_z, dt, n_t)?;
    Ok(kept.iter().zip(&flipped).map(|(a, b)| (1.0 - eta) * a + eta * b).collect())
}

/// z trace when the bit flip acts on the recorded outcome.
pub fn flip_after_evolution(
    h: &HamiltonianParams,
    rates: &DecoherenceRates,
    init_z: f64,
    eta: f64,
    dt: f64,
    n_t: usize,
) -> Result<Vec<f64>> {
    let z = propagate_z(h, rates, init_z, dt, n_t)?;
    z.iter().map(|&v| outcome_probability(v, eta).map(|p| 2.0 * p - 1.0)).collect()
}

/// The two binned branches of the auxiliary experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSeries {
    /// Windows opened by a `+1` outcome.
    pub z1: TimeSeries,
    /// Windows opened by a `-1` outcome.
    pub zm1: TimeSeries,
}

/// Auxiliary d = 0 experiment. Only the rates drive the populations, so any
/// Hamiltonian along σz is irrelevant and omitted.
pub fn sample_aux_experiment(rates: &DecoherenceRates, cfg: &ExperimentConfig) -> Result<AuxSeries> {
    cfg.validate()?;
    rates.validate()?;
    let (up_p, up_m) = match cfg.aux_interval {
        AuxInterval::Growing => aux_growing(rates, cfg)?,
        AuxInterval::Fixed => aux_fixed(rates, cfg)?,
    };
    Ok(AuxSeries {
        z1: TimeSeries::from_counts(cfg.dt, up_p, cfg.n_e),
        zm1: TimeSeries::from_counts(cfg.dt, up_m, cfg.n_e),
    })
}

/// Exact branch expectations `(1 - 2η) z_b(kΔt)` for windows opened in the
/// true states `b = ±1`.
pub fn expected_aux_series(rates: &DecoherenceRates, cfg: &ExperimentConfig) -> Result<AuxSeries> {
    cfg.validate()?;
    let idle = HamiltonianParams::idle();
    let scale = 1.0 - 2.0 * cfg.eta;
    let branch = |start: f64| -> Result<TimeSeries> {
        let z = propagate_z(&idle, rates, start, cfg.dt, cfg.n_t)?;
        Ok(TimeSeries::exact(cfg.dt, z.into_iter().map(|v| scale * v).collect()))
    };
    Ok(AuxSeries { z1: branch(1.0)?, zm1: branch(-1.0)? })
}

fn aux_growing(rates: &DecoherenceRates, cfg: &ExperimentConfig) -> Result<(Vec<u64>, Vec<u64>)> {
    let idle = HamiltonianParams::idle();
    let mut out = Vec::with_capacity(2);
    for (branch, start) in [(0u64, 1.0), (1u64, -1.0)] {
        let z = propagate_z(&idle, rates, start, cfg.dt, cfg.n_t)?;
        out.push(sample_points(&z, cfg, AUX_GROWING_TAG | (branch << 32))?);
    }
    let m = out.pop().unwrap();
    Ok((out.pop().unwrap(), m))
}

/// Two-outcome Markov chain on the true state (`true` = `+1`).
struct Chain {
    p_up_from_up: f64,
    p_up_from_down: f64,
}

impl Chain {
    fn new(from_up: f64, from_down: f64) -> Result<Self> {
        Ok(Self {
            p_up_from_up: outcome_probability(from_up, 0.0)?,
            p_up_from_down: outcome_probability(from_down, 0.0)?,
        })
    }

    fn step(&self, state: bool, rng: &mut ChaCha8Rng) -> bool {
        let p = if state { self.p_up_from_up } else { self.p_up_from_down };
        rng.random::<f64>() < p
    }
}

fn record(state: bool, eta: f64, rng: &mut ChaCha8Rng) -> bool {
    state ^ (eta > 0.0 && rng.random::<f64>() < eta)
}

/// Per lag, one uninterrupted run of measure-wait-measure pairs with a gap of
/// `dt` between pairs. The first outcome of a pair only selects the branch.
fn aux_fixed(rates: &DecoherenceRates, cfg: &ExperimentConfig) -> Result<(Vec<u64>, Vec<u64>)> {
    let idle = HamiltonianParams::idle();
    let from_up = propagate_z(&idle, rates, 1.0, cfg.dt, cfg.n_t)?;
    let from_down = propagate_z(&idle, rates, -1.0, cfg.dt, cfg.n_t)?;
    let gap = Chain::new(from_up[1.min(cfg.n_t - 1)], from_down[1.min(cfg.n_t - 1)])?;
    let n_e = cfg.n_e;
    let max_pairs = 50 * n_e;
    let per_lag: Vec<(u64, u64)> = (0..cfg.n_t)
        .into_par_iter()
        .map(|k| -> Result<(u64, u64)> {
            let wait = Chain::new(from_up[k], from_down[k])?;
            let mut rng = stream_rng(cfg.seed, AUX_CHAIN_TAG | k as u64);
            let mut filled = [0u64; 2];
            let mut up = [0u64; 2];
            let mut state = cfg.init_z > 0.0;
            let mut pairs = 0;
            while pairs < max_pairs && (filled[0] < n_e || filled[1] < n_e) {
                let branch = if record(state, cfg.eta, &mut rng) { 0 } else { 1 };
                state = wait.step(state, &mut rng);
                let outcome = record(state, cfg.eta, &mut rng);
                if filled[branch] < n_e {
                    filled[branch] += 1;
                    up[branch] += outcome as u64;
                }
                state = gap.step(state, &mut rng);
                pairs += 1;
            }
            // Branches the chain rarely visits are completed with explicitly
            // prepared pairs that start in the branch's true state.
            for branch in 0..2 {
                let missing = n_e - filled[branch];
                if missing > 0 {
                    let p = outcome_probability(if branch == 0 { from_up[k] } else { from_down[k] }, cfg.eta)?;
                    let tag = AUX_TOPUP_TAG | ((branch as u64) << 32) | k as u64;
                    up[branch] += binomial_draw(missing, p, &mut stream_rng(cfg.seed, tag))?;
                }
            }
            Ok((up[0], up[1]))
        })
        .collect::<Result<_>>()?;
    Ok(per_lag.into_iter().unzip())
}
