//! Hanbury Brown-Twiss emulation: a 50:50 split onto two virtual
//! photon-counting detectors.
//!
//! Counting photons rather than clicks makes the coincidence ratio an
//! unbiased estimate of `<n(n-1)> / <n>^2` at any detection efficiency,
//! since binomial loss and splitting preserve factorial moments.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_index, shard_rng, shard_size, thin, SHARDS};
use crate::error::{QkdError, Result};
use crate::photon_source::PhotonDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HbtSource {
    Fock { distribution: PhotonDistribution },
    Poisson { mu: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbtTally {
    pub pulses: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    /// Sum over pulses of `n_a * n_b`.
    pub coincidences: u64,
}

impl HbtTally {
    fn g2(&self) -> Option<f64> {
        if self.singles_a == 0 || self.singles_b == 0 {
            return None;
        }
        Some(
            self.pulses as f64 * self.coincidences as f64
                / (self.singles_a as f64 * self.singles_b as f64),
        )
    }
}

/// Per-shard tallies, kept separate so the spread across shards gives an
/// error bar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbtReport {
    pub seed: u64,
    pub shards: Vec<HbtTally>,
}

impl HbtReport {
    pub fn total(&self) -> HbtTally {
        self.shards.iter().fold(HbtTally::default(), |mut acc, t| {
            acc.pulses += t.pulses;
            acc.singles_a += t.singles_a;
            acc.singles_b += t.singles_b;
            acc.coincidences += t.coincidences;
            acc
        })
    }
}

pub fn simulate_hbt(source: &HbtSource, eta: f64, n_pulses: u64, seed: u64) -> Result<HbtReport> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(QkdError::Domain(format!("eta = {eta} outside [0, 1]")));
    }
    let poisson = match source {
        HbtSource::Poisson { mu } => Some(
            Poisson::new(*mu).map_err(|e| QkdError::Domain(format!("poisson mean {mu}: {e}")))?,
        ),
        HbtSource::Fock { distribution } => {
            distribution.validate()?;
            None
        }
    };
    let shards = (0..SHARDS)
        .into_par_iter()
        .map(|s| {
            let mut rng = shard_rng(seed, s);
            let mut t = HbtTally::default();
            for _ in 0..shard_size(n_pulses, s) {
                let n = match (source, &poisson) {
                    (_, Some(p)) => p.sample(&mut rng) as usize,
                    (HbtSource::Fock { distribution }, None) => {
                        sample_index(&mut rng, &distribution.as_array())
                    }
                    (HbtSource::Poisson { .. }, None) => unreachable!(),
                };
                let n = thin(&mut rng, n, eta);
                let a = (0..n).filter(|_| rng.random::<bool>()).count() as u64;
                let b = n as u64 - a;
                t.pulses += 1;
                t.singles_a += a;
                t.singles_b += b;
                t.coincidences += a * b;
            }
            t
        })
        .collect();
    Ok(HbtReport { seed, shards })
}

/// Pooled g2 with a standard error from the spread of per-shard estimates.
pub fn empirical_g2(report: &HbtReport) -> Result<(f64, f64)> {
    let g = report
        .total()
        .g2()
        .ok_or_else(|| QkdError::Undefined("g2 with zero singles".into()))?;
    let per: Vec<f64> = report.shards.iter().filter_map(HbtTally::g2).collect();
    if per.len() < 2 {
        return Ok((g, f64::NAN));
    }
    let k = per.len() as f64;
    let mean = per.iter().sum::<f64>() / k;
    let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((g, (var / k).sqrt()))
}
