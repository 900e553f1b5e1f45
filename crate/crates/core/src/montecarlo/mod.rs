//! Pulse-level emulation of the DTB and HP protocols.
//!
//! Work is split into a fixed number of shards. Shard `i` draws from a
//! ChaCha8 stream seeded with the run seed and stream id `i`, and shard
//! tallies are summed, so reports are identical regardless of thread count.

mod hbt;
mod tomography;

pub use hbt::{empirical_g2, simulate_hbt, HbtReport, HbtSource, HbtTally};
pub use tomography::{replica_maps, simulate_tomography_counts, synthetic_tomography_map};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::ChannelParams;
use crate::error::{QkdError, Result};
use crate::photon_source::PhotonDistribution;
use crate::protocols::HpSetting;

/// Number of independent RNG streams a run is split into.
pub const SHARDS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_pulses: u64,
    pub seed: u64,
    pub channel: ChannelParams,
    /// Source-side collection efficiency applied photon by photon.
    #[serde(default = "one")]
    pub eta_c: f64,
    #[serde(flatten)]
    pub protocol: SimProtocol,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum SimProtocol {
    /// Intensity settings in order vacuum, decoy, signal (or any list), each
    /// picked per pulse with the matching weight.
    Dtb {
        intensities: Vec<PhotonDistribution>,
        intensity_weights: Vec<f64>,
    },
    Hp {
        setting: HpSetting,
    },
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pulses == 0 {
            return Err(QkdError::Config("n_pulses must be at least 1".into()));
        }
        self.channel.validate()?;
        if !(0.0..=1.0).contains(&self.eta_c) {
            return Err(QkdError::Config(format!(
                "eta_c = {} outside [0, 1]",
                self.eta_c
            )));
        }
        match &self.protocol {
            SimProtocol::Dtb {
                intensities,
                intensity_weights,
            } => {
                if intensities.is_empty() || intensities.len() != intensity_weights.len() {
                    return Err(QkdError::Config(
                        "one weight per intensity is required".into(),
                    ));
                }
                if intensity_weights.iter().any(|&w| w < 0.0) {
                    return Err(QkdError::Config(
                        "intensity weights must be non-negative".into(),
                    ));
                }
                let sum: f64 = intensity_weights.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(QkdError::Config(format!("intensity weights sum to {sum}")));
                }
                for d in intensities {
                    d.validate()?;
                }
            }
            SimProtocol::Hp { setting } => {
                if (setting.t + setting.r - 1.0).abs() > 1e-12 {
                    return Err(QkdError::Config("beam splitter t + r must be 1".into()));
                }
                setting.source.validate()?;
            }
        }
        Ok(())
    }
}

/// Integer tallies for one intensity setting. For HP runs, `detected` counts
/// pulses that were heralded and clicked at Bob.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityTally {
    pub sent: u64,
    pub detected: u64,
    /// Detections with matching bases.
    pub sifted: u64,
    /// Sifted detections with the wrong bit.
    pub errors: u64,
    /// Detections where both of Bob's detectors fired.
    pub double_clicks: u64,
}

impl IntensityTally {
    fn add(&mut self, o: &Self) {
        self.sent += o.sent;
        self.detected += o.detected;
        self.sifted += o.sifted;
        self.errors += o.errors;
        self.double_clicks += o.double_clicks;
    }

    pub fn gain(&self) -> Estimate {
        Estimate::binomial(self.detected, self.sent)
    }

    pub fn qber(&self) -> Estimate {
        Estimate::binomial(self.errors, self.sifted)
    }
}

/// Binomial proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn binomial(k: u64, n: u64) -> Self {
        if n == 0 {
            return Self {
                value: f64::NAN,
                sigma: f64::NAN,
            };
        }
        let p = k as f64 / n as f64;
        Self {
            value: p,
            sigma: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

/// Heralding statistics of an HP run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeraldTally {
    pub heralds: u64,
    /// `joint[k]`: heralded pulses that sent `k` photons toward Bob (k = 0..=3).
    pub joint: [u64; 4],
}

impl HeraldTally {
    fn add(&mut self, o: &Self) {
        self.heralds += o.heralds;
        for k in 0..4 {
            self.joint[k] += o.joint[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub n_pulses: u64,
    pub protocol: String,
    pub intensities: Vec<IntensityTally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub herald: Option<HeraldTally>,
}

impl SimReport {
    /// Sifted-key length: matched-basis detections over all settings.
    pub fn sifted_key_length(&self) -> u64 {
        self.intensities.iter().map(|t| t.sifted).sum()
    }
}

/// Pulses handled by shard `i` when `n` pulses are split over [`SHARDS`].
pub(crate) fn shard_size(n: u64, i: u64) -> u64 {
    n / SHARDS + u64::from(i < n % SHARDS)
}

pub(crate) fn shard_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a photon number from `weights` (index = photon number).
pub(crate) fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (n, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return n;
        }
    }
    // u landed in the rounding gap above the last cumulative weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Number of `n` photons surviving independent loss with survival `eta`.
pub(crate) fn thin<R: Rng>(rng: &mut R, n: usize, eta: f64) -> usize {
    if eta >= 1.0 {
        return n;
    }
    (0..n).filter(|_| rng.random::<f64>() < eta).count()
}

/// Bob's threshold-detector pair.
pub(crate) struct Receiver {
    eta: f64,
    e_d: f64,
    /// Per-detector dark probability, chosen so at least one dark click
    /// happens with the channel's `p_dc`.
    p_dark: f64,
}

/// Outcome of a pulse at Bob: measured bit and whether both detectors fired.
pub(crate) struct Click {
    pub bit: bool,
    pub double: bool,
}

impl Receiver {
    pub fn new(channel: &ChannelParams) -> Self {
        Self {
            eta: channel.eta(),
            e_d: channel.e_d,
            p_dark: 1.0 - (1.0 - channel.p_dc).sqrt(),
        }
    }

    /// Measures `photons` in `bob_basis` for a state prepared as
    /// (`alice_basis`, `alice_bit`).
    pub fn measure<R: Rng>(
        &self,
        rng: &mut R,
        photons: usize,
        alice_basis: bool,
        alice_bit: bool,
        bob_basis: bool,
    ) -> Option<Click> {
        let mut clicks = [false; 2];
        if thin(rng, photons, self.eta) > 0 {
            // All photons of a pulse share one polarization mode.
            let bit = if bob_basis == alice_basis {
                alice_bit ^ (rng.random::<f64>() < self.e_d)
            } else {
                rng.random::<bool>()
            };
            clicks[bit as usize] = true;
        }
        for c in clicks.iter_mut() {
            if rng.random::<f64>() < self.p_dark {
                *c = true;
            }
        }
        match clicks {
            [false, false] => None,
            [true, true] => Some(Click {
                bit: rng.random(),
                double: true,
            }),
            [b0, _] => Some(Click {
                bit: !b0,
                double: false,
            }),
        }
    }
}

fn tally_bob<R: Rng>(rng: &mut R, rx: &Receiver, photons: usize, t: &mut IntensityTally) {
    let alice_basis: bool = rng.random();
    let alice_bit: bool = rng.random();
    let bob_basis: bool = rng.random();
    if let Some(click) = rx.measure(rng, photons, alice_basis, alice_bit, bob_basis) {
        t.detected += 1;
        t.double_clicks += u64::from(click.double);
        if bob_basis == alice_basis {
            t.sifted += 1;
            t.errors += u64::from(click.bit != alice_bit);
        }
    }
}

/// Decoy-state run: random intensity, photon number, collection loss, BB84
/// encoding, channel, sifting.
pub fn run_dtb(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let SimProtocol::Dtb {
        intensities,
        intensity_weights,
    } = &config.protocol
    else {
        return Err(QkdError::Config("run_dtb needs a dtb configuration".into()));
    };
    let weights: Vec<[f64; 4]> = intensities.iter().map(|d| d.as_array()).collect();
    let rx = Receiver::new(&config.channel);
    let k = intensities.len();
    let shards: Vec<Vec<IntensityTally>> = (0..SHARDS)
        .into_par_iter()
        .map(|s| {
            let mut rng = shard_rng(config.seed, s);
            let mut tallies = vec![IntensityTally::default(); k];
            for _ in 0..shard_size(config.n_pulses, s) {
                let i = sample_index(&mut rng, intensity_weights);
                let n = sample_index(&mut rng, &weights[i]);
                let n = thin(&mut rng, n, config.eta_c);
                let t = &mut tallies[i];
                t.sent += 1;
                tally_bob(&mut rng, &rx, n, t);
            }
            tallies
        })
        .collect();
    let mut intensities_out = vec![IntensityTally::default(); k];
    for shard in &shards {
        for (acc, t) in intensities_out.iter_mut().zip(shard) {
            acc.add(t);
        }
    }
    Ok(SimReport {
        seed: config.seed,
        n_pulses: config.n_pulses,
        protocol: "dtb".into(),
        intensities: intensities_out,
        herald: None,
    })
}

/// Heralded-purification run. Pulses without a herald are discarded even if
/// Bob clicked; the single intensity tally counts heralded pulses only in
/// `detected`, `sifted` and `errors`, while `sent` counts every pulse.
pub fn run_hp(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let SimProtocol::Hp { setting } = &config.protocol else {
        return Err(QkdError::Config("run_hp needs an hp configuration".into()));
    };
    let weights = setting.source.as_array();
    let rx = Receiver::new(&config.channel);
    let shards: Vec<(IntensityTally, HeraldTally)> = (0..SHARDS)
        .into_par_iter()
        .map(|s| {
            let mut rng = shard_rng(config.seed, s);
            let mut t = IntensityTally::default();
            let mut h = HeraldTally::default();
            for _ in 0..shard_size(config.n_pulses, s) {
                t.sent += 1;
                let n = sample_index(&mut rng, &weights);
                let n = thin(&mut rng, n, config.eta_c);
                let to_bob = thin(&mut rng, n, setting.t);
                let reflected = n - to_bob;
                let herald = thin(&mut rng, reflected, setting.eta_d) > 0
                    || rng.random::<f64>() < setting.p_dc_alice;
                if !herald {
                    continue;
                }
                h.heralds += 1;
                h.joint[to_bob.min(3)] += 1;
                tally_bob(&mut rng, &rx, to_bob, &mut t);
            }
            (t, h)
        })
        .collect();
    let mut t = IntensityTally::default();
    let mut h = HeraldTally::default();
    for (ts, hs) in &shards {
        t.add(ts);
        h.add(hs);
    }
    Ok(SimReport {
        seed: config.seed,
        n_pulses: config.n_pulses,
        protocol: "hp".into(),
        intensities: vec![t],
        herald: Some(h),
    })
}

#[cfg(test)]
mod tests;
