//! Synthetic polarization-tomography maps.

use rayon::prelude::*;

use super::{sample_index, shard_rng, shard_size, Receiver, SHARDS};
use crate::channel_model::ChannelParams;
use crate::error::Result;
use crate::ingest::{AliceBudget, Intensity, MapMetadata, TomographyMap};
use crate::photon_source::PhotonDistribution;

/// Counts `[alice][bob]` (H, V, D, A order) for `pulses_per_setting` pulses
/// per (Alice state, Bob basis) setting. Bob's basis is fixed per setting.
pub fn simulate_tomography_counts(
    d: &PhotonDistribution,
    channel: &ChannelParams,
    pulses_per_setting: u64,
    seed: u64,
) -> Result<[[u64; 4]; 4]> {
    d.validate()?;
    channel.validate()?;
    let weights = d.as_array();
    let rx = Receiver::new(channel);
    // Setting k: Alice state k / 2, Bob basis k % 2. Streams are disjoint
    // across settings and shards.
    let cells: Vec<(usize, usize, u64)> = (0..8 * SHARDS)
        .into_par_iter()
        .flat_map_iter(|job| {
            let (setting, shard) = (job / SHARDS, job % SHARDS);
            let alice = (setting / 2) as usize;
            let bob_basis = setting % 2 == 1;
            let mut rng = shard_rng(seed, job);
            let mut local = [0u64; 2];
            for _ in 0..shard_size(pulses_per_setting, shard) {
                let n = sample_index(&mut rng, &weights);
                let alice_basis = alice >= 2;
                let alice_bit = alice % 2 == 1;
                if let Some(click) = rx.measure(&mut rng, n, alice_basis, alice_bit, bob_basis) {
                    local[click.bit as usize] += 1;
                }
            }
            let base = if bob_basis { 2 } else { 0 };
            [(alice, base, local[0]), (alice, base + 1, local[1])]
        })
        .collect();
    let mut counts = [[0u64; 4]; 4];
    for (a, b, c) in cells {
        counts[a][b] += c;
    }
    Ok(counts)
}

/// A full map for one intensity and filter setting, with the pulse count
/// per setting taken from Alice's budget and the exposure.
pub fn synthetic_tomography_map(
    d: &PhotonDistribution,
    channel: &ChannelParams,
    budget: &AliceBudget,
    intensity: Intensity,
    exposure_s: f64,
    seed: u64,
) -> Result<TomographyMap> {
    let pulses = (budget.sent_per_second() * exposure_s).round() as u64;
    let counts = simulate_tomography_counts(d, channel, pulses, seed)?;
    Ok(TomographyMap {
        counts,
        meta: MapMetadata {
            exposure_s: pulses as f64 / budget.sent_per_second(),
            intensity,
            nd_filter_db: channel.loss_db,
            background: None,
            background_exposure_s: None,
        },
    })
}

/// Maps for the decoy and signal settings (and the heralded setting if
/// `heralded` is given) at each filter loss, as a lab run would record them.
/// Seeds are derived from `seed` so every map is independent.
#[allow(clippy::too_many_arguments)]
pub fn replica_maps(
    decoy: &PhotonDistribution,
    signal: &PhotonDistribution,
    heralded: Option<&PhotonDistribution>,
    channel: &ChannelParams,
    budget: &AliceBudget,
    nd_filters_db: &[f64],
    exposure_s: f64,
    seed: u64,
) -> Result<Vec<TomographyMap>> {
    let mut maps = Vec::new();
    for (k, &nd) in nd_filters_db.iter().enumerate() {
        let ch = channel.with_loss(channel.loss_db + nd);
        let mut settings = vec![(Intensity::S1, decoy), (Intensity::S2, signal)];
        if let Some(h) = heralded {
            settings.push((Intensity::S3, h));
        }
        for (i, (intensity, d)) in settings.into_iter().enumerate() {
            let map_seed = seed.wrapping_add(1000 * k as u64 + i as u64);
            let mut map =
                synthetic_tomography_map(d, &ch, budget, intensity, exposure_s, map_seed)?;
            map.meta.nd_filter_db = nd;
            maps.push(map);
        }
    }
    Ok(maps)
}
