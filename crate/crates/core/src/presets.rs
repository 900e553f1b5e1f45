//! Reference parameter sets: measured emitter distributions and the default
//! link used throughout the sweeps.

use crate::channel_model::ChannelParams;
use crate::ingest::AliceBudget;
use crate::photon_source::PhotonDistribution;

const fn two_photon(p1: f64, p2: f64) -> PhotonDistribution {
    PhotonDistribution {
        p0: 1.0 - p1 - p2,
        p1,
        p2,
        p3: 0.0,
    }
}

/// Bright emitter with collection optics, used for the decoy protocol.
pub const SPS1: PhotonDistribution = two_photon(0.529, 0.112);
/// Emitter with a large two-photon share, used for heralded purification.
pub const SPS2: PhotonDistribution = two_photon(0.458, 0.427);
/// Bare dot at the decoy pump power.
pub const BARE_DECOY: PhotonDistribution = two_photon(0.096, 0.0017);
/// Bare dot at the signal pump power.
pub const BARE_SIGNAL: PhotonDistribution = two_photon(0.296, 0.029);
/// Bare dot at the high pump power feeding the purification stage.
pub const BARE_HERALDED: PhotonDistribution = two_photon(0.3231, 0.1114);

/// Named entries, in the order of the bundled `sources.json`.
pub const NAMED_SOURCES: [(&str, PhotonDistribution); 5] = [
    ("sps1", SPS1),
    ("sps2", SPS2),
    ("bare-decoy", BARE_DECOY),
    ("bare-signal", BARE_SIGNAL),
    ("bare-heralded", BARE_HERALDED),
];

pub fn source_by_name(name: &str) -> Option<PhotonDistribution> {
    NAMED_SOURCES
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, d)| *d)
}

/// Herald detector efficiency and dark-count probability of the purification stage.
pub const HERALD_ETA_D: f64 = 0.9;
pub const HERALD_P_DC: f64 = 2e-7;

/// Dark-count probabilities for 100 counts/s at 2 MHz and 500 MHz repetition.
pub const P_DC_2_MHZ: f64 = 100.0 / 2e6;
pub const P_DC_500_MHZ: f64 = 100.0 / 500e6;

/// Vacuum yield used by the lab pipeline when no vacuum map exists.
pub const LAB_VACUUM_YIELD: f64 = 1.7e-6;

pub fn default_channel() -> ChannelParams {
    ChannelParams::default()
}

/// Link for the lab replica: default receiver, with the dark-count
/// probability equal to the lab vacuum yield so the fallback vacuum
/// constants describe the same detectors.
pub fn lab_channel() -> ChannelParams {
    ChannelParams {
        p_dc: LAB_VACUUM_YIELD,
        ..ChannelParams::default()
    }
}

pub fn lab_budget() -> AliceBudget {
    AliceBudget::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_distributions() {
        for (name, d) in NAMED_SOURCES {
            d.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert_eq!(source_by_name("SPS2"), Some(SPS2));
        assert_eq!(source_by_name("nope"), None);
    }

    #[test]
    fn dark_count_probabilities() {
        assert_eq!(P_DC_2_MHZ, 5e-5);
        assert_eq!(P_DC_500_MHZ, 2e-7);
    }
}
