//! Key rates against records produced by an independent high-precision
//! evaluation (scripts/golden_skr.py).

use std::path::PathBuf;

use qkd_core::analysis::Protocol;
use qkd_core::channel_model::ChannelParams;
use qkd_core::photon_source::PhotonDistribution;
use qkd_core::protocols::{HpSetting, KeyRateParams};
use serde::Deserialize;

#[derive(Deserialize)]
struct Params {
    channel: ChannelParams,
    key: KeyRateParams,
    #[serde(default)]
    signal: Option<PhotonDistribution>,
    #[serde(default)]
    setting: Option<HpSetting>,
}

#[derive(Deserialize)]
struct Record {
    protocol: String,
    params: Params,
    loss_db: f64,
    skr: f64,
}

fn golden(name: &str) -> Vec<Record> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/golden")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn check(name: &str, rel_tol: f64) {
    let records = golden(name);
    assert!(!records.is_empty());
    for r in records {
        let protocol = match r.protocol.as_str() {
            "dtb" => Protocol::Dtb {
                signal: r.params.signal.unwrap(),
            },
            "hp" => Protocol::Hp {
                setting: r.params.setting.unwrap(),
            },
            "wcs" => Protocol::Wcs,
            "perfect-sps" => Protocol::PerfectSps,
            other => panic!("unknown protocol {other}"),
        };
        let got = protocol
            .rate(&r.params.channel, &r.params.key, r.loss_db)
            .unwrap();
        let rel = ((got - r.skr) / r.skr).abs();
        assert!(
            rel < rel_tol,
            "{name} at {} dB: {got:e} vs {:e} (rel {rel:e})",
            r.loss_db,
            r.skr
        );
    }
}

#[test]
fn dtb_sps1() {
    check("dtb_sps1.json", 1e-9);
}

#[test]
fn dtb_bare_signal() {
    check("dtb_bare_signal.json", 1e-9);
}

#[test]
fn perfect_single_photons() {
    check("perfect_sps.json", 1e-9);
}

#[test]
fn heralded_purification_sps2() {
    check("hp_sps2.json", 1e-9);
}

// The intensity optimum is located to 1e-6, and the rate is flat there.
#[test]
fn wcs_with_optimized_intensity() {
    check("wcs.json", 1e-7);
}
