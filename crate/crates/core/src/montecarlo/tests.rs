use super::*;
use crate::channel_model::{gain_and_qber, yields, ObservedRates};
use crate::photon_source::{g2_of, hp_transform};
use crate::protocols::{hp_observed, solve_dtb, DtbSetting};

fn d(p1: f64, p2: f64) -> PhotonDistribution {
    PhotonDistribution::from_p1_p2(p1, p2).unwrap()
}

fn dtb_config(n: u64, seed: u64, channel: ChannelParams) -> SimConfig {
    SimConfig {
        n_pulses: n,
        seed,
        channel,
        eta_c: 1.0,
        protocol: SimProtocol::Dtb {
            intensities: vec![
                PhotonDistribution::vacuum(),
                d(0.096, 0.0017),
                d(0.296, 0.029),
            ],
            intensity_weights: vec![0.1, 0.3, 0.6],
        },
    }
}

fn within(value: f64, expected: f64, sigma: f64, k: f64) -> bool {
    (value - expected).abs() <= k * sigma
}

#[test]
fn ideal_link_is_noiseless() {
    let ch = ChannelParams {
        loss_db: 0.0,
        eta_bob: 1.0,
        p_dc: 0.0,
        e_d: 0.0,
    };
    let cfg = SimConfig {
        protocol: SimProtocol::Dtb {
            intensities: vec![PhotonDistribution::single_photon()],
            intensity_weights: vec![1.0],
        },
        ..dtb_config(10_000, 1, ch)
    };
    let r = run_dtb(&cfg).unwrap();
    let t = r.intensities[0];
    assert_eq!(t.detected, t.sent);
    assert_eq!(t.errors, 0);
    assert_eq!(t.gain().value, 1.0);
}

#[test]
fn gains_match_forward_model() {
    let ch = ChannelParams {
        eta_bob: 0.3,
        ..ChannelParams::default().with_loss(3.0)
    };
    let cfg = dtb_config(1_000_000, 5, ch);
    let r = run_dtb(&cfg).unwrap();
    let SimProtocol::Dtb { intensities, .. } = &cfg.protocol else {
        unreachable!()
    };
    for (t, dist) in r.intensities.iter().zip(intensities).skip(1) {
        let truth = gain_and_qber(dist, &ch).unwrap();
        let (q, e) = (t.gain(), t.qber());
        assert!(
            within(q.value, truth.q, q.sigma, 3.0),
            "Q {} vs {} (σ {})",
            q.value,
            truth.q,
            q.sigma
        );
        assert!(
            within(e.value, truth.e, e.sigma, 3.0),
            "E {} vs {} (σ {})",
            e.value,
            truth.e,
            e.sigma
        );
    }
    assert_eq!(r.intensities.iter().map(|t| t.sent).sum::<u64>(), 1_000_000);
}

#[test]
fn error_bars_shrink_as_inverse_sqrt_n() {
    let ch = ChannelParams {
        eta_bob: 0.3,
        ..ChannelParams::default()
    };
    let truth = gain_and_qber(&d(0.296, 0.029), &ch).unwrap();
    let mut sigmas = vec![];
    for n in [100_000u64, 1_000_000] {
        let r = run_dtb(&dtb_config(n, 9, ch)).unwrap();
        let q = r.intensities[2].gain();
        assert!(within(q.value, truth.q, q.sigma, 3.0));
        sigmas.push(q.sigma);
    }
    assert!((sigmas[0] / sigmas[1] - 10f64.sqrt()).abs() < 0.1);
}

#[test]
fn sifting_keeps_half() {
    let ch = ChannelParams {
        eta_bob: 0.5,
        ..ChannelParams::default()
    };
    let r = run_dtb(&dtb_config(400_000, 3, ch)).unwrap();
    let det: u64 = r.intensities.iter().map(|t| t.detected).sum();
    let sifted = r.sifted_key_length();
    let est = Estimate::binomial(sifted, det);
    assert!(
        within(est.value, 0.5, est.sigma, 3.0),
        "sifted fraction {}",
        est.value
    );
}

#[test]
fn same_seed_same_report() {
    let ch = ChannelParams::default();
    let a = run_dtb(&dtb_config(50_000, 42, ch)).unwrap();
    let b = run_dtb(&dtb_config(50_000, 42, ch)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let c = run_dtb(&dtb_config(50_000, 43, ch)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn solve_on_simulated_rates_recovers_y1() {
    let ch = ChannelParams {
        eta_bob: 0.5,
        ..ChannelParams::default()
    };
    let cfg = dtb_config(2_000_000, 17, ch);
    let r = run_dtb(&cfg).unwrap();
    let setting = DtbSetting {
        signal: d(0.296, 0.029),
        decoy1: d(0.096, 0.0017),
    };
    let rates: Vec<_> = r.intensities.iter().map(|t| (t.gain(), t.qber())).collect();
    let solve_y1 = |q: [f64; 3]| {
        let obs = [0, 1, 2].map(|i| ObservedRates {
            q: q[i],
            e: rates[i].1.value,
        });
        solve_dtb(&setting, &obs).unwrap().yields.y[1]
    };
    let q = [rates[0].0.value, rates[1].0.value, rates[2].0.value];
    let y1 = solve_y1(q);
    // Linear in the gains, so the propagated sigma is exact.
    let mut var = 0.0;
    for i in 0..3 {
        let mut up = q;
        up[i] += 1e-6;
        let slope = (solve_y1(up) - y1) / 1e-6;
        var += (slope * rates[i].0.sigma).powi(2);
    }
    let truth = yields(&ch, 1).y[1];
    assert!(
        within(y1, truth, var.sqrt(), 3.0),
        "Y1 {y1} vs {truth} (σ {})",
        var.sqrt()
    );
}

fn hp_config(n: u64, seed: u64, setting: HpSetting, channel: ChannelParams) -> SimConfig {
    SimConfig {
        n_pulses: n,
        seed,
        channel,
        eta_c: 1.0,
        protocol: SimProtocol::Hp { setting },
    }
}

#[test]
fn herald_joint_frequencies_match_transform() {
    // Inflated dark counts make the rare two-photon herald observable.
    let setting = HpSetting::balanced(d(0.458, 0.427), 0.9, 1e-4);
    let n = 10_000_000;
    let r = run_hp(&hp_config(n, 23, setting, ChannelParams::default())).unwrap();
    let h = r.herald.unwrap();
    let p = hp_transform(&setting.source, 0.5, 0.5, 0.9, 1e-4).unwrap();
    for (k, expected) in [(0usize, p.vacuum), (1, p.single), (2, p.double)] {
        let est = Estimate::binomial(h.joint[k], n);
        assert!(
            within(est.value, expected, est.sigma, 3.0),
            "k={k}: {} vs {expected} (σ {})",
            est.value,
            est.sigma
        );
    }
    assert_eq!(h.joint[3], 0);
}

#[test]
fn perfect_herald_blocks_two_photon_pulses() {
    let setting = HpSetting::balanced(d(0.458, 0.427), 1.0, 0.0);
    let r = run_hp(&hp_config(500_000, 2, setting, ChannelParams::default())).unwrap();
    assert_eq!(r.herald.unwrap().joint[2], 0);
}

#[test]
fn heralded_single_rate_is_half_p2_eta_d() {
    let setting = HpSetting::balanced(d(0.3231, 0.1114), 0.9, 2e-7);
    let n = 2_000_000;
    let r = run_hp(&hp_config(n, 4, setting, ChannelParams::default())).unwrap();
    let est = Estimate::binomial(r.herald.unwrap().joint[1], n);
    let expected = 0.5 * 0.1114 * 0.9;
    // The T * p1 * p_dc contribution is far below one standard error.
    assert!(
        within(est.value, expected, est.sigma, 3.0),
        "{} vs {expected}",
        est.value
    );
}

#[test]
fn heralded_gain_and_qber_match_model() {
    let setting = HpSetting::balanced(d(0.458, 0.427), 0.9, 2e-7);
    let ch = ChannelParams {
        eta_bob: 0.5,
        ..ChannelParams::default()
    };
    let r = run_hp(&hp_config(2_000_000, 8, setting, ch)).unwrap();
    let (truth, _) = hp_observed(&setting, &ch).unwrap();
    let t = r.intensities[0];
    let (q, e) = (t.gain(), t.qber());
    assert!(
        within(q.value, truth.q, q.sigma, 3.0),
        "Q {} vs {}",
        q.value,
        truth.q
    );
    assert!(
        within(e.value, truth.e, e.sigma, 3.0),
        "E {} vs {}",
        e.value,
        truth.e
    );
}

#[test]
fn hbt_single_photons_never_coincide() {
    let rep = simulate_hbt(
        &HbtSource::Fock {
            distribution: PhotonDistribution::single_photon(),
        },
        1.0,
        100_000,
        1,
    )
    .unwrap();
    assert_eq!(empirical_g2(&rep).unwrap().0, 0.0);
}

#[test]
fn hbt_poisson_is_one() {
    let rep = simulate_hbt(&HbtSource::Poisson { mu: 0.5 }, 0.5, 2_000_000, 3).unwrap();
    let (g, s) = empirical_g2(&rep).unwrap();
    assert!(within(g, 1.0, s, 3.0), "g2 {g} ± {s}");
}

#[test]
fn hbt_matches_analytic_g2() {
    let dist = d(0.529, 0.112);
    let rep = simulate_hbt(&HbtSource::Fock { distribution: dist }, 0.3, 2_000_000, 5).unwrap();
    let (g, s) = empirical_g2(&rep).unwrap();
    let truth = g2_of(&dist).unwrap();
    assert!(within(g, truth, s, 3.0), "g2 {g} ± {s} vs {truth}");
}

#[test]
fn hbt_vacuum_is_undefined() {
    let rep = simulate_hbt(
        &HbtSource::Fock {
            distribution: PhotonDistribution::vacuum(),
        },
        1.0,
        1000,
        1,
    )
    .unwrap();
    assert!(empirical_g2(&rep).is_err());
}

#[test]
fn config_json_round_trip() {
    let cfg = dtb_config(10, 7, ChannelParams::default());
    let s = serde_json::to_string(&cfg).unwrap();
    assert!(s.contains("\"protocol\":\"dtb\""));
    let back: SimConfig = serde_json::from_str(&s).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn invalid_weights_rejected() {
    let mut cfg = dtb_config(10, 7, ChannelParams::default());
    if let SimProtocol::Dtb {
        intensity_weights, ..
    } = &mut cfg.protocol
    {
        intensity_weights[0] = 0.5;
    }
    assert!(matches!(run_dtb(&cfg), Err(QkdError::Config(_))));
}

#[test]
fn tomography_counts_follow_bases() {
    let ch = ChannelParams {
        eta_bob: 0.5,
        e_d: 0.0,
        p_dc: 0.0,
        loss_db: 0.0,
    };
    let counts =
        simulate_tomography_counts(&PhotonDistribution::single_photon(), &ch, 20_000, 1).unwrap();
    // Matched basis without misalignment: no wrong-detector counts.
    for a in 0..4 {
        assert_eq!(counts[a][a ^ 1], 0);
        assert!(counts[a][a] > 0);
    }
    // Mismatched basis splits evenly.
    let est = Estimate::binomial(counts[0][2], counts[0][2] + counts[0][3]);
    assert!(within(est.value, 0.5, est.sigma, 3.0));
}
