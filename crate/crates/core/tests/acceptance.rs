//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Tolerances are pinned here and never loosened to make a line pass.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qkd_core::analysis::{
    gamma, gamma_map_dtb, gamma_vs_efficiency, hp_threshold, linspace, optimal_bs_transmission,
    wcs_mcl, zero_crossing, EfficiencySweep, Protocol,
};
use qkd_core::channel_model::{gain_and_qber, yields, ChannelParams};
use qkd_core::ingest::{skr_from_experiment, ExperimentStats, UncertaintyModel};
use qkd_core::montecarlo::{
    empirical_g2, replica_maps, run_dtb, simulate_hbt, HbtSource, SimConfig, SimProtocol,
};
use qkd_core::photon_source::{
    extract_distribution_g3, g2_of, g2_upper_bound, hp_transform, PhotonDistribution,
};
use qkd_core::presets::{
    lab_budget, lab_channel, BARE_DECOY, BARE_HERALDED, BARE_SIGNAL, HERALD_ETA_D, HERALD_P_DC,
    SPS1, SPS2,
};
use qkd_core::protocols::{
    binary_entropy, skr_dtb_exact, solve_dtb, DtbSetting, HpSetting, KeyRateParams,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: &str, title: &str, f: impl FnOnce() -> Outcome, failures: &mut Vec<String>) {
    let start = Instant::now();
    let out = f();
    let status = if out.pass { "PASS" } else { "FAIL" };
    println!(
        "{status} [{id}] {title}: {} ({:.2?})",
        out.detail,
        start.elapsed()
    );
    if !out.pass {
        failures.push(id.to_string());
    }
}

fn within_time(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("runtime {t:.2?} < {limit:?}"))
}

fn defaults() -> (ChannelParams, KeyRateParams) {
    (ChannelParams::default(), KeyRateParams::default())
}

fn dtb_superiority() -> Outcome {
    let start = Instant::now();
    let (ch, p) = defaults();
    let w = wcs_mcl(&ch, &p).unwrap();
    let m = Protocol::Dtb { signal: SPS1 }.mcl(&ch, &p).unwrap();
    let g = gamma(m, w);
    let (fast, t) = within_time(start, Duration::from_secs(5));
    Outcome {
        pass: g > 3.0 && fast,
        detail: format!("MCL dtb {m:.4} dB, wcs {w:.4} dB, gain {g:.4} dB (need > 3.0); {t}"),
    }
}

fn hp_superiority() -> Outcome {
    let start = Instant::now();
    let (ch, p) = defaults();
    let w = wcs_mcl(&ch, &p).unwrap();
    let setting = HpSetting::balanced(SPS2, HERALD_ETA_D, HERALD_P_DC);
    let m = Protocol::Hp { setting }.mcl(&ch, &p).unwrap();
    let g = gamma(m, w);
    let (fast, t) = within_time(start, Duration::from_secs(5));
    Outcome {
        pass: (g - 1.0).abs() <= 0.5 && fast,
        detail: format!("MCL hp {m:.4} dB, gain {g:.4} dB (need 1.0 ± 0.5); {t}"),
    }
}

fn dtb_region_line() -> Outcome {
    let start = Instant::now();
    let (ch, p) = defaults();
    let map = gamma_map_dtb(200, &ch, 1.0, &p).unwrap();
    let (fast, t) = within_time(start, Duration::from_secs(300));
    match map.line {
        Some(l) => Outcome {
            pass: (l.intercept - 0.1927).abs() <= 0.01 && (l.slope - 1.125).abs() <= 0.05 && fast,
            detail: format!(
                "contour p1 = {:.4} p2 + {:.5} (need slope 1.125 ± 0.05, intercept 0.1927 ± 0.01); {t}",
                l.slope, l.intercept
            ),
        },
        None => Outcome { pass: false, detail: "no zero-gain contour found".into() },
    }
}

fn hp_thresholds() -> Outcome {
    let (ch, p) = defaults();
    let a = hp_threshold(1.0, HERALD_P_DC, &ch, &p);
    let b = hp_threshold(0.9, HERALD_P_DC, &ch, &p);
    match (a, b) {
        (Ok(a), Ok(b)) => Outcome {
            pass: (a - 0.37).abs() <= 0.02 && (b - 0.41).abs() <= 0.02,
            detail: format!("p2 threshold {a:.4} at eta_d = 1 (need 0.37 ± 0.02), {b:.4} at eta_d = 0.9 (need 0.41 ± 0.02)"),
        },
        (a, b) => Outcome { pass: false, detail: format!("threshold search failed: {a:?}, {b:?}") },
    }
}

fn efficiency_sweep(signal: PhotonDistribution) -> (Option<f64>, Option<f64>) {
    let (ch, p) = defaults();
    let w = wcs_mcl(&ch, &p).unwrap();
    let etas = linspace(0.0, 1.0, 101);
    let pts =
        gamma_vs_efficiency(&EfficiencySweep::DtbCollection { signal }, &etas, &ch, &p).unwrap();
    let at_07 = pts
        .iter()
        .find(|q| (q.eta - 0.7).abs() < 1e-9)
        .and_then(|q| q.gamma_db);
    (zero_crossing(&pts, -w), at_07)
}

fn efficiency_curves() -> Outcome {
    let (zc, g07) = efficiency_sweep(BARE_SIGNAL);
    let pass = zc.is_some_and(|z| (z - 0.30).abs() <= 0.05) && g07.is_some_and(|g| g > 2.0);
    Outcome {
        pass,
        detail: format!("bare signal: zero crossing {zc:.4?} (need 0.30 ± 0.05), gain at 0.7 {g07:.4?} dB (need > 2)"),
    }
}

fn g3_inversion() -> Outcome {
    match extract_distribution_g3(0.57, 0.747, 0.00065) {
        Ok(d) => {
            let ok = (d.p1 - 0.3233).abs() <= 0.0094
                && (d.p2 - 0.1112).abs() <= 0.0207
                && (d.p3 - 1.77e-5).abs() <= 5.2e-7;
            Outcome {
                pass: ok,
                detail: format!(
                    "(p1, p2, p3) = ({:.4}, {:.4}, {:.4e}) vs (0.3233 ± 0.0094, 0.1112 ± 0.0207, 1.77e-5 ± 5.2e-7)",
                    d.p1, d.p2, d.p3
                ),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("inversion failed: {e}"),
        },
    }
}

fn purified_two_photon() -> Outcome {
    let h = hp_transform(&SPS2, 0.5, 0.5, HERALD_ETA_D, HERALD_P_DC).unwrap();
    Outcome {
        pass: (h.double - 2.1e-8).abs() <= 1e-9,
        detail: format!(
            "P2 after purification {:.4e} (need 2.1e-8 ± 1e-9)",
            h.double
        ),
    }
}

fn random_distribution(rng: &mut ChaCha8Rng) -> PhotonDistribution {
    let p1 = rng.random_range(0.01..0.95);
    let p2 = rng.random_range(0.0..(1.0 - p1));
    PhotonDistribution::from_p1_p2(p1, p2).unwrap()
}

fn oracle_equivalence() -> Outcome {
    // Decoy solve inverts the forward model.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 1000 {
        let (sig, dec) = (random_distribution(&mut rng), random_distribution(&mut rng));
        if (sig.p1 * dec.p2 - sig.p2 * dec.p1).abs() < 1e-3 {
            continue;
        }
        let ch = ChannelParams {
            loss_db: rng.random_range(0.0..40.0),
            eta_bob: rng.random_range(0.01..1.0),
            p_dc: rng.random_range(0.0..1e-5),
            e_d: rng.random_range(0.0..0.1),
        };
        let obs = [
            gain_and_qber(&PhotonDistribution::vacuum(), &ch).unwrap(),
            gain_and_qber(&dec, &ch).unwrap(),
            gain_and_qber(&sig, &ch).unwrap(),
        ];
        let sol = solve_dtb(
            &DtbSetting {
                signal: sig,
                decoy1: dec,
            },
            &obs,
        )
        .unwrap();
        let truth = yields(&ch, 2);
        for n in 0..=2 {
            worst = worst.max((sol.yields.y[n] - truth.y[n]).abs());
            worst = worst.max((sol.yields.y[n] * sol.yields.e[n] - truth.y[n] * truth.e[n]).abs());
        }
        cases += 1;
    }
    let solve_ok = worst < 1e-9;

    // Monte Carlo gains and error rates against the analytic forward model.
    let start = Instant::now();
    let ch = ChannelParams::default();
    let intensities = vec![PhotonDistribution::vacuum(), BARE_DECOY, BARE_SIGNAL];
    let cfg = SimConfig {
        n_pulses: 1_000_000,
        seed: 2024,
        channel: ch,
        eta_c: 1.0,
        protocol: SimProtocol::Dtb {
            intensities: intensities.clone(),
            intensity_weights: vec![0.1, 0.3, 0.6],
        },
    };
    let report = run_dtb(&cfg).unwrap();
    let mut worst_z = 0.0f64;
    for (t, d) in report.intensities.iter().zip(&intensities) {
        let truth = gain_and_qber(d, &ch).unwrap();
        // Sigma from the model proportion: the vacuum setting may see no clicks at all.
        let q_sigma = (truth.q * (1.0 - truth.q) / t.sent as f64).sqrt();
        worst_z = worst_z.max((t.gain().value - truth.q).abs() / q_sigma);
        if t.sifted > 0 {
            let e_sigma = (truth.e * (1.0 - truth.e) / t.sifted as f64).sqrt();
            worst_z = worst_z.max((t.qber().value - truth.e).abs() / e_sigma);
        }
    }
    let (fast, t) = within_time(start, Duration::from_secs(60));
    let mc_ok = worst_z < 3.0 && fast;

    // Photon-counting HBT on a Poisson stream.
    let rep = simulate_hbt(&HbtSource::Poisson { mu: 0.5 }, 0.5, 2_000_000, 8).unwrap();
    let (g, s) = empirical_g2(&rep).unwrap();
    let hbt_ok = (g - 1.0).abs() <= 3.0 * s;

    Outcome {
        pass: solve_ok && mc_ok && hbt_ok,
        detail: format!(
            "solve residual {worst:.2e} over {cases} cases (need < 1e-9); MC worst |z| {worst_z:.2} at 1e6 pulses (need < 3, {t}); Poisson g2 {g:.4} ± {s:.4}"
        ),
    }
}

fn closed_forms() -> Outcome {
    let (ch, p) = defaults();
    let fock2 = PhotonDistribution::new(0.0, 0.0, 1.0, 0.0).unwrap();
    let g2 = g2_of(&fock2).unwrap();
    let bound = g2_upper_bound(0.0).unwrap();
    let h = binary_entropy(0.5).unwrap();
    let ts: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9]
        .iter()
        .map(|&p2| optimal_bs_transmission(p2, 0.0, HERALD_ETA_D, &ch, &p).unwrap())
        .collect();
    let t_ok = ts.iter().all(|&t| t == 0.5);
    Outcome {
        pass: g2 == 0.5 && bound == 0.5 && h == 1.0 && t_ok,
        detail: format!("g2(|2>) = {g2}, g2 bound at p0 = 0: {bound}, H2(0.5) = {h}, optimal T at zero herald darks {ts:.4?} (need all 0.5)"),
    }
}

fn pipeline_replica() -> Outcome {
    let ch = lab_channel();
    let budget = lab_budget();
    let params = KeyRateParams::default();
    let stats = ExperimentStats {
        decoy: BARE_DECOY,
        signal: BARE_SIGNAL,
        hp: Some(HpSetting::balanced(
            BARE_HERALDED,
            HERALD_ETA_D,
            HERALD_P_DC,
        )),
    };
    let maps = replica_maps(
        &BARE_DECOY,
        &BARE_SIGNAL,
        Some(&BARE_HERALDED),
        &ch,
        &budget,
        &[0.0, 1.0, 2.0],
        10.0,
        10,
    )
    .unwrap();
    let r =
        skr_from_experiment(&maps, &stats, &budget, &params, UncertaintyModel::Poisson).unwrap();
    let mut worst_z = 0.0f64;
    for pt in r.points.iter().filter(|pt| pt.protocol == "dtb") {
        let analytic = skr_dtb_exact(&BARE_SIGNAL, &ch.with_loss(pt.loss_db), &params)
            .unwrap()
            .raw;
        worst_z = worst_z.max((pt.skr - analytic).abs() / pt.skr_sigma);
    }
    let gain = r.gain_dtb_db();
    Outcome {
        pass: worst_z < 3.0 && gain.is_some_and(|g| (g - 2.0).abs() <= 0.5),
        detail: format!("DTB points worst |z| {worst_z:.2} (need < 3); extrapolated MCL gain {gain:.4?} dB (need 2 ± 0.5)"),
    }
}

fn main() -> ExitCode {
    let mut failures = Vec::new();
    println!("acceptance suite");
    run(
        "1",
        "DTB gain over WCS with SPS1",
        dtb_superiority,
        &mut failures,
    );
    run(
        "2",
        "HP gain over WCS with SPS2",
        hp_superiority,
        &mut failures,
    );
    run(
        "3",
        "DTB zero-gain line on a 200x200 map",
        dtb_region_line,
        &mut failures,
    );
    run("4", "HP p2 thresholds", hp_thresholds, &mut failures);
    run(
        "5",
        "collection-efficiency curve, bare emitter",
        efficiency_curves,
        &mut failures,
    );
    run("6", "three-photon inversion", g3_inversion, &mut failures);
    run(
        "7",
        "purified two-photon probability",
        purified_two_photon,
        &mut failures,
    );
    run("8", "oracle equivalence", oracle_equivalence, &mut failures);
    run("9", "closed forms", closed_forms, &mut failures);
    run(
        "10",
        "lab-pipeline replica",
        pipeline_replica,
        &mut failures,
    );

    // Not a criterion: the same sweep for the collected SPS1 source.
    let (zc, g07) = efficiency_sweep(SPS1);
    println!(
        "INFO collection-efficiency curve, SPS1: zero crossing {zc:.4?}, gain at 0.7 {g07:.4?} dB"
    );

    if failures.is_empty() {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!(
            "{} criteria failed: {}",
            failures.len(),
            failures.join(", ")
        );
        ExitCode::FAILURE
    }
}
