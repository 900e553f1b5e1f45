//! `qkd`: key-rate sweeps, Monte Carlo runs and lab-data processing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod inputs;
mod output;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qkd_core::analysis::{self, EfficiencySweep, Protocol};
use qkd_core::channel_model::ChannelParams;
use qkd_core::ingest::{self, AliceBudget, ExperimentStats, TomographyMap, UncertaintyModel};
use qkd_core::montecarlo::{self, SimConfig, SimProtocol};
use qkd_core::photon_source::{self, apply_collection, PhotonDistribution};
use qkd_core::presets;
use qkd_core::protocols::{HpSetting, KeyRateParams};

use output::{num, opt, opt_footer, Csv, Metadata};

#[derive(Parser)]
#[command(
    name = "qkd",
    version,
    about = "Secure-key-rate sweeps and simulations for BB84 with sub-Poissonian sources"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Key rate against channel loss for one protocol.
    SkrCurve(SkrCurveArgs),
    /// DTB gain over the WCS baseline across the (p1, p2) simplex.
    GammaMap(GammaMapArgs),
    /// Best purification beam-splitter transmission against p2.
    OptimalT(OptimalTArgs),
    /// Gain over the WCS baseline against a collection or herald efficiency.
    GammaVsEta(GammaVsEtaArgs),
    /// Pulse-level Monte Carlo run of the DTB or HP protocol.
    Simulate(SimulateArgs),
    /// Key rates and MCL gains from tomography count maps.
    Ingest(IngestArgs),
    /// Write synthetic tomography maps as a lab run would record them.
    SynthMaps(SynthMapsArgs),
    /// Photon-number distribution from measured correlation functions.
    Invert(InvertArgs),
}

#[derive(Args)]
struct Common {
    /// Channel JSON; defaults to channel.json under the fixture root.
    #[arg(long)]
    channel: Option<PathBuf>,
    /// Error-correction inefficiency.
    #[arg(long, default_value_t = 1.22)]
    f_ec: f64,
    /// Basis-sifting factor.
    #[arg(long, default_value_t = 0.5)]
    q_sifting: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn params(&self) -> Result<KeyRateParams> {
        let p = KeyRateParams {
            q_sifting: self.q_sifting,
            f_ec: self.f_ec,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct HpStage {
    /// Purification beam-splitter transmission toward Bob.
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    /// Herald detector efficiency.
    #[arg(long, default_value_t = presets::HERALD_ETA_D)]
    eta_d: f64,
    /// Herald detector dark-count probability.
    #[arg(long, default_value_t = presets::HERALD_P_DC)]
    p_dc_alice: f64,
}

impl HpStage {
    fn setting(&self, source: PhotonDistribution) -> HpSetting {
        HpSetting::balanced(source, self.eta_d, self.p_dc_alice).with_t(self.t)
    }
}

#[derive(Args)]
struct SkrCurveArgs {
    /// dtb, hp, wcs, perfect-sps, or a protocol JSON file.
    #[arg(long)]
    protocol: String,
    /// Source JSON file or name; defaults to sps1 for dtb and sps2 for hp.
    #[arg(long)]
    source: Option<String>,
    /// Collection efficiency applied to the source.
    #[arg(long, default_value_t = 1.0)]
    eta_c: f64,
    #[arg(long, default_value_t = 0.0)]
    loss_min: f64,
    #[arg(long, default_value_t = 60.0)]
    loss_max: f64,
    #[arg(long, default_value_t = 0.5)]
    loss_step: f64,
    #[command(flatten)]
    hp: HpStage,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GammaMapArgs {
    /// Points per simplex axis.
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    eta_c: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct OptimalTArgs {
    /// Herald detector dark-count probability.
    #[arg(long, default_value_t = presets::P_DC_2_MHZ)]
    p_dc: f64,
    #[arg(long, default_value_t = presets::HERALD_ETA_D)]
    eta_d: f64,
    /// Number of p2 samples spanning [p2-min, 1].
    #[arg(long, default_value_t = 20)]
    grid: usize,
    #[arg(long, default_value_t = 0.05)]
    p2_min: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Collection efficiency of the DTB signal.
    DtbCollection,
    /// Collection efficiency ahead of the purification stage.
    HpCollection,
    /// Herald detector efficiency.
    HpDetector,
}

#[derive(Args)]
struct GammaVsEtaArgs {
    #[arg(long, value_enum, default_value_t = SweepKind::DtbCollection)]
    sweep: SweepKind,
    /// Source JSON file or name; defaults to bare-signal for DTB and sps2 for HP.
    #[arg(long)]
    source: Option<String>,
    /// Number of efficiency samples spanning [0, 1].
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[command(flatten)]
    hp: HpStage,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Dtb,
    Hp,
}

#[derive(Args)]
struct SimulateArgs {
    /// Full simulation config JSON; replaces every other flag except --seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SimKind::Dtb)]
    protocol: SimKind,
    /// RNG seed; defaults to 1, or to the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1_000_000)]
    pulses: u64,
    /// Source for HP, or the signal for DTB (decoy and vacuum stay fixed).
    #[arg(long)]
    source: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    loss_db: f64,
    #[command(flatten)]
    hp: HpStage,
    #[arg(long)]
    channel: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Tomography CSV files, each with a JSON sidecar of the same stem.
    #[arg(long, num_args = 1.., required = true)]
    maps: Vec<PathBuf>,
    /// Emitter statistics per intensity; defaults to the bare-dot presets
    /// with the purification stage on the high-power setting.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Alice's repetition rate and optical budget.
    #[arg(long)]
    budget: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Uncertainty::Poisson)]
    uncertainty: Uncertainty,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Uncertainty {
    Poisson,
    RowSpread,
}

#[derive(Args)]
struct SynthMapsArgs {
    /// Directory receiving <intensity>_nd<loss>.csv and .json files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Filter losses in dB.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    nd: Vec<f64>,
    /// Exposure per map in seconds.
    #[arg(long, default_value_t = 10.0)]
    exposure: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Skip the high-power heralded setting.
    #[arg(long)]
    no_heralded: bool,
    #[arg(long)]
    channel: Option<PathBuf>,
}

#[derive(Args)]
struct InvertArgs {
    /// Vacuum probability.
    #[arg(long)]
    p0: f64,
    #[arg(long)]
    g2: f64,
    /// Third-order correlation; enables the three-photon solution.
    #[arg(long)]
    g3: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SkrCurve(a) => skr_curve(a),
        Command::GammaMap(a) => gamma_map(a),
        Command::OptimalT(a) => optimal_t(a),
        Command::GammaVsEta(a) => gamma_vs_eta(a),
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest_maps(a),
        Command::SynthMaps(a) => synth_maps(a),
        Command::Invert(a) => invert(a),
    }
}

#[derive(Serialize)]
struct SweepConfig<'a, P: Serialize> {
    channel: ChannelParams,
    params: KeyRateParams,
    #[serde(flatten)]
    sweep: &'a P,
}

fn resolve_protocol(a: &SkrCurveArgs) -> Result<Protocol> {
    let source = |default: &str| -> Result<PhotonDistribution> {
        let d = inputs::source(a.source.as_deref().unwrap_or(default))?;
        Ok(apply_collection(&d, a.eta_c)?)
    };
    Ok(match a.protocol.as_str() {
        "dtb" => Protocol::Dtb {
            signal: source("sps1")?,
        },
        "hp" => Protocol::Hp {
            setting: a.hp.setting(source("sps2")?),
        },
        "wcs" => Protocol::Wcs,
        "perfect-sps" => Protocol::PerfectSps,
        other if other.ends_with(".json") => inputs::read_json(Path::new(other))?,
        other => {
            bail!("unknown protocol '{other}': expected dtb, hp, wcs, perfect-sps or a JSON file")
        }
    })
}

fn skr_curve(a: SkrCurveArgs) -> Result<()> {
    let channel = inputs::channel(a.common.channel.as_deref())?;
    let params = a.common.params()?;
    let protocol = resolve_protocol(&a)?;
    if !(a.loss_step > 0.0) || a.loss_max < a.loss_min || a.loss_min < 0.0 {
        bail!("loss range needs 0 <= loss-min <= loss-max and loss-step > 0");
    }
    let n = ((a.loss_max - a.loss_min) / a.loss_step + 1e-9).floor() as usize + 1;
    let losses: Vec<f64> = (0..n)
        .map(|k| a.loss_min + k as f64 * a.loss_step)
        .collect();

    #[derive(Serialize)]
    struct Sweep {
        #[serde(flatten)]
        protocol: Protocol,
        loss_min: f64,
        loss_max: f64,
        loss_step: f64,
    }
    let sweep = Sweep {
        protocol,
        loss_min: a.loss_min,
        loss_max: a.loss_max,
        loss_step: a.loss_step,
    };
    let config = SweepConfig {
        channel,
        params,
        sweep: &sweep,
    };
    let meta = Metadata::new("skr-curve", &config)?;
    let curve = analysis::skr_curve(&protocol, &channel, &params, &losses)?;
    let mut csv = Csv::new(&meta, &config, &["loss_db", "skr"])?;
    for (l, r) in &curve.points {
        csv.row(&[num(*l), num(*r)]);
    }
    csv.footer("protocol", protocol.name());
    csv.footer("mcl_db", opt_footer(curve.mcl_db));
    output::emit(&csv.finish(), a.common.out.as_deref())
}

fn gamma_map(a: GammaMapArgs) -> Result<()> {
    let channel = inputs::channel(a.common.channel.as_deref())?;
    let params = a.common.params()?;

    #[derive(Serialize)]
    struct Sweep {
        grid: usize,
        eta_c: f64,
    }
    let sweep = Sweep {
        grid: a.grid,
        eta_c: a.eta_c,
    };
    let config = SweepConfig {
        channel,
        params,
        sweep: &sweep,
    };
    let meta = Metadata::new("gamma-map", &config)?;
    let map = analysis::gamma_map_dtb(a.grid, &channel, a.eta_c, &params)?;
    let mut csv = Csv::new(&meta, &config, &["p1", "p2", "gamma_db"])?;
    for j in 0..map.n {
        for i in 0..map.n {
            if map.is_physical(i, j) {
                csv.row(&[num(map.axis(i)), num(map.axis(j)), opt(map.at(i, j))]);
            }
        }
    }
    csv.footer("mcl_wcs_db", num(map.mcl_wcs_db));
    csv.footer("contour_slope", opt_footer(map.line.map(|l| l.slope)));
    csv.footer(
        "contour_intercept",
        opt_footer(map.line.map(|l| l.intercept)),
    );
    output::emit(&csv.finish(), a.common.out.as_deref())
}

fn optimal_t(a: OptimalTArgs) -> Result<()> {
    let channel = inputs::channel(a.common.channel.as_deref())?;
    let params = a.common.params()?;
    if !(a.p2_min > 0.0 && a.p2_min <= 1.0) || a.grid == 0 {
        bail!("p2-min must lie in (0, 1] and grid must be positive");
    }

    #[derive(Serialize)]
    struct Sweep {
        p_dc: f64,
        eta_d: f64,
        grid: usize,
        p2_min: f64,
    }
    let sweep = Sweep {
        p_dc: a.p_dc,
        eta_d: a.eta_d,
        grid: a.grid,
        p2_min: a.p2_min,
    };
    let config = SweepConfig {
        channel,
        params,
        sweep: &sweep,
    };
    let meta = Metadata::new("optimal-t", &config)?;
    let mut csv = Csv::new(&meta, &config, &["p2", "t_opt"])?;
    for p2 in analysis::linspace(a.p2_min, 1.0, a.grid) {
        let t = analysis::optimal_bs_transmission(p2, a.p_dc, a.eta_d, &channel, &params)?;
        csv.row(&[num(p2), num(t)]);
    }
    output::emit(&csv.finish(), a.common.out.as_deref())
}

fn gamma_vs_eta(a: GammaVsEtaArgs) -> Result<()> {
    let channel = inputs::channel(a.common.channel.as_deref())?;
    let params = a.common.params()?;
    let sweep = match a.sweep {
        SweepKind::DtbCollection => EfficiencySweep::DtbCollection {
            signal: inputs::source(a.source.as_deref().unwrap_or("bare-signal"))?,
        },
        SweepKind::HpCollection => EfficiencySweep::HpCollection {
            setting: a
                .hp
                .setting(inputs::source(a.source.as_deref().unwrap_or("sps2"))?),
        },
        SweepKind::HpDetector => EfficiencySweep::HpDetector {
            setting: a
                .hp
                .setting(inputs::source(a.source.as_deref().unwrap_or("sps2"))?),
        },
    };

    #[derive(Serialize)]
    struct Sweep {
        #[serde(flatten)]
        sweep: EfficiencySweep,
        grid: usize,
    }
    let s = Sweep {
        sweep,
        grid: a.grid,
    };
    let config = SweepConfig {
        channel,
        params,
        sweep: &s,
    };
    let meta = Metadata::new("gamma-vs-eta", &config)?;
    let etas = analysis::linspace(0.0, 1.0, a.grid);
    let points = analysis::gamma_vs_efficiency(&sweep, &etas, &channel, &params)?;
    let mut csv = Csv::new(&meta, &config, &["eta", "gamma_db"])?;
    for p in &points {
        csv.row(&[num(p.eta), opt(p.gamma_db)]);
    }
    let floor = -analysis::wcs_mcl(&channel, &params)?;
    csv.footer(
        "zero_crossing",
        opt_footer(analysis::zero_crossing(&points, floor)),
    );
    output::emit(&csv.finish(), a.common.out.as_deref())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut config: SimConfig = match &a.config {
        Some(path) => inputs::read_json(path)?,
        None => {
            let channel = inputs::channel(a.channel.as_deref())?.with_loss(a.loss_db);
            let protocol = match a.protocol {
                SimKind::Dtb => SimProtocol::Dtb {
                    intensities: vec![
                        PhotonDistribution::vacuum(),
                        presets::BARE_DECOY,
                        inputs::source(a.source.as_deref().unwrap_or("bare-signal"))?,
                    ],
                    intensity_weights: vec![0.1, 0.2, 0.7],
                },
                SimKind::Hp => SimProtocol::Hp {
                    setting: a
                        .hp
                        .setting(inputs::source(a.source.as_deref().unwrap_or("sps2"))?),
                },
            };
            SimConfig {
                n_pulses: a.pulses,
                seed: a.seed.unwrap_or(1),
                channel,
                eta_c: 1.0,
                protocol,
            }
        }
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate().context("simulation config")?;
    let meta = Metadata::new("simulate", &config)?;
    let report = match config.protocol {
        SimProtocol::Dtb { .. } => montecarlo::run_dtb(&config)?,
        SimProtocol::Hp { .. } => montecarlo::run_hp(&config)?,
    };

    #[derive(Serialize)]
    struct Out {
        report: montecarlo::SimReport,
        estimates: Vec<Estimates>,
        sifted_key_length: u64,
    }
    #[derive(Serialize)]
    struct Estimates {
        gain: montecarlo::Estimate,
        qber: montecarlo::Estimate,
    }
    let estimates = report
        .intensities
        .iter()
        .map(|t| Estimates {
            gain: t.gain(),
            qber: t.qber(),
        })
        .collect();
    let out = Out {
        sifted_key_length: report.sifted_key_length(),
        report,
        estimates,
    };
    output::emit(&output::json(&meta, &config, &out)?, a.out.as_deref())
}

fn default_stats() -> ExperimentStats {
    ExperimentStats {
        decoy: presets::BARE_DECOY,
        signal: presets::BARE_SIGNAL,
        hp: Some(HpSetting::balanced(
            presets::BARE_HERALDED,
            presets::HERALD_ETA_D,
            presets::HERALD_P_DC,
        )),
    }
}

fn ingest_maps(a: IngestArgs) -> Result<()> {
    let params = a.common.params()?;
    let stats: ExperimentStats = match &a.stats {
        Some(p) => inputs::read_json(p)?,
        None => default_stats(),
    };
    let budget: AliceBudget = match &a.budget {
        Some(p) => inputs::read_json(p)?,
        None => presets::lab_budget(),
    };
    let model = match a.uncertainty {
        Uncertainty::Poisson => UncertaintyModel::Poisson,
        Uncertainty::RowSpread => UncertaintyModel::RowSpread,
    };
    let maps = a
        .maps
        .iter()
        .map(|p| TomographyMap::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;

    #[derive(Serialize)]
    struct Config<'a> {
        stats: ExperimentStats,
        budget: AliceBudget,
        params: KeyRateParams,
        uncertainty: UncertaintyModel,
        maps: &'a [TomographyMap],
    }
    let config = Config {
        stats,
        budget,
        params,
        uncertainty: model,
        maps: &maps,
    };
    let meta = Metadata::new("ingest", &config)?;
    let result = ingest::skr_from_experiment(&maps, &stats, &budget, &params, model)?;

    #[derive(Serialize)]
    struct Out {
        result: ingest::ExperimentResult,
        gain_dtb_db: Option<f64>,
        gain_hp_db: Option<f64>,
    }
    let out = Out {
        gain_dtb_db: result.gain_dtb_db(),
        gain_hp_db: result.gain_hp_db(),
        result,
    };
    // The config echo would repeat every count; the hash identifies it.
    output::emit(
        &output::json(&meta, &serde_json::Value::Null, &out)?,
        a.common.out.as_deref(),
    )
}

fn synth_maps(a: SynthMapsArgs) -> Result<()> {
    let channel = match &a.channel {
        Some(p) => inputs::channel(Some(p))?,
        None => presets::lab_channel(),
    };
    let heralded = (!a.no_heralded).then_some(presets::BARE_HERALDED);
    let maps = montecarlo::replica_maps(
        &presets::BARE_DECOY,
        &presets::BARE_SIGNAL,
        heralded.as_ref(),
        &channel,
        &presets::lab_budget(),
        &a.nd,
        a.exposure,
        a.seed,
    )?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    for map in &maps {
        let stem =
            format!("{:?}_nd{}", map.meta.intensity, num(map.meta.nd_filter_db)).to_lowercase();
        let csv_path = a.out_dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, map.to_csv_string())?;
        std::fs::write(
            csv_path.with_extension("json"),
            serde_json::to_string_pretty(&map.meta)? + "\n",
        )?;
        println!("{}", csv_path.display());
    }
    Ok(())
}

fn invert(a: InvertArgs) -> Result<()> {
    let d = match a.g3 {
        Some(g3) => photon_source::extract_distribution_g3(a.p0, a.g2, g3)?,
        None => photon_source::extract_distribution_g2(a.p0, a.g2)?,
    };

    #[derive(Serialize)]
    struct Config {
        p0: f64,
        g2: f64,
        g3: Option<f64>,
    }
    let config = Config {
        p0: a.p0,
        g2: a.g2,
        g3: a.g3,
    };
    let meta = Metadata::new("invert", &config)?;

    #[derive(Serialize)]
    struct Out {
        distribution: PhotonDistribution,
    }
    output::emit(
        &output::json(&meta, &config, &Out { distribution: d })?,
        a.out.as_deref(),
    )
}
