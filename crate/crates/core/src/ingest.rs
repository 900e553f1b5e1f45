//! Lab-data pipeline: polarization tomography counts to gains and QBERs,
//! then through the decoy solve to key-rate points.
//!
//! A tomography map holds counts for each (Alice state, Bob detector) pair.
//! Each Alice row is measured with Bob set to each basis in turn, one
//! exposure per setting, so the matched-basis cells of a row come from one
//! exposure and the four rows together from four exposures.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{wcs_mcl, Protocol};
use crate::channel_model::{yield_and_error, ChannelParams, ObservedRates};
use crate::error::{QkdError, Result};
use crate::numeric::bisect;
use crate::photon_source::PhotonDistribution;
use crate::protocols::{skr_dtb, skr_hp, solve_dtb, DtbSetting, HpSetting, KeyRateParams};

/// Vacuum gain and error used when no vacuum-setting map is supplied.
pub const FALLBACK_VACUUM: ObservedRates = ObservedRates { q: 1.7e-6, e: 0.5 };

/// Polarization states, in map order.
pub const STATES: [&str; 4] = ["H", "V", "D", "A"];

fn state_index(s: &str) -> Result<usize> {
    STATES
        .iter()
        .position(|&x| x.eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| QkdError::Parse(format!("unknown polarization state {s:?}")))
}

/// The other detector of the same basis.
fn orthogonal(i: usize) -> usize {
    i ^ 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intensity {
    S0,
    S1,
    S2,
    S3,
}

/// Sidecar metadata for one tomography map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub exposure_s: f64,
    pub intensity: Intensity,
    #[serde(default)]
    pub nd_filter_db: f64,
    /// Per-detector counts with Alice blocked, to subtract from every row.
    #[serde(default)]
    pub background: Option<[u64; 4]>,
    /// Exposure of the background measurement; must equal `exposure_s`.
    #[serde(default)]
    pub background_exposure_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyMap {
    /// `counts[alice][bob]` in H, V, D, A order.
    pub counts: [[u64; 4]; 4],
    #[serde(flatten)]
    pub meta: MapMetadata,
}

#[derive(Debug, Deserialize)]
struct CountRow {
    alice_state: String,
    bob_detector: String,
    counts: u64,
}

impl TomographyMap {
    /// Parses a `alice_state,bob_detector,counts` CSV; all 16 cells must
    /// appear exactly once.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, meta: MapMetadata) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut counts = [[0u64; 4]; 4];
        let mut seen = [[false; 4]; 4];
        for row in rdr.deserialize::<CountRow>() {
            let row = row?;
            let (a, b) = (
                state_index(&row.alice_state)?,
                state_index(&row.bob_detector)?,
            );
            if seen[a][b] {
                return Err(QkdError::Parse(format!(
                    "duplicate cell ({}, {})",
                    STATES[a], STATES[b]
                )));
            }
            seen[a][b] = true;
            counts[a][b] = row.counts;
        }
        if seen.iter().flatten().any(|&s| !s) {
            return Err(QkdError::Parse("tomography map is missing cells".into()));
        }
        let map = Self { counts, meta };
        map.validate()?;
        Ok(map)
    }

    /// Reads `<stem>.csv` and its `<stem>.json` sidecar.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let sidecar = csv_path.with_extension("json");
        let meta: MapMetadata = serde_json::from_reader(
            std::fs::File::open(&sidecar)
                .map_err(|e| QkdError::Io(format!("{}: {e}", sidecar.display())))?,
        )?;
        let file = std::fs::File::open(csv_path)
            .map_err(|e| QkdError::Io(format!("{}: {e}", csv_path.display())))?;
        Self::from_csv_reader(file, meta)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("alice_state,bob_detector,counts\n");
        for (a, row) in self.counts.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", STATES[a], STATES[b], c));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.meta.exposure_s > 0.0) || !self.meta.exposure_s.is_finite() {
            return Err(QkdError::InconsistentData(format!(
                "exposure {} must be positive",
                self.meta.exposure_s
            )));
        }
        if self.meta.background.is_some() {
            match self.meta.background_exposure_s {
                Some(e) if (e - self.meta.exposure_s).abs() > 1e-9 * self.meta.exposure_s => {
                    return Err(QkdError::InconsistentData(format!(
                        "background exposure {e} s differs from map exposure {} s",
                        self.meta.exposure_s
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Alice's pulse budget: repetition rate and the transmissions between the
/// emitter and the channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliceBudget {
    pub rep_rate_n: f64,
    pub eta_a: f64,
    pub eta_c_na: f64,
}

impl Default for AliceBudget {
    fn default() -> Self {
        Self {
            rep_rate_n: 2e6,
            eta_a: 0.195,
            eta_c_na: 0.1418,
        }
    }
}

impl AliceBudget {
    pub fn sent_per_second(&self) -> f64 {
        self.rep_rate_n * self.eta_a * self.eta_c_na
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate_n > 0.0) {
            return Err(QkdError::Config("rep_rate_n must be positive".into()));
        }
        for (name, v) in [("eta_a", self.eta_a), ("eta_c_na", self.eta_c_na)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(QkdError::Config(format!("{name} = {v} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// How to attach error bars to gains and error rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyModel {
    /// Poisson counting statistics per cell, propagated to first order.
    #[default]
    Poisson,
    /// Spread of the four per-row estimates around their mean.
    RowSpread,
}

/// Gain and QBER of one map with their uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRates {
    pub intensity: Intensity,
    pub loss_db: f64,
    pub q: f64,
    pub q_sigma: f64,
    pub e: f64,
    pub e_sigma: f64,
}

impl MeasuredRates {
    pub fn observed(&self) -> ObservedRates {
        ObservedRates {
            q: self.q,
            e: self.e,
        }
    }
}

/// Detected and wrong-detector counts of one Alice row in its own basis,
/// background subtracted, with the subtracted background's variance.
fn row_counts(map: &TomographyMap, a: usize) -> (f64, f64, f64, f64) {
    let right = a;
    let wrong = orthogonal(a);
    let bg = map.meta.background.unwrap_or([0; 4]);
    let c = map.counts[a][right] as f64 - bg[right] as f64;
    let w = map.counts[a][wrong] as f64 - bg[wrong] as f64;
    // Variance of each background-subtracted cell: raw counts plus background.
    let var_c = map.counts[a][right] as f64 + bg[right] as f64;
    let var_w = map.counts[a][wrong] as f64 + bg[wrong] as f64;
    (c.max(0.0), w.max(0.0), var_c, var_w)
}

pub fn gains_and_errors(
    map: &TomographyMap,
    budget: &AliceBudget,
    model: UncertaintyModel,
) -> Result<MeasuredRates> {
    map.validate()?;
    budget.validate()?;
    let sent_per_row = budget.sent_per_second() * map.meta.exposure_s;
    let rows: Vec<_> = (0..4).map(|a| row_counts(map, a)).collect();
    let (mut c, mut w, mut var_c, mut var_w) = (0.0, 0.0, 0.0, 0.0);
    for &(rc, rw, vc, vw) in &rows {
        c += rc;
        w += rw;
        var_c += vc;
        var_w += vw;
    }
    let detected = c + w;
    if detected <= 0.0 {
        return Err(QkdError::Undefined(format!(
            "no detections in the {:?} map at {} dB; QBER undefined",
            map.meta.intensity, map.meta.nd_filter_db
        )));
    }
    let sent = 4.0 * sent_per_row;
    let q = detected / sent;
    let e = w / detected;
    let (q_sigma, e_sigma) = match model {
        UncertaintyModel::Poisson => {
            let q_sigma = (var_c + var_w).sqrt() / sent;
            // dE/dW = C / D^2, dE/dC = -W / D^2.
            let e_sigma = ((c * c * var_w + w * w * var_c).sqrt()) / (detected * detected);
            (q_sigma, e_sigma)
        }
        UncertaintyModel::RowSpread => {
            let qs: Vec<f64> = rows.iter().map(|r| (r.0 + r.1) / sent_per_row).collect();
            let es: Vec<f64> = rows
                .iter()
                .map(|r| {
                    if r.0 + r.1 > 0.0 {
                        r.1 / (r.0 + r.1)
                    } else {
                        0.5
                    }
                })
                .collect();
            (std_error(&qs), std_error(&es))
        }
    };
    Ok(MeasuredRates {
        intensity: map.meta.intensity,
        loss_db: map.meta.nd_filter_db,
        q,
        q_sigma,
        e,
        e_sigma,
    })
}

fn std_error(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Emitter statistics at each intensity, plus the purification stage if the
/// heralded protocol should be evaluated too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStats {
    pub decoy: PhotonDistribution,
    pub signal: PhotonDistribution,
    #[serde(default)]
    pub hp: Option<HpSetting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkrPoint {
    pub protocol: String,
    pub loss_db: f64,
    pub skr: f64,
    pub skr_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rates: Vec<MeasuredRates>,
    pub points: Vec<SkrPoint>,
    /// Channel inferred from the solved yields, referred to 0 dB filter loss.
    pub fitted_channel: ChannelParams,
    pub mcl_wcs_db: f64,
    pub mcl_dtb_db: Option<f64>,
    pub mcl_hp_db: Option<f64>,
}

impl ExperimentResult {
    pub fn gain_dtb_db(&self) -> Option<f64> {
        self.mcl_dtb_db.map(|m| m - self.mcl_wcs_db)
    }

    pub fn gain_hp_db(&self) -> Option<f64> {
        self.mcl_hp_db.map(|m| m - self.mcl_wcs_db)
    }
}

/// Filter settings are grouped at this resolution in dB.
const ND_KEY_SCALE: f64 = 1e6;

fn nd_key(db: f64) -> i64 {
    (db * ND_KEY_SCALE).round() as i64
}

/// Single-photon channel parameters implied by a yield pair: dark-count
/// probability from `Y0`, transmittance from `Y1`, misalignment from `e1`.
fn channel_from_yields(y0: f64, y1: f64, e1: f64) -> Option<(f64, f64, f64)> {
    let p_dc = y0.clamp(0.0, 1.0 - 1e-12);
    let eta = (y1 - p_dc) / (1.0 - p_dc);
    if !(eta > 0.0) {
        return None;
    }
    let e_d = ((e1 * y1 - 0.5 * p_dc) / eta).clamp(0.0, 0.5);
    Some((eta.min(1.0), p_dc, e_d))
}

/// Channel transmittance and misalignment that reproduce `rates` for a
/// known distribution, given the vacuum yield.
pub fn channel_from_rates(
    d: &PhotonDistribution,
    rates: &ObservedRates,
    p_dc: f64,
) -> Result<ChannelParams> {
    let w = d.two_photon_weights()?;
    let q_of = |eta: f64| -> f64 {
        (0..3)
            .map(|n| w[n] * yield_and_error(eta, p_dc, 0.0, n as u32).0)
            .sum()
    };
    let eta = bisect(|eta| q_of(eta) - rates.q, 0.0, 1.0, 1e-15).ok_or_else(|| {
        QkdError::InconsistentData(format!(
            "gain {} not reachable by any transmittance",
            rates.q
        ))
    })?;
    // E Q = e_d sum w_n eta_n + p_dc / 2 over all photon numbers.
    let eta_sum: f64 = (1..3)
        .map(|n| w[n] * crate::channel_model::transmittance_n(eta, n as u32))
        .sum();
    let e_d = if eta_sum > 0.0 {
        ((rates.e * rates.q - 0.5 * p_dc) / eta_sum).clamp(0.0, 0.5)
    } else {
        0.0
    };
    Ok(ChannelParams {
        loss_db: 0.0,
        eta_bob: eta.max(1e-300),
        p_dc,
        e_d,
    })
}

/// Central-difference propagation of independent input sigmas through `f`.
fn propagate<F>(x: &[f64], sigma: &[f64], f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut var = 0.0;
    for i in 0..x.len() {
        if !(sigma[i] > 0.0) {
            continue;
        }
        let h = sigma[i] * 1e-3;
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[i] += h;
        dn[i] -= h;
        let d = (f(&up) - f(&dn)) / (2.0 * h);
        var += (d * sigma[i]).powi(2);
    }
    var.sqrt()
}

/// Chains gain/error extraction, the decoy solve and the key-rate bounds for
/// every filter setting, then extrapolates MCLs from the inferred channel.
pub fn skr_from_experiment(
    maps: &[TomographyMap],
    stats: &ExperimentStats,
    budget: &AliceBudget,
    params: &KeyRateParams,
    model: UncertaintyModel,
) -> Result<ExperimentResult> {
    let mut by_nd: BTreeMap<i64, BTreeMap<Intensity, MeasuredRates>> = BTreeMap::new();
    let mut rates = Vec::new();
    for map in maps {
        let r = gains_and_errors(map, budget, model)?;
        let slot = by_nd.entry(nd_key(r.loss_db)).or_default();
        if slot.insert(r.intensity, r).is_some() {
            return Err(QkdError::Config(format!(
                "two {:?} maps at {} dB",
                r.intensity, r.loss_db
            )));
        }
        rates.push(r);
    }
    if by_nd.is_empty() {
        return Err(QkdError::Config("no tomography maps supplied".into()));
    }

    let setting = DtbSetting {
        signal: stats.signal,
        decoy1: stats.decoy,
    };
    let mut points = Vec::new();
    let mut inferred = Vec::new();
    for (key, group) in &by_nd {
        let loss_db = *key as f64 / ND_KEY_SCALE;
        let get = |i: Intensity| {
            group
                .get(&i)
                .copied()
                .ok_or_else(|| QkdError::Config(format!("missing {i:?} map at {loss_db} dB")))
        };
        let s1 = get(Intensity::S1)?;
        let s2 = get(Intensity::S2)?;
        let vac = match group.get(&Intensity::S0) {
            Some(r) => (r.q, r.q_sigma, r.e, r.e_sigma),
            None => {
                log::warn!(
                    "no vacuum map at {loss_db} dB; using Y0 = {}, e0 = {}",
                    FALLBACK_VACUUM.q,
                    FALLBACK_VACUUM.e
                );
                (FALLBACK_VACUUM.q, 0.0, FALLBACK_VACUUM.e, 0.0)
            }
        };
        let x = [vac.0, vac.2, s1.q, s1.e, s2.q, s2.e];
        let sig = [vac.1, vac.3, s1.q_sigma, s1.e_sigma, s2.q_sigma, s2.e_sigma];
        let dtb = |x: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let obs = [
                ObservedRates { q: x[0], e: x[1] },
                ObservedRates { q: x[2], e: x[3] },
                ObservedRates { q: x[4], e: x[5] },
            ];
            let sol = solve_dtb(&setting, &obs)?;
            let r = skr_dtb(params, &setting.signal, &obs[2], &sol.yields)?;
            Ok((r.raw, sol.yields.y, sol.yields.e))
        };
        let (raw, y, e) = dtb(&x)?;
        let sigma = propagate(&x, &sig, |v| dtb(v).map(|r| r.0).unwrap_or(raw));
        points.push(SkrPoint {
            protocol: "dtb".into(),
            loss_db,
            skr: raw.max(0.0),
            skr_sigma: sigma,
        });
        if let Some((eta, p_dc, e_d)) = channel_from_yields(y[0], y[1], e[1]) {
            inferred.push((eta * 10f64.powf(loss_db / 10.0), p_dc, e_d));
        }

        if let Some(hp) = &stats.hp {
            let s3 = get(Intensity::S3)?;
            let x3 = [s3.q, s3.e, vac.0];
            let sig3 = [s3.q_sigma, s3.e_sigma, vac.1];
            let hp_rate = |v: &[f64]| -> Result<f64> {
                let ch = channel_from_rates(&hp.source, &ObservedRates { q: v[0], e: v[1] }, v[2])?;
                Ok(skr_hp(hp, &ch, params)?.raw)
            };
            let raw = hp_rate(&x3)?;
            let sigma = propagate(&x3, &sig3, |v| hp_rate(v).unwrap_or(raw));
            points.push(SkrPoint {
                protocol: "hp".into(),
                loss_db,
                skr: raw.max(0.0),
                skr_sigma: sigma,
            });
        }
    }

    if inferred.is_empty() {
        return Err(QkdError::InconsistentData(
            "no filter setting yielded a positive single-photon transmittance".into(),
        ));
    }
    let k = inferred.len() as f64;
    let eta0 = (inferred.iter().map(|v| v.0).sum::<f64>() / k).min(1.0);
    let fitted_channel = ChannelParams {
        loss_db: 0.0,
        eta_bob: eta0,
        p_dc: inferred.iter().map(|v| v.1).sum::<f64>() / k,
        e_d: inferred.iter().map(|v| v.2).sum::<f64>() / k,
    };
    let mcl_or_none = |p: Protocol| match p.mcl(&fitted_channel, params) {
        Ok(m) => Ok(Some(m)),
        Err(QkdError::NoKey) => Ok(None),
        Err(e) => Err(e),
    };
    let mcl_wcs_db = wcs_mcl(&fitted_channel, params)?;
    let mcl_dtb_db = mcl_or_none(Protocol::Dtb {
        signal: stats.signal,
    })?;
    let mcl_hp_db = match &stats.hp {
        Some(setting) => mcl_or_none(Protocol::Hp { setting: *setting })?,
        None => None,
    };
    Ok(ExperimentResult {
        rates,
        points,
        fitted_channel,
        mcl_wcs_db,
        mcl_dtb_db,
        mcl_hp_db,
    })
}
