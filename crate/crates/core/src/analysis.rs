//! Maximal channel loss, relative gain over the WCS baseline, and the
//! sweeps built on them.
//!
//! Every function here is deterministic. Grid sweeps fan out over rayon and
//! collect by index, so results do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::ChannelParams;
use crate::error::{QkdError, Result};
use crate::numeric::{bisect_bracket, linear_fit, scan_then_golden_max};
use crate::photon_source::{apply_collection, PhotonDistribution};
use crate::protocols::{skr_dtb_exact, skr_hp, skr_wcs_infinite_decoy, HpSetting, KeyRateParams};

/// Target resolution of the MCL root, in dB.
pub const MCL_TOL_DB: f64 = 1e-6;
/// Step used to bracket the MCL from 0 dB upward.
pub const MCL_STEP_DB: f64 = 1.0;
/// Losses beyond this are treated as "key at any loss".
pub const MCL_MAX_DB: f64 = 1000.0;

/// Key-rate engine selected for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum Protocol {
    Dtb { signal: PhotonDistribution },
    Hp { setting: HpSetting },
    Wcs,
    PerfectSps,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Dtb { .. } => "dtb",
            Protocol::Hp { .. } => "hp",
            Protocol::Wcs => "wcs",
            Protocol::PerfectSps => "perfect-sps",
        }
    }

    /// Key rate per pulse at `loss_db` on top of `channel`.
    pub fn rate(
        &self,
        channel: &ChannelParams,
        params: &KeyRateParams,
        loss_db: f64,
    ) -> Result<f64> {
        let ch = channel.with_loss(loss_db);
        Ok(match self {
            Protocol::Dtb { signal } => skr_dtb_exact(signal, &ch, params)?.rate,
            Protocol::Hp { setting } => skr_hp(setting, &ch, params)?.rate,
            Protocol::Wcs => skr_wcs_infinite_decoy(&ch, params, None)?.rate,
            Protocol::PerfectSps => {
                skr_dtb_exact(&PhotonDistribution::single_photon(), &ch, params)?.rate
            }
        })
    }

    pub fn mcl(&self, channel: &ChannelParams, params: &KeyRateParams) -> Result<f64> {
        let first_err = std::cell::RefCell::new(None);
        let f = |l: f64| match self.rate(channel, params, l) {
            Ok(r) => r,
            Err(e) => {
                first_err.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        let out = mcl(f);
        if let Some(e) = first_err.into_inner() {
            return Err(e);
        }
        out
    }
}

/// Sampled key-rate curve and its zero crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkrCurve {
    pub points: Vec<(f64, f64)>,
    pub mcl_db: Option<f64>,
}

pub fn skr_curve(
    protocol: &Protocol,
    channel: &ChannelParams,
    params: &KeyRateParams,
    losses: &[f64],
) -> Result<SkrCurve> {
    let points = losses
        .par_iter()
        .map(|&l| protocol.rate(channel, params, l).map(|r| (l, r)))
        .collect::<Result<Vec<_>>>()?;
    let mcl_db = match protocol.mcl(channel, params) {
        Ok(m) => Some(m),
        Err(QkdError::NoKey) => None,
        Err(e) => return Err(e),
    };
    Ok(SkrCurve { points, mcl_db })
}

/// Largest loss in dB with a positive key rate.
///
/// Steps upward from 0 dB to bracket the first sign change, then bisects.
pub fn mcl<F>(rate: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(rate(0.0) > 0.0) {
        return Err(QkdError::NoKey);
    }
    let mut lo = 0.0;
    loop {
        let hi = lo + MCL_STEP_DB;
        if hi > MCL_MAX_DB {
            return Err(QkdError::Undefined(format!(
                "key rate still positive at {MCL_MAX_DB} dB"
            )));
        }
        if !(rate(hi) > 0.0) {
            let (a, _) = bisect_bracket(
                |l| if rate(l) > 0.0 { 1.0 } else { -1.0 },
                lo,
                hi,
                MCL_TOL_DB,
            );
            return Ok(a);
        }
        lo = hi;
    }
}

/// Relative gain in dB. A dB difference is the log of the transmittance ratio.
pub fn gamma(mcl_protocol_db: f64, mcl_wcs_db: f64) -> f64 {
    mcl_protocol_db - mcl_wcs_db
}

pub fn wcs_mcl(channel: &ChannelParams, params: &KeyRateParams) -> Result<f64> {
    Protocol::Wcs.mcl(channel, params)
}

/// MCL or `None` when there is no key even at 0 dB.
fn mcl_or_none(
    protocol: &Protocol,
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<Option<f64>> {
    match protocol.mcl(channel, params) {
        Ok(m) => Ok(Some(m)),
        Err(QkdError::NoKey) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Relative gain of the DTB protocol over the `(p1, p2)` simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaMap {
    /// Points per axis; both axes span [0, 1].
    pub n: usize,
    pub mcl_wcs_db: f64,
    /// Row-major by p2 then p1: `gamma_db[j * n + i]` is at `p1 = i / (n - 1)`,
    /// `p2 = j / (n - 1)`. `None` outside the simplex or where no key exists.
    pub gamma_db: Vec<Option<f64>>,
    /// Zero-gain contour as `(p2, p1)` pairs, one per p2 column that crosses.
    pub contour: Vec<(f64, f64)>,
    /// Least-squares line `p1 = slope * p2 + intercept` through the contour
    /// points with `p2 <= CONTOUR_FIT_P2_MAX`.
    pub line: Option<ContourLine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourLine {
    pub slope: f64,
    pub intercept: f64,
}

/// Upper p2 limit of the contour line fit.
pub const CONTOUR_FIT_P2_MAX: f64 = 0.3;

impl GammaMap {
    pub fn axis(&self, k: usize) -> f64 {
        k as f64 / (self.n - 1) as f64
    }

    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        self.gamma_db[j * self.n + i]
    }

    pub fn is_physical(&self, i: usize, j: usize) -> bool {
        i + j < self.n
    }
}

pub fn gamma_map_dtb(
    n: usize,
    channel: &ChannelParams,
    eta_c: f64,
    params: &KeyRateParams,
) -> Result<GammaMap> {
    if n < 2 {
        return Err(QkdError::Config(
            "map needs at least 2 points per axis".into(),
        ));
    }
    let w = wcs_mcl(channel, params)?;
    let step = 1.0 / (n - 1) as f64;
    let gamma_db = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % n, k / n);
            if i + j >= n {
                return Ok(None);
            }
            let d = PhotonDistribution::from_p1_p2(i as f64 * step, j as f64 * step)?;
            let d = apply_collection(&d, eta_c)?;
            Ok(mcl_or_none(&Protocol::Dtb { signal: d }, channel, params)?.map(|m| gamma(m, w)))
        })
        .collect::<Result<Vec<_>>>()?;

    // A point without key counts as MCL = 0 when interpolating the level set.
    let floor = -w;
    let mut contour = Vec::new();
    for j in 0..n {
        let value = |i: usize| gamma_db[j * n + i].unwrap_or(floor);
        for i in 1..(n - j) {
            let (a, b) = (value(i - 1), value(i));
            if a < 0.0 && b >= 0.0 {
                let frac = a / (a - b);
                contour.push((j as f64 * step, (i as f64 - 1.0 + frac) * step));
                break;
            }
        }
    }
    let fit_points: Vec<(f64, f64)> = contour
        .iter()
        .copied()
        .filter(|&(p2, _)| p2 <= CONTOUR_FIT_P2_MAX + 1e-12)
        .collect();
    let line = linear_fit(&fit_points).map(|(slope, intercept)| ContourLine { slope, intercept });
    Ok(GammaMap {
        n,
        mcl_wcs_db: w,
        gamma_db,
        contour,
        line,
    })
}

/// Two-photon distribution on the `p0 = 0` edge, `p1 = 1 - p2`.
fn edge_distribution(p2: f64) -> Result<PhotonDistribution> {
    PhotonDistribution::from_p1_p2(1.0 - p2, p2)
}

fn hp_gamma(
    p2: f64,
    t: f64,
    eta_d: f64,
    p_dc_alice: f64,
    channel: &ChannelParams,
    params: &KeyRateParams,
    w: f64,
) -> Result<f64> {
    let setting = HpSetting::balanced(edge_distribution(p2)?, eta_d, p_dc_alice).with_t(t);
    Ok(mcl_or_none(&Protocol::Hp { setting }, channel, params)?.map_or(-w, |m| gamma(m, w)))
}

/// Smallest p2 (with `p1 = 1 - p2`, balanced splitter) at which heralded
/// purification matches the WCS baseline.
pub fn hp_threshold(
    eta_d: f64,
    p_dc_alice: f64,
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<f64> {
    if !(eta_d > 0.0 && eta_d <= 1.0) {
        return Err(QkdError::Domain(format!(
            "eta_d = {eta_d} must lie in (0, 1]"
        )));
    }
    let w = wcs_mcl(channel, params)?;
    let g = |p2: f64| hp_gamma(p2, 0.5, eta_d, p_dc_alice, channel, params, w);
    let (lo, hi) = (1e-6, 1.0);
    if g(hi)? < 0.0 {
        return Err(QkdError::Infeasible(format!(
            "no gain over WCS for any p2 at eta_d = {eta_d}"
        )));
    }
    if g(lo)? >= 0.0 {
        return Ok(lo);
    }
    let (_, b) = bisect_bracket(|p2| g(p2).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-9);
    Ok(b)
}

/// Beam-splitter transmission maximizing the heralded MCL, to 1e-4.
/// `p1 = 1 - p2`; the channel's own dark counts are untouched by `p_dc_alice`.
pub fn optimal_bs_transmission(
    p2: f64,
    p_dc_alice: f64,
    eta_d: f64,
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<f64> {
    if !(p2 > 0.0 && p2 <= 1.0) {
        return Err(QkdError::Domain(format!("p2 = {p2} must lie in (0, 1]")));
    }
    let source = edge_distribution(p2)?;
    let f = |t: f64| {
        let setting = HpSetting::balanced(source, eta_d, p_dc_alice).with_t(t);
        mcl_or_none(&Protocol::Hp { setting }, channel, params)
            .ok()
            .flatten()
            .unwrap_or(0.0)
    };
    let (t, _) = scan_then_golden_max(f, 1e-4, 1.0 - 1e-4, 101, 1e-4);
    Ok(t)
}

/// Which efficiency a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EfficiencySweep {
    /// Collection efficiency applied to the DTB signal.
    DtbCollection { signal: PhotonDistribution },
    /// Collection efficiency applied to the emitter ahead of the purification stage.
    HpCollection { setting: HpSetting },
    /// Herald detector efficiency.
    HpDetector { setting: HpSetting },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub eta: f64,
    /// `None` when there is no key at 0 dB.
    pub gamma_db: Option<f64>,
}

pub fn gamma_vs_efficiency(
    sweep: &EfficiencySweep,
    etas: &[f64],
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<Vec<EfficiencyPoint>> {
    if etas.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(QkdError::Domain(
            "efficiency axis must lie in [0, 1]".into(),
        ));
    }
    let w = wcs_mcl(channel, params)?;
    etas.par_iter()
        .map(|&eta| {
            let protocol = match sweep {
                EfficiencySweep::DtbCollection { signal } => Protocol::Dtb {
                    signal: apply_collection(signal, eta)?,
                },
                EfficiencySweep::HpCollection { setting } => Protocol::Hp {
                    setting: HpSetting {
                        source: apply_collection(&setting.source, eta)?,
                        ..*setting
                    },
                },
                EfficiencySweep::HpDetector { setting } => Protocol::Hp {
                    setting: HpSetting {
                        eta_d: eta,
                        ..*setting
                    },
                },
            };
            let g = mcl_or_none(&protocol, channel, params)?.map(|m| gamma(m, w));
            if g.is_none() {
                log::debug!("no key at 0 dB for eta = {eta}");
            }
            Ok(EfficiencyPoint { eta, gamma_db: g })
        })
        .collect()
}

/// First upward zero crossing of gamma along the sweep, linearly interpolated.
/// Points without key count as `floor`.
pub fn zero_crossing(points: &[EfficiencyPoint], floor: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let a = w[0].gamma_db.unwrap_or(floor);
        let b = w[1].gamma_db.unwrap_or(floor);
        (a < 0.0 && b >= 0.0).then(|| w[0].eta + (w[1].eta - w[0].eta) * a / (a - b))
    })
}

/// Evenly spaced samples from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
