//! Key-rate engines: exact decoy solve on a truncated basis, heralded
//! purification, and the weak-coherent-state infinite-decoy baseline.

use serde::{Deserialize, Serialize};

use crate::channel_model::{
    gain_and_qber, gain_and_qber_weights, wcs_gain_and_qber, yield_and_error, ChannelParams,
    ObservedRates, YieldSet,
};
use crate::error::{check_probability, QkdError, Result};
use crate::numeric::scan_then_golden_max;
use crate::photon_source::{hp_transform, PhotonDistribution};

/// Determinant magnitude below which the decoy pair is treated as degenerate.
pub const DEGENERATE_DET: f64 = 1e-10;

/// Negative solved yields down to this size are rounding noise and get clamped.
pub const NEGATIVE_YIELD_SLACK: f64 = 1e-9;

/// Allowed overshoot of the single-photon fraction above 1.
pub const OMEGA_SLACK: f64 = 1e-9;

/// Sifting factor and error-correction inefficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateParams {
    pub q_sifting: f64,
    pub f_ec: f64,
}

impl Default for KeyRateParams {
    fn default() -> Self {
        Self {
            q_sifting: 0.5,
            f_ec: 1.22,
        }
    }
}

impl KeyRateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_sifting > 0.0 && self.q_sifting <= 1.0) {
            return Err(QkdError::Config(format!(
                "q_sifting = {} must lie in (0, 1]",
                self.q_sifting
            )));
        }
        if !(self.f_ec >= 1.0) {
            return Err(QkdError::Config(format!(
                "f_ec = {} must be >= 1",
                self.f_ec
            )));
        }
        Ok(())
    }
}

/// A key rate clipped at zero, with the unclipped bound kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRate {
    pub rate: f64,
    pub raw: f64,
}

impl KeyRate {
    fn from_raw(raw: f64) -> Self {
        Self {
            rate: raw.max(0.0),
            raw,
        }
    }

    fn zero(raw: f64) -> Self {
        Self { rate: 0.0, raw }
    }
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    check_probability("entropy argument", x)?;
    Ok(h2(x))
}

/// Binary entropy for arguments already known to be in [0, 1].
pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Signal and non-vacuum decoy distributions. The third setting is always vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtbSetting {
    pub signal: PhotonDistribution,
    pub decoy1: PhotonDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtbSolution {
    pub yields: YieldSet,
    /// True when a value fell marginally outside [0, 1] and was clamped.
    pub clamped: bool,
}

/// Exact decoy solve for `Y0..Y2` and `e0..e2`.
///
/// `observed` is ordered vacuum, decoy, signal.
pub fn solve_dtb(setting: &DtbSetting, observed: &[ObservedRates; 3]) -> Result<DtbSolution> {
    let [vac, dec, sig] = observed;
    let y0 = vac.q;
    let e0 = vac.e;
    let [d0, d1, d2] = setting.decoy1.two_photon_weights()?;
    let [s0, s1, s2] = setting.signal.two_photon_weights()?;

    let det = s1 * d2 - s2 * d1;
    if det.abs() < DEGENERATE_DET {
        return Err(QkdError::DegenerateDecoy {
            det,
            tol: DEGENERATE_DET,
        });
    }
    // Cramer's rule on [s1 s2; d1 d2] (a1, a2) = (rs, rd).
    let solve2 = |rs: f64, rd: f64| ((rs * d2 - s2 * rd) / det, (s1 * rd - rs * d1) / det);

    let (y1, y2) = solve2(sig.q - s0 * y0, dec.q - d0 * y0);
    let (ey1, ey2) = solve2(sig.q * sig.e - s0 * y0 * e0, dec.q * dec.e - d0 * y0 * e0);

    let mut clamped = false;
    let mut tidy = |name: &str, v: f64| -> Result<f64> {
        if v < -NEGATIVE_YIELD_SLACK {
            return Err(QkdError::InconsistentData(format!(
                "solved {name} = {v:e} is negative"
            )));
        }
        if !(0.0..=1.0).contains(&v) {
            clamped = true;
        }
        Ok(v.clamp(0.0, 1.0))
    };
    let y1 = tidy("Y1", y1)?;
    let y2 = tidy("Y2", y2)?;
    let ey1 = tidy("Y1 e1", ey1)?;
    let ey2 = tidy("Y2 e2", ey2)?;
    let ratio = |ey: f64, y: f64| if y > 0.0 { (ey / y).min(1.0) } else { 0.5 };
    let e1 = ratio(ey1, y1);
    let e2 = ratio(ey2, y2);
    if clamped {
        log::debug!("decoy solve clamped a value into [0, 1]");
    }
    Ok(DtbSolution {
        yields: YieldSet {
            y: vec![y0, y1, y2],
            e: vec![e0, e1, e2],
        },
        clamped,
    })
}

/// `q { -Q f H2(E) + Q1 [1 - H2(e1)] }`, zero when either error rate reaches 1/2.
fn gllp_rate(params: &KeyRateParams, q: f64, e: f64, q1: f64, e1: f64) -> KeyRate {
    let raw = params.q_sifting * (-q * params.f_ec * h2(e.min(0.5)) + q1 * (1.0 - h2(e1.min(0.5))));
    if e1 >= 0.5 || e >= 0.5 {
        KeyRate::zero(raw)
    } else {
        KeyRate::from_raw(raw)
    }
}

/// Key rate from the signal's observed rates and the solved yields.
pub fn skr_dtb(
    params: &KeyRateParams,
    signal: &PhotonDistribution,
    signal_observed: &ObservedRates,
    solved: &YieldSet,
) -> Result<KeyRate> {
    let [_, p1, _] = signal.two_photon_weights()?;
    if solved.y.len() < 2 || solved.e.len() < 2 {
        return Err(QkdError::Config(
            "solved yields need at least Y0 and Y1".into(),
        ));
    }
    let q1 = solved.y[1] * p1;
    Ok(gllp_rate(
        params,
        signal_observed.q,
        signal_observed.e,
        q1,
        solved.e[1],
    ))
}

/// Full chain at one channel setting: forward-generate the three settings,
/// solve, and evaluate the key rate.
pub fn skr_dtb_at(
    setting: &DtbSetting,
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<KeyRate> {
    let observed = [
        gain_and_qber(&PhotonDistribution::vacuum(), channel)?,
        gain_and_qber(&setting.decoy1, channel)?,
        gain_and_qber(&setting.signal, channel)?,
    ];
    let solved = solve_dtb(setting, &observed)?;
    skr_dtb(params, &setting.signal, &observed[2], &solved.yields)
}

/// DTB key rate with the solved yields replaced by the channel-model yields
/// they reproduce exactly. Sweeps use this to skip the decoy bookkeeping.
pub fn skr_dtb_exact(
    signal: &PhotonDistribution,
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<KeyRate> {
    let weights = signal.two_photon_weights()?;
    let observed = gain_and_qber_weights(&weights, channel)?;
    let (y1, e1) = yield_and_error(channel.eta(), channel.p_dc, channel.e_d, 1);
    Ok(gllp_rate(
        params,
        observed.q,
        observed.e,
        weights[1] * y1,
        e1,
    ))
}

/// Emitter plus Alice's purification stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpSetting {
    pub source: PhotonDistribution,
    pub t: f64,
    pub r: f64,
    pub eta_d: f64,
    pub p_dc_alice: f64,
    /// Count heralds that send no photon to Bob in the sifted gain. They fire
    /// Bob's dark counts only, so dropping them reproduces the bare two-term form.
    #[serde(default = "default_true")]
    pub include_vacuum: bool,
}

fn default_true() -> bool {
    true
}

impl HpSetting {
    pub fn balanced(source: PhotonDistribution, eta_d: f64, p_dc_alice: f64) -> Self {
        Self {
            source,
            t: 0.5,
            r: 0.5,
            eta_d,
            p_dc_alice,
            include_vacuum: true,
        }
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self {
            t,
            r: 1.0 - t,
            ..*self
        }
    }
}

/// Heralded gain and QBER at Bob, per emitted pulse.
pub fn hp_observed(setting: &HpSetting, channel: &ChannelParams) -> Result<(ObservedRates, f64)> {
    let h = hp_transform(
        &setting.source,
        setting.t,
        setting.r,
        setting.eta_d,
        setting.p_dc_alice,
    )?;
    let vacuum = if setting.include_vacuum {
        h.vacuum
    } else {
        0.0
    };
    let observed = gain_and_qber_weights(&[vacuum, h.single, h.double], channel)?;
    Ok((observed, h.single))
}

/// Heralded key rate `q Q { -f H2(E) + Omega [1 - H2(E / Omega)] }` with
/// `Omega = P1~ Y1 / Q`.
///
/// The error-correction factor is `params.f_ec`; set it to 1 for the bare
/// form without reconciliation inefficiency.
pub fn skr_hp(
    setting: &HpSetting,
    channel: &ChannelParams,
    params: &KeyRateParams,
) -> Result<KeyRate> {
    let (obs, single) = hp_observed(setting, channel)?;
    if single <= 0.0 {
        return Ok(KeyRate::zero(0.0));
    }
    let (y1, _) = yield_and_error(channel.eta(), channel.p_dc, channel.e_d, 1);
    let omega = single * y1 / obs.q;
    if omega > 1.0 + OMEGA_SLACK {
        return Err(QkdError::InconsistentData(format!(
            "single-photon fraction {omega} exceeds 1"
        )));
    }
    let omega = omega.min(1.0);
    let e1 = obs.e / omega;
    let raw = params.q_sifting
        * obs.q
        * (-params.f_ec * h2(obs.e.min(0.5)) + omega * (1.0 - h2(e1.min(0.5))));
    if e1 >= 0.5 || obs.e >= 0.5 {
        Ok(KeyRate::zero(raw))
    } else {
        Ok(KeyRate::from_raw(raw))
    }
}

/// Upper end of the WCS intensity search.
pub const WCS_MU_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WcsRate {
    pub rate: f64,
    pub raw: f64,
    pub mu: f64,
}

fn wcs_raw(channel: &ChannelParams, params: &KeyRateParams, mu: f64) -> Result<f64> {
    let obs = wcs_gain_and_qber(mu, channel)?;
    let (y1, e1) = yield_and_error(channel.eta(), channel.p_dc, channel.e_d, 1);
    let q1 = mu * (-mu).exp() * y1;
    Ok(gllp_rate(params, obs.q, obs.e, q1, e1).raw)
}

/// Weak-coherent-state rate with single-photon yield and error known exactly.
/// Without `mu`, the intensity is optimized over (0, 2] to 1e-6.
pub fn skr_wcs_infinite_decoy(
    channel: &ChannelParams,
    params: &KeyRateParams,
    mu: Option<f64>,
) -> Result<WcsRate> {
    let (mu, raw) = match mu {
        Some(mu) => (mu, wcs_raw(channel, params, mu)?),
        None => {
            let f = |m: f64| wcs_raw(channel, params, m).unwrap_or(f64::NEG_INFINITY);
            scan_then_golden_max(f, 1e-6, WCS_MU_MAX, 41, 1e-6)
        }
    };
    let (_, e1) = yield_and_error(channel.eta(), channel.p_dc, channel.e_d, 1);
    let rate = if e1 >= 0.5 { 0.0 } else { raw.max(0.0) };
    Ok(WcsRate { rate, raw, mu })
}
