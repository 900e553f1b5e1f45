//! Threshold-detector channel model: n-photon transmittances, yields and
//! error rates, and the forward map from a photon-number distribution to
//! what Bob observes.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, QkdError, Result};
use crate::photon_source::PhotonDistribution;

/// Detection side of the link. The overall transmittance is the line
/// transmittance times Bob's detection efficiency; source-side collection
/// loss is applied to the distribution instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub loss_db: f64,
    pub eta_bob: f64,
    pub p_dc: f64,
    pub e_d: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            loss_db: 0.0,
            eta_bob: 0.045,
            p_dc: 2e-7,
            e_d: 0.033,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db >= 0.0) || !self.loss_db.is_finite() {
            return Err(QkdError::Domain(format!(
                "loss_db = {} must be >= 0",
                self.loss_db
            )));
        }
        if !(self.eta_bob > 0.0 && self.eta_bob <= 1.0) {
            return Err(QkdError::Domain(format!(
                "eta_bob = {} must lie in (0, 1]",
                self.eta_bob
            )));
        }
        if !(0.0..1.0).contains(&self.p_dc) {
            return Err(QkdError::Domain(format!(
                "p_dc = {} must lie in [0, 1)",
                self.p_dc
            )));
        }
        if !(0.0..=0.5).contains(&self.e_d) {
            return Err(QkdError::Domain(format!(
                "e_d = {} must lie in [0, 0.5]",
                self.e_d
            )));
        }
        Ok(())
    }

    pub fn with_loss(&self, loss_db: f64) -> Self {
        Self { loss_db, ..*self }
    }

    /// Overall single-photon transmittance including Bob's detectors.
    pub fn eta(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0) * self.eta_bob
    }
}

/// Per-photon-number yields `y[n]` and error rates `e[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldSet {
    pub y: Vec<f64>,
    pub e: Vec<f64>,
}

/// Gain and QBER of one intensity setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedRates {
    pub q: f64,
    pub e: f64,
}

pub fn eta_n(channel: &ChannelParams, n: u32) -> f64 {
    transmittance_n(channel.eta(), n)
}

/// `1 - (1 - eta)^n`, accurate for tiny `eta`.
pub(crate) fn transmittance_n(eta: f64, n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    -(n as f64 * (-eta).ln_1p()).exp_m1()
}

/// Yield and error rate for an `n`-photon pulse. An exactly zero yield gets
/// the random-outcome error rate 0.5.
pub(crate) fn yield_and_error(eta: f64, p_dc: f64, e_d: f64, n: u32) -> (f64, f64) {
    let en = transmittance_n(eta, n);
    let y = en + p_dc - en * p_dc;
    let e = if y > 0.0 {
        (e_d * en + 0.5 * p_dc) / y
    } else {
        0.5
    };
    (y, e)
}

pub fn yields(channel: &ChannelParams, n_max: usize) -> YieldSet {
    let eta = channel.eta();
    let (y, e) = (0..=n_max as u32)
        .map(|n| yield_and_error(eta, channel.p_dc, channel.e_d, n))
        .unzip();
    YieldSet { y, e }
}

/// Forward model for arbitrary photon-number weights: `Q = sum w_n Y_n`,
/// `E Q = sum w_n Y_n e_n`.
pub fn gain_and_qber_weights(weights: &[f64], channel: &ChannelParams) -> Result<ObservedRates> {
    let eta = channel.eta();
    let (mut q, mut eq) = (0.0, 0.0);
    for (n, &w) in weights.iter().enumerate() {
        let (y, e) = yield_and_error(eta, channel.p_dc, channel.e_d, n as u32);
        q += w * y;
        eq += w * y * e;
    }
    if q <= 0.0 {
        return Err(QkdError::Undefined("QBER with zero gain".into()));
    }
    Ok(ObservedRates { q, e: eq / q })
}

pub fn gain_and_qber(d: &PhotonDistribution, channel: &ChannelParams) -> Result<ObservedRates> {
    gain_and_qber_weights(&d.as_array(), channel)
}

/// Poisson tail mass below which the WCS series is truncated.
pub const POISSON_TAIL: f64 = 1e-12;

/// Gain and QBER of a weak coherent state with mean photon number `mu`,
/// summed over Poisson weights until the remaining tail is below [`POISSON_TAIL`].
pub fn wcs_gain_and_qber(mu: f64, channel: &ChannelParams) -> Result<ObservedRates> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(QkdError::Domain(format!("mu = {mu} must be positive")));
    }
    let eta = channel.eta();
    let mut pn = (-mu).exp();
    let mut cumulative = 0.0;
    let (mut q, mut eq) = (0.0, 0.0);
    let mut n = 0u32;
    loop {
        let (y, e) = yield_and_error(eta, channel.p_dc, channel.e_d, n);
        q += pn * y;
        eq += pn * y * e;
        cumulative += pn;
        if 1.0 - cumulative < POISSON_TAIL || n > 1000 {
            break;
        }
        n += 1;
        pn *= mu / n as f64;
    }
    if q <= 0.0 {
        return Err(QkdError::Undefined("QBER with zero gain".into()));
    }
    Ok(ObservedRates { q, e: eq / q })
}

/// Closed forms `Q = 1 - (1 - p_dc) e^{-eta mu}` and
/// `E Q = e_d (1 - e^{-eta mu}) + p_dc / 2`.
pub fn wcs_closed_form(mu: f64, channel: &ChannelParams) -> ObservedRates {
    let detect = -(-channel.eta() * mu).exp_m1();
    let q = 1.0 - (1.0 - channel.p_dc) * (1.0 - detect);
    let eq = channel.e_d * detect + 0.5 * channel.p_dc;
    ObservedRates {
        q,
        e: if q > 0.0 { eq / q } else { 0.5 },
    }
}

impl ObservedRates {
    pub fn validate(&self) -> Result<()> {
        check_probability("q", self.q)?;
        check_probability("e", self.e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lossless(p_dc: f64, e_d: f64) -> ChannelParams {
        ChannelParams {
            loss_db: 0.0,
            eta_bob: 1.0,
            p_dc,
            e_d,
        }
    }

    #[test]
    fn eta_n_examples() {
        let ch = ChannelParams {
            loss_db: 10.0 * 2f64.log10(),
            eta_bob: 1.0,
            p_dc: 0.0,
            e_d: 0.0,
        };
        assert_eq!(eta_n(&ch, 0), 0.0);
        assert_abs_diff_eq!(eta_n(&ch, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(eta_n(&ch, 2), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn yields_examples() {
        let ch = ChannelParams::default();
        let ys = yields(&ch, 2);
        assert_eq!(ys.y[0], 2e-7);
        assert_eq!(ys.e[0], 0.5);

        let clean = ChannelParams { p_dc: 0.0, ..ch };
        let ys = yields(&clean, 4);
        for n in 1..=4 {
            assert_abs_diff_eq!(ys.e[n], 0.033, epsilon = 1e-15);
        }

        // Straight-line arithmetic at 0 dB: eta = 0.045.
        let ys = yields(&ch, 1);
        let y1 = 0.045 + 2e-7 - 0.045 * 2e-7;
        let e1 = (0.033 * 0.045 + 1e-7) / y1;
        assert_abs_diff_eq!(ys.y[1], y1, epsilon = 1e-16);
        assert_abs_diff_eq!(ys.e[1], e1, epsilon = 1e-16);
    }

    #[test]
    fn zero_yield_error_convention() {
        let ys = yields(&lossless(0.0, 0.01), 0);
        assert_eq!((ys.y[0], ys.e[0]), (0.0, 0.5));
    }

    #[test]
    fn gain_examples() {
        let ch = ChannelParams::default().with_loss(7.0);
        let r = gain_and_qber(&PhotonDistribution::vacuum(), &ch).unwrap();
        assert_eq!((r.q, r.e), (2e-7, 0.5));
        let r = gain_and_qber(&PhotonDistribution::single_photon(), &lossless(0.0, 0.033)).unwrap();
        assert_abs_diff_eq!(r.q, 1.0);
        assert_abs_diff_eq!(r.e, 0.033, epsilon = 1e-15);
        assert!(gain_and_qber(&PhotonDistribution::vacuum(), &lossless(0.0, 0.0)).is_err());
    }

    #[test]
    fn wcs_examples() {
        let ch = ChannelParams::default();
        let tiny = wcs_gain_and_qber(1e-12, &ch).unwrap();
        assert_abs_diff_eq!(tiny.q, 2e-7, epsilon = 1e-12);

        let clean = ChannelParams { p_dc: 0.0, ..ch };
        let r = wcs_gain_and_qber(0.5, &clean).unwrap();
        assert_abs_diff_eq!(r.q, 1.0 - (-0.045f64 * 0.5).exp(), epsilon = 1e-12);

        let series = wcs_gain_and_qber(0.5, &ch).unwrap();
        let closed = wcs_closed_form(0.5, &ch);
        assert_abs_diff_eq!(series.q, closed.q, epsilon = 1e-10);
        assert_abs_diff_eq!(series.e, closed.e, epsilon = 1e-10);
    }

    #[test]
    fn default_json_schema() {
        let v = serde_json::to_value(ChannelParams::default()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
        for k in ["loss_db", "eta_bob", "p_dc", "e_d"] {
            assert!(keys.contains(&k.to_string()));
        }
    }

    fn channel() -> impl Strategy<Value = ChannelParams> {
        (0.0f64..60.0, 0.01f64..=1.0, 0.0f64..1e-3, 0.0f64..=0.5).prop_map(
            |(loss_db, eta_bob, p_dc, e_d)| ChannelParams {
                loss_db,
                eta_bob,
                p_dc,
                e_d,
            },
        )
    }

    proptest! {
        #[test]
        fn yields_monotone_and_identity(ch in channel()) {
            let ys = yields(&ch, 6);
            for n in 0..=6 {
                prop_assert!((0.0..=1.0).contains(&ys.y[n]));
                prop_assert!((0.0..=1.0).contains(&ys.e[n]));
                if n > 0 {
                    prop_assert!(ys.y[n] >= ys.y[n - 1]);
                }
                if ys.y[n] > 0.0 {
                    let lhs = ys.e[n] * ys.y[n];
                    let rhs = ch.e_d * eta_n(&ch, n as u32) + 0.5 * ch.p_dc;
                    prop_assert!((lhs - rhs).abs() <= 1e-15 * rhs.max(1e-300) + 1e-18);
                }
            }
        }

        #[test]
        fn gain_is_linear(ch in channel(), lam in 0.0f64..=1.0,
                          a1 in 0.0f64..0.5, a2 in 0.0f64..0.5, b1 in 0.0f64..0.5, b2 in 0.0f64..0.5) {
            prop_assume!(ch.p_dc > 0.0);
            let d1 = PhotonDistribution::from_p1_p2(a1, a2).unwrap();
            let d2 = PhotonDistribution::from_p1_p2(b1, b2).unwrap();
            let mix: Vec<f64> = d1.as_array().iter().zip(d2.as_array())
                .map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
            let r = gain_and_qber_weights(&mix, &ch).unwrap();
            let r1 = gain_and_qber(&d1, &ch).unwrap();
            let r2 = gain_and_qber(&d2, &ch).unwrap();
            prop_assert!((r.q - (lam * r1.q + (1.0 - lam) * r2.q)).abs() < 1e-15);
            let eq = lam * r1.q * r1.e + (1.0 - lam) * r2.q * r2.e;
            prop_assert!((r.q * r.e - eq).abs() < 1e-15);
        }

        #[test]
        fn wcs_series_matches_closed_form(ch in channel(), mu in 0.01f64..2.0) {
            prop_assume!(ch.p_dc > 0.0);
            let s = wcs_gain_and_qber(mu, &ch).unwrap();
            let c = wcs_closed_form(mu, &ch);
            // Truncated tail mass bounds the gain error.
            prop_assert!((s.q - c.q).abs() <= POISSON_TAIL + 1e-15);
            prop_assert!((s.q * s.e - c.q * c.e).abs() <= POISSON_TAIL + 1e-15);
        }
    }
}
