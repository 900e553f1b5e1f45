//! Photon-number statistics of a biexciton-exciton cascade emitter.
//!
//! Distributions live on the truncated Fock basis {0, 1, 2, 3}. The cascade
//! itself never produces three photons; `p3` is only populated when a
//! distribution is reconstructed from a third-order correlation.

mod fit;
mod inversion;

pub use fit::{fit_source_model, normalized_emission, SourceFit};
pub use inversion::{
    extract_distribution_g2, extract_distribution_g3, extract_p0, CorrelationObservables,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, QkdError, Result};
use crate::numeric::bisect;

/// Sum-to-one tolerance for distributions.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Largest `p3` the two-photon protocol math silently drops.
pub const P3_DROP_LIMIT: f64 = 1e-4;

/// Probabilities of emitting 0..=3 photons per excitation pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(default)]
    pub p3: f64,
}

impl PhotonDistribution {
    pub fn new(p0: f64, p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let d = Self { p0, p1, p2, p3 };
        d.validate()?;
        Ok(d)
    }

    /// Two-photon distribution with the vacuum term filled in.
    pub fn from_p1_p2(p1: f64, p2: f64) -> Result<Self> {
        let mut p0 = 1.0 - p1 - p2;
        if p0 < 0.0 && p0 > -NORMALIZATION_TOL {
            p0 = 0.0;
        }
        Self::new(p0, p1, p2, 0.0)
    }

    pub fn vacuum() -> Self {
        Self {
            p0: 1.0,
            p1: 0.0,
            p2: 0.0,
            p3: 0.0,
        }
    }

    pub fn single_photon() -> Self {
        Self {
            p0: 0.0,
            p1: 1.0,
            p2: 0.0,
            p3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p0", self.p0),
            ("p1", self.p1),
            ("p2", self.p2),
            ("p3", self.p3),
        ] {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                return Err(QkdError::InvalidDistribution(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(QkdError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.p0 + self.p1 + self.p2 + self.p3
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p0, self.p1, self.p2, self.p3]
    }

    /// The `[p0, p1, p2]` weights used by the two-photon protocol math.
    ///
    /// A residual `p3` up to [`P3_DROP_LIMIT`] is dropped (folded into the
    /// vacuum term so the weights still sum to one); anything larger is refused.
    pub fn two_photon_weights(&self) -> Result<[f64; 3]> {
        if self.p3 > P3_DROP_LIMIT {
            return Err(QkdError::Unsupported(format!(
                "p3 = {} exceeds {P3_DROP_LIMIT}; key-rate models are two-photon",
                self.p3
            )));
        }
        Ok([self.p0 + self.p3, self.p1, self.p2])
    }
}

/// Cascade parameters. `alpha_times_is` is the absorption constant times the
/// saturation intensity, so a relative pump power `s` maps to `alpha*I = alpha_times_is * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub alpha_times_is: f64,
    pub qy_x: f64,
    pub qy_xx: f64,
}

impl SourceModel {
    pub fn new(alpha_times_is: f64, qy_x: f64, qy_xx: f64) -> Result<Self> {
        if !(alpha_times_is > 0.0) || !alpha_times_is.is_finite() {
            return Err(QkdError::Domain(format!(
                "alpha_times_is = {alpha_times_is} must be positive"
            )));
        }
        check_probability("qy_x", qy_x)?;
        check_probability("qy_xx", qy_xx)?;
        Ok(Self {
            alpha_times_is,
            qy_x,
            qy_xx,
        })
    }

    /// Emission distribution at relative pump power `s`.
    pub fn distribution_at(&self, s: f64) -> Result<PhotonDistribution> {
        let ex = excitation_probs(self, s)?;
        emission_distribution(ex, self.qy_x, self.qy_xx)
    }
}

/// Probabilities that a pump pulse leaves the dot in the biexciton or exciton state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationProbs {
    pub p_xx: f64,
    pub p_x: f64,
}

impl ExcitationProbs {
    /// Occupation probabilities for a given `alpha * I`.
    pub fn from_alpha_i(x: f64) -> Result<Self> {
        if x < 0.0 || x.is_nan() {
            return Err(QkdError::Domain(format!(
                "alpha*I = {x} must be non-negative"
            )));
        }
        if x.is_infinite() {
            return Ok(Self {
                p_xx: 1.0,
                p_x: 0.0,
            });
        }
        // Divide through by x^2 for large x so the ratio stays finite.
        if x > 1.0 {
            let u = 1.0 / x;
            let den = u * u + u + 1.0;
            Ok(Self {
                p_xx: 1.0 / den,
                p_x: u / den,
            })
        } else {
            let den = 1.0 + x + x * x;
            Ok(Self {
                p_xx: x * x / den,
                p_x: x / den,
            })
        }
    }
}

pub fn excitation_probs(source: &SourceModel, s: f64) -> Result<ExcitationProbs> {
    if s < 0.0 || s.is_nan() {
        return Err(QkdError::Domain(format!(
            "relative power {s} must be non-negative"
        )));
    }
    ExcitationProbs::from_alpha_i(source.alpha_times_is * s)
}

pub fn emission_distribution(
    ex: ExcitationProbs,
    qy_x: f64,
    qy_xx: f64,
) -> Result<PhotonDistribution> {
    check_probability("p_xx", ex.p_xx)?;
    check_probability("p_x", ex.p_x)?;
    if ex.p_xx + ex.p_x > 1.0 + NORMALIZATION_TOL {
        return Err(QkdError::Domain(format!(
            "p_xx + p_x = {} exceeds 1",
            ex.p_xx + ex.p_x
        )));
    }
    check_probability("qy_x", qy_x)?;
    check_probability("qy_xx", qy_xx)?;
    let p2 = ex.p_xx * qy_x * qy_xx;
    let p1 = ex.p_xx * (qy_x + qy_xx - 2.0 * qy_x * qy_xx) + ex.p_x * qy_x;
    let p0 = 1.0 - p1 - p2;
    PhotonDistribution::new(p0.max(0.0), p1, p2, 0.0)
}

pub fn mean_photon_number(d: &PhotonDistribution) -> f64 {
    d.p1 + 2.0 * d.p2 + 3.0 * d.p3
}

/// Second-order correlation at zero delay, `<n(n-1)> / <n>^2`.
pub fn g2_of(d: &PhotonDistribution) -> Result<f64> {
    let m = mean_photon_number(d);
    if m <= 0.0 {
        return Err(QkdError::Undefined(
            "g2 of a vacuum-only distribution".into(),
        ));
    }
    Ok((2.0 * d.p2 + 6.0 * d.p3) / (m * m))
}

/// Third-order correlation at zero delays, `<n(n-1)(n-2)> / <n>^3`.
pub fn g3_of(d: &PhotonDistribution) -> Result<f64> {
    let m = mean_photon_number(d);
    if m <= 0.0 {
        return Err(QkdError::Undefined(
            "g3 of a vacuum-only distribution".into(),
        ));
    }
    Ok(6.0 * d.p3 / (m * m * m))
}

/// Largest g2 reachable on {0, 1, 2} at a fixed vacuum probability.
/// Diverges to +inf as `p0` approaches 1.
pub fn g2_upper_bound(p0: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p0) {
        if p0 == 1.0 {
            return Ok(f64::INFINITY);
        }
        return Err(QkdError::Domain(format!("p0 = {p0} must lie in [0, 1)")));
    }
    Ok(1.0 / (2.0 * (1.0 - p0)))
}

/// Binomial thinning of every emitted photon with survival probability `eta_c`.
pub fn apply_collection(d: &PhotonDistribution, eta_c: f64) -> Result<PhotonDistribution> {
    check_probability("eta_c", eta_c)?;
    if d.p3 != 0.0 {
        return Err(QkdError::Unsupported(
            "collection loss is defined for distributions without a three-photon term".into(),
        ));
    }
    let p2 = d.p2 * eta_c * eta_c;
    let p1 = d.p1 * eta_c + 2.0 * d.p2 * eta_c * (1.0 - eta_c);
    PhotonDistribution::new((1.0 - p1 - p2).max(0.0), p1, p2, 0.0)
}

/// Joint probabilities per pulse of "Alice's detector heralds" and "n photons
/// travel to Bob". Not normalized: the complement is the unheralded fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldedDistribution {
    pub vacuum: f64,
    pub single: f64,
    pub double: f64,
}

impl HeraldedDistribution {
    pub fn herald_probability(&self) -> f64 {
        self.vacuum + self.single + self.double
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.vacuum, self.single, self.double]
    }
}

/// Beam-splitter purification: transmitted photons go to Bob, reflected ones
/// hit Alice's herald detector.
///
/// The single and double terms use the linearized click probability
/// `eta_d + p_dc` for one photon. The vacuum term (herald fired but nothing
/// transmitted) covers pulses with no photon, a reflected single photon, and
/// both photons reflected.
pub fn hp_transform(
    d: &PhotonDistribution,
    t: f64,
    r: f64,
    eta_d: f64,
    p_dc: f64,
) -> Result<HeraldedDistribution> {
    check_probability("t", t)?;
    check_probability("r", r)?;
    check_probability("eta_d", eta_d)?;
    check_probability("p_dc", p_dc)?;
    if (t + r - 1.0).abs() > 1e-12 {
        return Err(QkdError::Config(format!(
            "beam splitter t + r = {} != 1",
            t + r
        )));
    }
    let [p0, p1, p2] = d.two_photon_weights()?;
    let single = 2.0 * p2 * r * t * (eta_d + p_dc) + t * p1 * p_dc;
    let double = t * t * p2 * p_dc;
    let both_reflected_click = 1.0 - (1.0 - eta_d) * (1.0 - eta_d) + p_dc;
    let vacuum = p0 * p_dc + p1 * r * (eta_d + p_dc) + p2 * r * r * both_reflected_click;
    Ok(HeraldedDistribution {
        vacuum,
        single,
        double,
    })
}

/// The `alpha * I` value at which the mean photon number reaches 90% of its
/// asymptote `qy_x + qy_xx`.
pub fn saturation_power(source: &SourceModel) -> Result<f64> {
    let total = source.qy_x + source.qy_xx;
    if total <= 0.0 {
        return Err(QkdError::Domain("saturation needs qy_x + qy_xx > 0".into()));
    }
    let rho = source.qy_x / total;
    let target = 0.9;
    let f = |x: f64| normalized_emission(x, rho) - target;
    // The normalized curve is strictly increasing from 0 to 1, so a bracket
    // doubling from 1 always terminates.
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    bisect(f, 0.0, hi, 1e-13)
        .ok_or_else(|| QkdError::Domain("saturation bracket lost its sign change".into()))
}
