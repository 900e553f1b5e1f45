//! Reconstruction of photon-number distributions from count rate and
//! intensity correlations.

use serde::{Deserialize, Serialize};

use super::{g2_upper_bound, PhotonDistribution};
use crate::error::{check_probability, QkdError, Result};

/// Detection efficiencies above this break the `eta_n ~ n * eta` approximation
/// behind [`extract_p0`].
pub const SMALL_ETA_LIMIT: f64 = 0.1;

/// Raw measurements characterizing an emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationObservables {
    pub g2: f64,
    #[serde(default)]
    pub g3: Option<f64>,
    /// Vacuum probability if already known; otherwise derived from the count rate.
    #[serde(default)]
    pub p0: Option<f64>,
    pub count_rate_c: f64,
    pub rep_rate_n: f64,
    pub eta_detection: f64,
}

/// Vacuum probability from the detected count rate, `1 - C / (eta * N)`.
pub fn extract_p0(obs: &CorrelationObservables) -> Result<f64> {
    if !(obs.eta_detection > 0.0 && obs.eta_detection <= 1.0) {
        return Err(QkdError::Domain(format!(
            "eta_detection = {} must lie in (0, 1]",
            obs.eta_detection
        )));
    }
    if !(obs.rep_rate_n > 0.0) || obs.count_rate_c < 0.0 {
        return Err(QkdError::Domain(
            "rates must be non-negative with N > 0".into(),
        ));
    }
    if obs.count_rate_c > obs.rep_rate_n {
        return Err(QkdError::InconsistentObservables(format!(
            "count rate {} exceeds repetition rate {}",
            obs.count_rate_c, obs.rep_rate_n
        )));
    }
    if obs.eta_detection > SMALL_ETA_LIMIT {
        log::warn!(
            "eta_detection = {} is not small; the linear multi-photon detection approximation degrades",
            obs.eta_detection
        );
    }
    let ratio = obs.count_rate_c / (obs.eta_detection * obs.rep_rate_n);
    if ratio > 1.0 + 1e-12 {
        return Err(QkdError::InconsistentObservables(format!(
            "C / (eta N) = {ratio} exceeds 1"
        )));
    }
    Ok((1.0 - ratio).max(0.0))
}

/// Solves `p1 + p2 = 1 - p0`, `g2 = 2 p2 / (p1 + 2 p2)^2` for the branch
/// connected to `g2 = 0`.
pub fn extract_distribution_g2(p0: f64, g2: f64) -> Result<PhotonDistribution> {
    check_probability("p0", p0)?;
    if p0 >= 1.0 {
        return Err(QkdError::Domain("p0 must be below 1".into()));
    }
    if g2 < 0.0 || g2.is_nan() {
        return Err(QkdError::Domain(format!("g2 = {g2} must be non-negative")));
    }
    let bound = g2_upper_bound(p0)?;
    let a = 1.0 - p0;
    // Allow rounding slack at the bound itself.
    if g2 > bound * (1.0 + 1e-12) {
        return Err(QkdError::Infeasible(format!(
            "g2 = {g2} exceeds the bound {bound} at p0 = {p0}"
        )));
    }
    let ga = (g2 * a).min(0.5);
    // Small root of g p2^2 + (2ga - 2) p2 + g a^2 = 0, written without the
    // cancellation of the textbook form.
    let p2 = (g2 * a * a / ((1.0 - ga) + (1.0 - 2.0 * ga).sqrt())).min(a);
    let p1 = (a - p2).max(0.0);
    PhotonDistribution::new(p0, p1, p2, 0.0).or_else(|_| {
        // p0 + p1 + p2 can drift by one ulp; rebuild the vacuum term.
        PhotonDistribution::new(1.0 - p1 - p2, p1, p2, 0.0)
    })
}

/// Solves the three moment equations for `(p1, p2, p3)` at fixed `p0`.
///
/// Damped Newton iteration on the residuals of
/// `p1 + p2 + p3 = 1 - p0`, `g2 m^2 = 2 p2 + 6 p3` and `g3 m^3 = 6 p3`,
/// with `m = p1 + 2 p2 + 3 p3`, started from the `g3 = 0` solution.
pub fn extract_distribution_g3(p0: f64, g2: f64, g3: f64) -> Result<PhotonDistribution> {
    if g3 < 0.0 || g3.is_nan() {
        return Err(QkdError::Domain(format!("g3 = {g3} must be non-negative")));
    }
    if g3 == 0.0 {
        return extract_distribution_g2(p0, g2);
    }
    check_probability("p0", p0)?;
    let a = 1.0 - p0;
    // A three-photon term lets g2 exceed the two-photon bound; start such
    // cases from the all-two-photon corner instead.
    let start = match extract_distribution_g2(p0, g2) {
        Ok(d) => d,
        Err(QkdError::Infeasible(_)) => PhotonDistribution {
            p0,
            p1: 0.0,
            p2: a,
            p3: 0.0,
        },
        Err(e) => return Err(e),
    };
    let residual = |x: [f64; 3]| -> [f64; 3] {
        let m = x[0] + 2.0 * x[1] + 3.0 * x[2];
        [
            x[0] + x[1] + x[2] - a,
            g2 * m * m - 2.0 * x[1] - 6.0 * x[2],
            g3 * m * m * m - 6.0 * x[2],
        ]
    };
    let norm = |r: [f64; 3]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut x = [start.p1, start.p2, 0.0];
    let mut r = residual(x);
    const MAX_ITER: usize = 100;
    for iter in 0..MAX_ITER {
        if norm(r) < 1e-15 {
            return finish(p0, x);
        }
        let m = x[0] + 2.0 * x[1] + 3.0 * x[2];
        let jac = [
            [1.0, 1.0, 1.0],
            [2.0 * g2 * m, 4.0 * g2 * m - 2.0, 6.0 * g2 * m - 6.0],
            [3.0 * g3 * m * m, 6.0 * g3 * m * m, 9.0 * g3 * m * m - 6.0],
        ];
        let step = solve3(jac, [-r[0], -r[1], -r[2]]).ok_or_else(|| QkdError::FitFailed {
            iterations: iter,
            reason: "singular Jacobian in the third-order inversion".into(),
        })?;
        let mut lambda = 1.0;
        loop {
            let trial = [
                x[0] + lambda * step[0],
                x[1] + lambda * step[1],
                x[2] + lambda * step[2],
            ];
            let rt = residual(trial);
            if norm(rt) < norm(r) || lambda < 1e-6 {
                x = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if norm(r) < 1e-12 {
        return finish(p0, x);
    }
    Err(QkdError::Infeasible(format!(
        "no physical root for p0 = {p0}, g2 = {g2}, g3 = {g3} (residual {:e})",
        norm(r)
    )))
}

fn finish(p0: f64, x: [f64; 3]) -> Result<PhotonDistribution> {
    const SLACK: f64 = 1e-12;
    if x.iter().any(|&v| v < -SLACK) {
        return Err(QkdError::Infeasible(format!(
            "root ({}, {}, {}) has a negative probability",
            x[0], x[1], x[2]
        )));
    }
    let [p1, p2, p3] = x.map(|v| v.max(0.0));
    PhotonDistribution::new(p0, p1, p2, p3)
        .or_else(|_| PhotonDistribution::new((1.0 - p1 - p2 - p3).max(0.0), p1, p2, p3))
}

/// Gaussian elimination with partial pivoting for a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (v, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}
