//! Least-squares fit of the cascade model to a normalized saturation curve.

use serde::{Deserialize, Serialize};

use super::SourceModel;
use crate::error::{QkdError, Result};

/// Mean photon number divided by its asymptote `qy_x + qy_xx`, as a function
/// of `alpha * I` and the exciton share `rho = qy_x / (qy_x + qy_xx)`.
pub fn normalized_emission(x: f64, rho: f64) -> f64 {
    if x > 1.0 {
        let u = 1.0 / x;
        (1.0 + rho * u) / (1.0 + u + u * u)
    } else {
        (x * x + rho * x) / (1.0 + x + x * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceFit {
    /// Quantum yields are reported normalized to `qy_x + qy_xx = 1`: a
    /// normalized curve only constrains their ratio.
    pub model: SourceModel,
    /// Root-mean-square residual divided by the range of the observed counts.
    pub nrmse: f64,
    pub iterations: usize,
}

/// Fits `alpha_times_is` and the exciton share to `(s, normalized count)` samples.
pub fn fit_source_model(samples: &[(f64, f64)]) -> Result<SourceFit> {
    if samples.len() < 4 {
        return Err(QkdError::FitFailed {
            iterations: 0,
            reason: format!("need at least 4 samples, got {}", samples.len()),
        });
    }
    if samples
        .iter()
        .any(|&(s, y)| s < 0.0 || !s.is_finite() || !y.is_finite())
    {
        return Err(QkdError::Domain(
            "samples need finite values with s >= 0".into(),
        ));
    }

    // Parameters: theta = (ln k, rho). The log keeps k positive.
    let sse = |theta: [f64; 2]| -> f64 {
        let k = theta[0].exp();
        samples
            .iter()
            .map(|&(s, y)| (normalized_emission(k * s, theta[1]) - y).powi(2))
            .sum()
    };

    // Coarse grid for a starting point; the objective has shallow valleys.
    let mut theta = [0.0, 0.5];
    let mut best = f64::INFINITY;
    for i in 0..=60 {
        let lnk = -6.0 + 12.0 * i as f64 / 60.0;
        for j in 0..=20 {
            let rho = j as f64 / 20.0;
            let v = sse([lnk, rho]);
            if v < best {
                best = v;
                theta = [lnk, rho];
            }
        }
    }

    let mut lambda = 1e-3;
    let mut iterations = 0;
    const MAX_ITER: usize = 500;
    while iterations < MAX_ITER {
        iterations += 1;
        let k = theta[0].exp();
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for &(s, y) in samples {
            let x = k * s;
            let den = 1.0 + x + x * x;
            let f = normalized_emission(x, theta[1]);
            // d f / d x times d x / d ln k, and d f / d rho.
            let dfdx = ((2.0 * x + theta[1]) * den - (x * x + theta[1] * x) * (1.0 + 2.0 * x))
                / (den * den);
            let j = [dfdx * x, x / den];
            let res = f - y;
            for a in 0..2 {
                jtr[a] += j[a] * res;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step = [
                -(m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det,
                -(m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det,
            ];
            let trial = [theta[0] + step[0], (theta[1] + step[1]).clamp(0.0, 1.0)];
            let v = sse(trial);
            if v < best {
                let rel = (best - v) / best.max(1e-300);
                theta = trial;
                best = v;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-15 || (step[0].abs() < 1e-14 && step[1].abs() < 1e-14) {
                    return finish(samples, theta, best, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a (possibly boundary) minimum.
            return finish(samples, theta, best, iterations);
        }
    }
    Err(QkdError::FitFailed {
        iterations,
        reason: format!(
            "no convergence; last theta = ({}, {}), sse = {best:e}",
            theta[0].exp(),
            theta[1]
        ),
    })
}

fn finish(
    samples: &[(f64, f64)],
    theta: [f64; 2],
    sse: f64,
    iterations: usize,
) -> Result<SourceFit> {
    let n = samples.len() as f64;
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Err(QkdError::FitFailed {
            iterations,
            reason: "observed counts have zero range".into(),
        });
    }
    let rho = theta[1];
    let model = SourceModel::new(theta[0].exp(), rho, 1.0 - rho)?;
    Ok(SourceFit {
        model,
        nrmse: (sse / n).sqrt() / range,
        iterations,
    })
}
