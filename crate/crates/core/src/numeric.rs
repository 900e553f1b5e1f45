//! Scalar root finding and one-dimensional maximization.

/// Golden ratio conjugate, (sqrt(5) - 1) / 2.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Returns the bracket `(lo, hi)` after it has shrunk below `tol`, with the
/// sign of `f(lo)` preserved. Callers pick whichever end suits them.
pub fn bisect_bracket<F>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let lo_positive = f(lo) > 0.0;
    // 200 halvings exhaust f64 resolution on any finite bracket.
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Root of `f` on `[lo, hi]` by bisection; `f(lo)` and `f(hi)` must differ in sign.
pub fn bisect<F>(f: F, lo: f64, hi: f64, tol: f64) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let (a, b) = bisect_bracket(f, lo, hi, tol);
    Some(0.5 * (a + b))
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
///
/// Returns `(x_max, f(x_max))`.
pub fn golden_section_max<F>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Maximizes `f` on `[lo, hi]` by a coarse scan followed by golden-section
/// refinement around the best scan point. Tolerates flat regions that would
/// stall a bare golden-section search.
pub fn scan_then_golden_max<F>(f: F, lo: f64, hi: f64, samples: usize, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let samples = samples.max(3);
    let step = (hi - lo) / (samples - 1) as f64;
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..samples {
        let v = f(lo + step * i as f64);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let a = lo + step * best.saturating_sub(1) as f64;
    let b = (lo + step * (best + 1) as f64).min(hi);
    let (x, fx) = golden_section_max(&f, a, b, tol);
    if fx >= best_val {
        (x, fx)
    } else {
        (lo + step * best as f64, best_val)
    }
}

/// Ordinary least-squares line `y = slope * x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
