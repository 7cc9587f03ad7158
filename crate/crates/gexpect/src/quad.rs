//! One-dimensional quadrature helpers.
//!
//! Gaussian expectations are computed with composite Simpson on a truncated
//! range of +-10 standard deviations, which keeps the truncation error below
//! the rule error for integrands of polynomial growth up to degree ~6.

use crate::normal;

/// Default Simpson node count (must be odd).
pub const DEFAULT_NODES: usize = 4001;

/// Composite Simpson rule for `f` on [a, b] with `n` nodes (odd, >= 3).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd node count >= 3");
    let h = (b - a) / (n - 1) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// E[phi(Z)] for Z ~ N(0, variance), by Simpson on +-10 standard deviations.
///
/// `variance = 0` collapses to the point mass at the origin.
pub fn gauss_expect<F: Fn(f64) -> f64>(phi: F, variance: f64, nodes: usize) -> f64 {
    assert!(variance >= 0.0, "variance must be nonnegative");
    if variance == 0.0 {
        return phi(0.0);
    }
    let sd = variance.sqrt();
    let lim = 10.0 * sd;
    simpson(|x| phi(x) * normal::pdf(x / sd) / sd, -lim, lim, nodes)
}

/// E[phi(Z)] with the default node count.
pub fn gauss_expect_default<F: Fn(f64) -> f64>(phi: F, variance: f64) -> f64 {
    gauss_expect(phi, variance, DEFAULT_NODES)
}

/// Maximum of a continuous function on [lo, hi]: coarse scan plus
/// golden-section refinement of the best bracket, with endpoint checks.
pub fn max_on_interval<F: Fn(f64) -> f64>(phi: F, lo: f64, hi: f64) -> (f64, f64) {
    assert!(lo <= hi);
    if lo == hi {
        return (phi(lo), lo);
    }
    const SCAN: usize = 129;
    let h = (hi - lo) / (SCAN - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..SCAN {
        let v = phi(lo + i as f64 * h);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + h * best_i.saturating_sub(1) as f64;
    let b = (lo + h * (best_i + 1) as f64).min(hi);
    let (mut a, mut b) = (a, b);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = phi(d);
        }
        if (b - a).abs() < 1e-13 * (1.0 + b.abs()) {
            break;
        }
    }
    let xm = 0.5 * (a + b);
    let mut best = (phi(xm), xm);
    for (v, x) in [(phi(lo), lo), (phi(hi), hi), (fc, c), (fd, d)] {
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}
