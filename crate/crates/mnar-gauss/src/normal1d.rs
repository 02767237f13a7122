//! Univariate normal density, CDF and closed-form truncated moments.
//!
//! These are the scalar building blocks for the audit closed forms and the
//! deterministic likelihood oracles. Tail masses go through `erfc` so that
//! intervals out to ~37 standard deviations keep relative accuracy.

use statrs::function::erf::{erf, erfc};

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal density.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF.
pub fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - Phi(x)`, accurate for large `x`.
pub fn std_tail(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `Phi(b) - Phi(a)` computed against the nearer tail to avoid cancellation.
pub fn std_interval_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let m = if a > 0.0 {
        std_tail(a) - std_tail(b)
    } else if b < 0.0 {
        std_cdf(b) - std_cdf(a)
    } else {
        // straddles zero; erf is accurate near the origin
        0.5 * (erf(b * FRAC_1_SQRT_2) - erf(a * FRAC_1_SQRT_2))
    };
    m.max(0.0)
}

fn xphi(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * phi(x)
    }
}

fn phi_fin(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        phi(x)
    }
}

/// Moments of `N(mean, sd^2)` restricted to the closed interval `[lo, hi]`.
///
/// `mass` is the Gaussian measure of the interval; `mean` and `var` are the
/// moments of the conditional (truncated) distribution. When `mass`
/// underflows to zero the conditional moments are returned as NaN.
#[derive(Debug, Clone, Copy)]
pub struct TruncMoments {
    pub mass: f64,
    pub mean: f64,
    pub var: f64,
}

pub fn trunc_moments(mean: f64, sd: f64, lo: f64, hi: f64) -> TruncMoments {
    debug_assert!(sd > 0.0);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let mass = std_interval_mass(a, b);
    if mass <= 0.0 {
        return TruncMoments { mass: 0.0, mean: f64::NAN, var: f64::NAN };
    }
    let dphi = phi_fin(a) - phi_fin(b);
    let m1 = dphi / mass;
    let m2 = 1.0 + (xphi(a) - xphi(b)) / mass - m1 * m1;
    TruncMoments { mass, mean: mean + sd * m1, var: (sd * sd * m2).max(0.0) }
}

/// Restricted (unnormalized) raw moments `(M0, M1, M2)` of `N(mean, sd^2)`
/// over `[lo, hi]`: `Mk = ∫ x^k g(x) dx`.
pub fn restricted_raw_moments(mean: f64, sd: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    let t = trunc_moments(mean, sd, lo, hi);
    if t.mass <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let m1 = t.mass * t.mean;
    let m2 = t.mass * (t.var + t.mean * t.mean);
    (t.mass, m1, m2)
}
