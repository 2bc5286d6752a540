//! Scalar special functions used by the likelihoods and activations.

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Arguments below this are shifted upward before the asymptotic series.
const SHIFT_THRESHOLD: f64 = 10.0;

// B_{2k} / (2k (2k - 1)) for k = 1..8
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// `log Γ(x)` for `x > 0`.
///
/// Stirling series for `x >= 10`, shifted by the recurrence
/// `Γ(x) = Γ(x + m) / (x (x+1) … (x+m-1))` below that.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut z = x;
    let mut log_shift = 0.0;
    if z < SHIFT_THRESHOLD {
        let mut prod = 1.0;
        while z < SHIFT_THRESHOLD {
            prod *= z;
            z += 1.0;
        }
        log_shift = prod.ln();
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in STIRLING {
        series += c * pow;
        pow *= inv2;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series - log_shift
}

/// Digamma `ψ(x) = d/dx log Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> f64 {
    let mut z = x;
    let mut acc = 0.0;
    while z < SHIFT_THRESHOLD {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    acc + z.ln() - 0.5 / z - tail
}

/// `log C(n, k)` through log-gamma.
pub fn log_binomial_coefficient(n: f64, k: f64) -> f64 {
    log_gamma_unchecked(n + 1.0) - log_gamma_unchecked(k + 1.0) - log_gamma_unchecked(n - k + 1.0)
}

/// `log(1 + exp(x))` without overflow. Never returns exactly zero.
#[inline]
pub fn softplus(x: f64) -> f64 {
    let v = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    v.max(f64::MIN_POSITIVE)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
