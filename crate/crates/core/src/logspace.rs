//! Natural-log probability arithmetic.
//!
//! Every probability inside the engine is carried as its natural logarithm.
//! `LOG_ZERO` (negative infinity) stands for an exact zero and is absorbed by
//! the sums below instead of producing NaN.

use std::f64::consts::LN_2;

/// Log of probability zero.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// A natural-log probability or density.
pub type LogDensity = f64;

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^{x_i}`; returns `LOG_ZERO` for an empty slice or all-zero input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Normalizes log weights into a probability vector.
///
/// Returns `None` when every weight is `LOG_ZERO`.
pub fn normalize_log_weights(xs: &[f64]) -> Option<Vec<f64>> {
    let total = log_sum_exp(xs);
    if !total.is_finite() {
        return None;
    }
    Some(xs.iter().map(|&x| (x - total).exp()).collect())
}

/// Converts a natural-log probability into a code length in bits.
#[inline]
pub fn code_length_bits(log_prob: f64) -> f64 {
    -log_prob / LN_2
}

/// Converts nats to bits.
#[inline]
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}
