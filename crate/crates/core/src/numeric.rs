//! Log-domain helpers shared by the engine, the adaptation rules and the oracles.

use crate::error::{Error, Result};

/// `log(sum(exp(xs)))`, returning `-inf` for an empty slice or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Effective sample size coefficient of a set of log-weights,
/// `(N^-1 sum W)^2 / (N^-1 sum W^2)`, valued in `[1/N, 1]`.
///
/// The weights are shifted by their maximum before exponentiation, so equal
/// weights give exactly 1 and a single non-zero weight gives exactly `1/N`.
pub fn ess_coefficient(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > f64::NEG_INFINITY) || log_weights.is_empty() {
        return Err(Error::AllWeightsZero);
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &lw in log_weights {
        let w = (lw - max).exp();
        s1 += w;
        s2 += w * w;
    }
    let n = log_weights.len() as f64;
    Ok((s1 * s1 / (n * s2)).min(1.0))
}

/// Subtracts the log-sum-exp so the weights sum to one; returns the removed constant.
pub fn normalize_log_weights(log_weights: &mut [f64]) -> Result<f64> {
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::AllWeightsZero);
    }
    for lw in log_weights.iter_mut() {
        *lw -= lse;
    }
    Ok(lse)
}

/// Ordinary least squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
