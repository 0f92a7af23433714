//! Numerically stable log-domain accumulation.
//!
//! All weight arithmetic in this crate happens in log space: an arm's weight
//! is `exp(alpha * sum of estimates)`, which overflows `f64` long before an
//! experiment finishes. Sums of weights are therefore folded with the
//! max-shifted log-sum-exp below. `f64::NEG_INFINITY` is a first-class
//! citizen: it encodes a zero weight (a masked-out assignment).

/// `log(sum_i exp(xs[i]))`, shifted by the maximum for stability.
///
/// Returns `NEG_INFINITY` for an empty slice or when every entry is
/// `NEG_INFINITY` (an empty sum of weights).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf (zero weights) or a +inf/NaN contamination: either way the
        // shift cannot help, and the max is already the right answer for -inf.
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights into a probability vector.
///
/// Entries at `NEG_INFINITY` get probability exactly `0.0`. Panics in debug
/// builds if every entry is `NEG_INFINITY`.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(log_weights);
    debug_assert!(total.is_finite(), "softmax over an empty weight sum");
    log_weights
        .iter()
        .map(|&lw| if lw == f64::NEG_INFINITY { 0.0 } else { (lw - total).exp() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_sum_on_small_values() {
        let xs: [f64; 3] = [0.1, 0.7, -0.3];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn survives_large_magnitudes() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
        let xs = [-1000.0, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn neg_infinity_entries_are_zero_weights() {
        let xs = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        assert!((log_sum_exp(&xs) - 0.0).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 4]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one_and_zeroes_masked_entries() {
        let p = softmax(&[3.0, f64::NEG_INFINITY, 3.0]);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }
}
