//! Exact minimization of the weighted hinge sum over the bias for fixed `w`.

/// Returns the minimizer of `b -> sum_i c_i max(0, 1 - y_i (s_i + b))` closest
/// to `preferred`, where `s_i = w.x_i`. Labels are given as signs.
pub fn optimal_bias(scores: &[f64], signs: &[f64], weights: &[f64], preferred: f64) -> f64 {
    let (lo, hi) = optimal_bias_interval(scores, signs, weights);
    preferred.clamp(lo, hi)
}

/// The closed interval of minimizers (possibly unbounded on one side).
pub(crate) fn optimal_bias_interval(scores: &[f64], signs: &[f64], weights: &[f64]) -> (f64, f64) {
    // Each term has a kink at t_i = y_i - s_i; slopes only increase across kinks.
    let mut kinks: Vec<(f64, f64)> = scores
        .iter()
        .zip(signs)
        .zip(weights)
        .filter(|(_, c)| **c > 0.0)
        .map(|((s, y), c)| (y - s, *c))
        .collect();
    if kinks.is_empty() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos_total: f64 = signs
        .iter()
        .zip(weights)
        .filter(|(y, c)| **y > 0.0 && **c > 0.0)
        .map(|(_, c)| c)
        .sum();
    let total: f64 = kinks.iter().map(|k| k.1).sum();
    let eps = 1e-12 * total;

    let mut slope = -pos_total;
    if slope >= -eps {
        return (f64::NEG_INFINITY, kinks[0].0);
    }
    let mut k = 0;
    while k < kinks.len() {
        let t = kinks[k].0;
        while k < kinks.len() && kinks[k].0 == t {
            slope += kinks[k].1;
            k += 1;
        }
        if slope > eps {
            return (t, t);
        }
        if slope >= -eps {
            let next = kinks.get(k).map_or(f64::INFINITY, |n| n.0);
            return (t, next);
        }
    }
    unreachable!("slope ends at the total negative weight, which is non-negative")
}
