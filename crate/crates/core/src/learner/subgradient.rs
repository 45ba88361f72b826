//! Minimum-norm element of the training objective's subdifferential.

use super::{dot, LinearModel};
use crate::dataspace::{Label, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientReport {
    pub norm: f64,
    /// Points treated as sitting on the hinge kink.
    pub kinks: usize,
}

/// Norm of the smallest subgradient of
/// `(lambda/2)|w|^2 + (1/W) sum c_i max(0, 1 - y_i(w.x_i + b))` at `model`.
///
/// Points with `|1 - y_i f(x_i)| <= kink_tol` contribute any fraction of
/// their hinge gradient; the best fractions are found by cyclic coordinate
/// descent on the resulting box-constrained least squares.
pub fn min_norm_subgradient(
    model: &LinearModel,
    x: &Matrix,
    y: &[Label],
    weights: Option<&[f64]>,
    kink_tol: f64,
) -> SubgradientReport {
    let d = model.dim();
    let total: f64 = weights.map_or(y.len() as f64, |w| w.iter().sum());
    let mut g: Vec<f64> = model.w.iter().map(|v| model.lambda * v).collect();
    g.push(0.0);
    let mut kinks: Vec<Vec<f64>> = Vec::new();
    for (i, (row, label)) in x.rows().zip(y).enumerate() {
        let c = weights.map_or(1.0, |w| w[i]);
        let s = label.sign();
        let slack = 1.0 - s * (dot(&model.w, row) + model.b);
        let coef = -c * s / total;
        if slack.abs() <= kink_tol {
            let mut v: Vec<f64> = row.iter().map(|r| coef * r).collect();
            v.push(coef);
            kinks.push(v);
        } else if slack > 0.0 {
            for k in 0..d {
                g[k] += coef * row[k];
            }
            g[d] += coef;
        }
    }
    let mut theta = vec![0.0; kinks.len()];
    let norms: Vec<f64> = kinks.iter().map(|v| dot(v, v)).collect();
    for _sweep in 0..100_000 {
        let mut moved = 0.0f64;
        for (k, v) in kinks.iter().enumerate() {
            if norms[k] == 0.0 {
                continue;
            }
            let step = dot(&g, v) / norms[k];
            let next = (theta[k] - step).clamp(0.0, 1.0);
            let delta = next - theta[k];
            if delta != 0.0 {
                for (gj, vj) in g.iter_mut().zip(v) {
                    *gj += delta * vj;
                }
                theta[k] = next;
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    SubgradientReport { norm: dot(&g, &g).sqrt(), kinks: kinks.len() }
}
