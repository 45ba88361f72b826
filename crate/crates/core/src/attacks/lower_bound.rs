//! Certified lower bound on the number of poisons needed to make a target
//! model the poisoned ERM.
//!
//! With per-point loss `l(theta; x, y) = hinge + (lambda/2)|w|^2` and clean
//! total loss `L_c`, any poison set of size `n` inducing `target` satisfies
//! `L_c(target) - L_c(theta) <= n * max_{x,y} [l(theta; x, y) - l(target; x, y)]`
//! for every `theta`. Evaluating it at the current poisoned ERM gives the bound.

use serde::{Deserialize, Serialize};

use super::FeasibleSet;
use crate::dataspace::Dataset;
use crate::learner::{hinge, LinearModel};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: usize,
    pub numerator: f64,
    pub denominator: f64,
    /// Positive numerator with a non-positive denominator.
    pub degenerate: bool,
}

/// Clean-set total loss, regularizer included per point.
pub(crate) fn clean_total_loss(model: &LinearModel, ds: &Dataset) -> f64 {
    ds.train_points().map(|(x, y)| hinge(model, x, y)).sum::<f64>() + ds.n_train() as f64 * model.reg()
}

/// Lower bound from the current poisoned ERM `current`.
pub fn lower_bound(target: &LinearModel, current: &LinearModel, ds: &Dataset, feasible: &FeasibleSet) -> Result<LowerBound> {
    let gain = feasible.max_loss_difference(current, target)?.gain;
    Ok(bound_from(clean_total_loss(target, ds), clean_total_loss(current, ds), gain, current, target))
}

pub(crate) fn bound_from(
    target_loss: f64,
    current_loss: f64,
    hinge_gain: f64,
    current: &LinearModel,
    target: &LinearModel,
) -> LowerBound {
    let numerator = target_loss - current_loss;
    let denominator = hinge_gain + current.reg() - target.reg();
    if numerator <= 0.0 {
        return LowerBound { value: 0, numerator, denominator, degenerate: false };
    }
    if denominator <= 0.0 {
        return LowerBound { value: 0, numerator, denominator, degenerate: true };
    }
    // guard the ceiling against rounding just above an integer
    let ratio = numerator / denominator;
    let value = (ratio - 1e-9 * ratio.max(1.0)).ceil().max(0.0) as usize;
    LowerBound { value, numerator, denominator, degenerate: false }
}
