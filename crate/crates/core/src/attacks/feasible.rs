//! The set poisons may be drawn from, and exact maximization of the hinge
//! loss difference between two linear models over it.

use serde::{Deserialize, Serialize};

use crate::dataspace::{Dataset, FeatureKind, Label, Source};
use crate::learner::{dot, LinearModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibleMode {
    /// Every column ranges over its interval independently.
    Box,
    /// Categorical blocks must be valid one-hot vectors.
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub mode: FeasibleMode,
    /// Column indices of each one-hot block (used in `OneHot` mode).
    pub groups: Vec<Vec<usize>>,
}

/// A maximizer of `hinge(current) - hinge(target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestPoint {
    pub x: Vec<f64>,
    pub y: Label,
    pub gain: f64,
}

impl FeasibleSet {
    pub fn from_bounds(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidParam("feasible bounds need finite lo <= hi".into()));
        }
        Ok(Self { lo, hi, mode: FeasibleMode::Box, groups: Vec::new() })
    }

    /// Training bounding box for synthetic data, `[0,1]^d` for Adult.
    pub fn for_dataset(ds: &Dataset, mode: FeasibleMode) -> Result<Self> {
        let (lo, hi) = match ds.source {
            Source::Synthetic(_) => ds.train_bounds(),
            Source::Adult { .. } => (vec![0.0; ds.dim()], vec![1.0; ds.dim()]),
        };
        let mut set = Self::from_bounds(lo, hi)?;
        if mode == FeasibleMode::OneHot {
            set.mode = mode;
            set.groups = ds.categorical_groups().into_iter().map(|g| g.columns.into_iter().map(|c| c.0).collect()).collect();
            for g in &set.groups {
                for &c in g {
                    if !matches!(ds.feature_meta[c].kind, FeatureKind::Categorical { .. }) {
                        return Err(Error::InvalidParam("one-hot group over a continuous column".into()));
                    }
                    set.lo[c] = 0.0;
                    set.hi[c] = 1.0;
                }
            }
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let in_box = x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= l - tol && *v <= h + tol);
        in_box
            && (self.mode == FeasibleMode::Box
                || self.groups.iter().all(|g| {
                    g.iter().filter(|&&c| x[c] == 1.0).count() == 1 && g.iter().all(|&c| x[c] == 0.0 || x[c] == 1.0)
                }))
    }

    /// Columns free to move continuously.
    fn continuous_columns(&self) -> Vec<usize> {
        let mut grouped = vec![false; self.dim()];
        if self.mode == FeasibleMode::OneHot {
            for g in &self.groups {
                for &c in g {
                    grouped[c] = true;
                }
            }
        }
        (0..self.dim()).filter(|&j| !grouped[j]).collect()
    }

    /// Exact `max over feasible (x, y) of hinge(current; x, y) - hinge(target; x, y)`.
    pub fn max_loss_difference(&self, current: &LinearModel, target: &LinearModel) -> Result<BestPoint> {
        if current.dim() != self.dim() || target.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: current.dim() });
        }
        let cont = self.continuous_columns();
        let combos = self.category_combos();
        let mut best: Option<BestPoint> = None;
        for y in [Label::Pos, Label::Neg] {
            let s = y.sign();
            // u(x) = 1 - y f_current(x), v(x) = 1 - y f_target(x)
            let gu: Vec<f64> = current.w.iter().map(|w| -s * w).collect();
            let gv: Vec<f64> = target.w.iter().map(|w| -s * w).collect();
            let (au, av) = (1.0 - s * current.b, 1.0 - s * target.b);
            let cu: Vec<f64> = cont.iter().map(|&j| gu[j]).collect();
            let cv: Vec<f64> = cont.iter().map(|&j| gv[j]).collect();
            let lo: Vec<f64> = cont.iter().map(|&j| self.lo[j]).collect();
            let hi: Vec<f64> = cont.iter().map(|&j| self.hi[j]).collect();
            let diff: Vec<f64> = cu.iter().zip(&cv).map(|(a, b)| a - b).collect();
            let neg_cv: Vec<f64> = cv.iter().map(|v| -v).collect();
            for combo in &combos {
                let mut x = vec![0.0; self.dim()];
                for &c in combo {
                    x[c] = 1.0;
                }
                let v0 = av + dot(&gv, &x);
                // the four affine pieces of max(0,u) - max(0,v)
                let pieces = [
                    (&cu, &cv, -v0),        // v <= 0: u
                    (&diff, &neg_cv, v0),   // v >= 0: u - v
                    (&neg_cv, &cv, -v0),    // any point with v <= 0 scores >= 0
                    (&neg_cv, &neg_cv, v0), // v >= 0: -v
                ];
                for (obj, a, rhs) in pieces {
                    let Some(z) = lp_box_halfspace(obj, a, rhs, &lo, &hi) else {
                        continue;
                    };
                    for (k, &j) in cont.iter().enumerate() {
                        x[j] = z[k];
                    }
                    let gain = (au + dot(&gu, &x)).max(0.0) - (av + dot(&gv, &x)).max(0.0);
                    if best.as_ref().is_none_or(|b| gain > b.gain) {
                        best = Some(BestPoint { x: x.clone(), y, gain });
                    }
                }
            }
        }
        best.ok_or_else(|| Error::Infeasible("empty feasible set".into()))
    }

    /// Every one-hot choice (one column per group); a single empty choice in
    /// `Box` mode.
    fn category_combos(&self) -> Vec<Vec<usize>> {
        let mut combos = vec![Vec::new()];
        if self.mode == FeasibleMode::OneHot {
            for g in &self.groups {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        g.iter().map(move |&col| {
                            let mut next = c.clone();
                            next.push(col);
                            next
                        })
                    })
                    .collect();
            }
        }
        combos
    }

    /// Snaps each one-hot block to its largest entry and clamps to the box.
    pub fn project(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[j], self.hi[j]);
        }
        if self.mode == FeasibleMode::OneHot {
            for g in &self.groups {
                let top = g.iter().copied().max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a))).expect("non-empty");
                for &c in g {
                    x[c] = if c == top { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

/// `max c.x` over `{lo <= x <= hi, a.x <= rhs}` by the fractional-knapsack
/// argument; `None` when the region is empty.
pub(crate) fn lp_box_halfspace(c: &[f64], a: &[f64], rhs: f64, lo: &[f64], hi: &[f64]) -> Option<Vec<f64>> {
    let n = c.len();
    // unconstrained box optimum; ties in c broken toward smaller a.x
    let mut x: Vec<f64> = (0..n)
        .map(|j| {
            if c[j] > 0.0 || (c[j] == 0.0 && a[j] < 0.0) {
                hi[j]
            } else {
                lo[j]
            }
        })
        .collect();
    let mut excess = dot(a, &x) - rhs;
    if excess <= 0.0 {
        return Some(x);
    }
    // coordinates that can lower a.x, cheapest objective loss per unit first
    let mut moves: Vec<(f64, usize)> = (0..n)
        .filter(|&j| {
            let target = if a[j] > 0.0 { lo[j] } else { hi[j] };
            a[j] != 0.0 && x[j] != target
        })
        .map(|j| ((c[j] / a[j]).abs(), j))
        .collect();
    moves.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    for (_, j) in moves {
        let target = if a[j] > 0.0 { lo[j] } else { hi[j] };
        let room = a[j] * (x[j] - target);
        if room >= excess {
            x[j] -= excess / a[j];
            return Some(x);
        }
        x[j] = target;
        excess -= room;
    }
    // the last move may leave rounding dust; accept it
    if excess <= 1e-12 * (1.0 + rhs.abs()) {
        Some(x)
    } else {
        None
    }
}
