//! Dual SMO for the hinge-loss SVM with an unregularized bias and per-point
//! weights, specialized to the linear kernel: `w` is kept explicitly, so
//! gradients are recomputed on the fly and shrinking costs nothing to undo.
//!
//! With total weight `W = sum c_i`, the primal
//! `(lambda/2)|w|^2 + (1/W) sum c_i max(0, 1 - y_i(w.x_i + b))`
//! has the dual `max sum a_i - |w|^2/2` (times `lambda`) with
//! `w = sum a_i y_i x_i`, `sum a_i y_i = 0`, `0 <= a_i <= c_i / (lambda W)`.
//! Working-set selection follows Fan, Chen and Lin (second order).

use std::collections::HashMap;

use super::bias::optimal_bias_interval;
use super::{dot, LinearModel, TrainConfig};
use crate::dataspace::{Label, Matrix};
use crate::{Error, Result};

const TAU: f64 = 1e-12;
const INITIAL_EPS: f64 = 1e-6;
const FLOOR_EPS: f64 = 1e-14;
const POLISH_EPS: f64 = 1e-10;
const SNAP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// Weighted training set plus solver state that survives between solves.
///
/// Clean rows keep their positions; added points with identical features and
/// label are merged into one row with a larger weight.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    c: Vec<f64>,
    sq_norm: Vec<f64>,
    n_base: usize,
    merged: HashMap<(Vec<u64>, bool), usize>,
    /// Scaled dual variables `beta_i = a_i lambda W`, each in `[0, c_i]`.
    beta: Vec<f64>,
    last: Option<LinearModel>,
    /// Working set the last solve ended on plus rows touched since; empty
    /// means start from every row.
    hint: Vec<usize>,
}

impl Trainer {
    pub fn new(x: &Matrix, y: &[Label], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        let dim = x.dim();
        let n = y.len();
        let mut t = Self {
            config: *config,
            dim,
            x: x.as_flat().to_vec(),
            y: y.iter().map(|l| l.sign()).collect(),
            c: vec![1.0; n],
            sq_norm: x.rows().map(|r| dot(r, r)).collect(),
            n_base: n,
            merged: HashMap::new(),
            beta: vec![0.0; n],
            last: None,
            hint: Vec::new(),
        };
        t.balance_beta();
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total weight of the training multiset.
    pub fn total_weight(&self) -> f64 {
        self.c.iter().sum()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Adds one copy of `(x, y)`.
    pub fn add_point(&mut self, x: &[f64], y: Label) -> Result<()> {
        self.add_weighted(x, y, 1.0)
    }

    pub fn add_weighted(&mut self, x: &[f64], y: Label, weight: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if !(weight > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("poison must be finite with positive weight".into()));
        }
        let key = (x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y == Label::Pos);
        if let Some(&i) = self.merged.get(&key) {
            self.c[i] += weight;
            self.touch(i);
            return Ok(());
        }
        self.touch(self.y.len());
        self.merged.insert(key, self.y.len());
        self.x.extend_from_slice(x);
        self.y.push(y.sign());
        self.c.push(weight);
        self.sq_norm.push(dot(x, x));
        self.beta.push(0.0);
        Ok(())
    }

    /// Replaces the label of base (clean) row `i`, resetting its dual variable.
    pub fn set_base_label(&mut self, i: usize, y: Label) {
        assert!(i < self.n_base);
        if self.y[i] != y.sign() {
            self.y[i] = y.sign();
            self.beta[i] = 0.0;
            self.touch(i);
            self.absorb_residual();
        }
    }

    fn touch(&mut self, i: usize) {
        if !self.hint.is_empty() {
            self.hint.push(i);
        }
    }

    /// Re-seeds the dual variables from a primal model: margin violators at
    /// their upper bound, everything else at zero, then rebalanced.
    pub fn warm_start_from(&mut self, model: &LinearModel) -> Result<()> {
        if model.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: model.dim() });
        }
        for i in 0..self.y.len() {
            let m = self.y[i] * (dot(&model.w, self.row(i)) + model.b);
            self.beta[i] = if m < 1.0 { self.c[i] } else { 0.0 };
        }
        self.hint.clear();
        self.balance_beta();
        Ok(())
    }

    /// Scales down the heavier label side so that `sum beta_i y_i = 0`.
    fn balance_beta(&mut self) {
        let (mut pos, mut neg) = (0.0, 0.0);
        for (b, y) in self.beta.iter().zip(&self.y) {
            if *y > 0.0 {
                pos += b;
            } else {
                neg += b;
            }
        }
        if pos == neg {
            return;
        }
        let (scale, side) = if pos > neg { (neg / pos, 1.0) } else { (pos / neg, -1.0) };
        for (b, y) in self.beta.iter_mut().zip(&self.y) {
            if *y == side {
                *b *= scale;
            }
        }
        // exact cancellation may still miss by rounding; push the residual
        // onto the largest free-enough variable
        let resid: f64 = self.beta.iter().zip(&self.y).map(|(b, y)| b * y).sum();
        if resid != 0.0 {
            if let Some(i) = (0..self.beta.len())
                .filter(|&i| self.y[i] * resid > 0.0 && self.beta[i] >= resid.abs())
                .max_by(|&a, &b| self.beta[a].total_cmp(&self.beta[b]))
            {
                self.beta[i] -= resid.abs();
            }
        }
    }

    /// Restores `sum beta_i y_i = 0` by lowering as few duals as possible,
    /// starting with the points the last model classified most confidently.
    fn absorb_residual(&mut self) {
        let resid: f64 = self.beta.iter().zip(&self.y).map(|(b, y)| b * y).sum();
        if resid == 0.0 {
            return;
        }
        let mut heavy: Vec<(f64, usize)> = (0..self.y.len())
            .filter(|&i| self.y[i] * resid > 0.0 && self.beta[i] > 0.0)
            .map(|i| {
                let m = self.last.as_ref().map_or(0.0, |m| self.y[i] * (dot(&m.w, self.row(i)) + m.b));
                (m, i)
            })
            .collect();
        heavy.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = resid.abs();
        for (_, i) in heavy {
            if left <= 0.0 {
                break;
            }
            let take = self.beta[i].min(left);
            self.beta[i] -= take;
            left -= take;
            self.touch(i);
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_model(&self) -> Option<&LinearModel> {
        self.last.as_ref()
    }

    /// Solves to the configured duality gap, starting from the stored duals.
    pub fn solve(&mut self) -> Result<TrainOutcome> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        let lambda = self.config.lambda;
        let total_w: f64 = self.c.iter().sum();
        let scale = lambda * total_w;
        let cap: Vec<f64> = self.c.iter().map(|c| c / scale).collect();
        // rescaling by a new total weight must not leave bounded duals an ulp
        // inside their box, or every one of them looks free and violating
        let mut alpha: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.c)
            .zip(&cap)
            .map(|((b, c), cap)| if *b >= c * (1.0 - SNAP) { *cap } else { (b / scale).clamp(0.0, *cap) })
            .collect();
        // clamping can only trim rounding noise; restore the equality exactly
        restore_balance(&mut alpha, &self.y);

        let mut state = SmoState {
            dim: self.dim,
            x: &self.x,
            y: &self.y,
            sq_norm: &self.sq_norm,
            cap: &cap,
            alpha: &mut alpha,
            w: vec![0.0; self.dim],
            grad: vec![0.0; n],
        };
        state.recompute_w();
        let mut active = std::mem::take(&mut self.hint);
        active.sort_unstable();
        active.dedup();

        let mut eps = INITIAL_EPS;
        let mut iterations = 0usize;
        let mut best: Option<(LinearModel, f64, f64)>;
        loop {
            iterations += state.run(eps, self.config.max_iterations.saturating_sub(iterations), &mut active);
            state.recompute_w();
            let (model, primal, dual) = state.certify(lambda, total_w);
            let gap = (primal - dual).max(0.0);
            // keep tightening past the gap target so replays from other
            // starting points land on the same parameters
            let done = gap <= self.config.tolerance * primal.abs().max(1.0) && eps <= POLISH_EPS;
            best = Some((model, primal, gap));
            if done || eps <= FLOOR_EPS {
                break;
            }
            if iterations >= self.config.max_iterations {
                let (model, _, gap) = best.expect("set above");
                return Err(Error::NonConvergence { best: Box::new(model), gap });
            }
            eps = (eps * 1e-2).max(FLOOR_EPS);
        }
        let (model, objective, gap) = best.expect("loop runs at least once");
        if gap > self.config.tolerance * objective.abs().max(1.0) {
            return Err(Error::NonConvergence { best: Box::new(model), gap });
        }
        self.beta = alpha
            .iter()
            .zip(&cap)
            .zip(&self.c)
            .map(|((a, cap), c)| if a >= cap { *c } else { (a * scale).min(*c) })
            .collect();
        self.last = Some(model.clone());
        self.hint = active;
        Ok(TrainOutcome { model, objective, gap, iterations })
    }
}

fn restore_balance(alpha: &mut [f64], y: &[f64]) {
    let resid: f64 = alpha.iter().zip(y).map(|(a, y)| a * y).sum();
    if resid == 0.0 {
        return;
    }
    // move the residual onto variables on the heavy side that can absorb it
    let mut left = resid.abs();
    for i in 0..alpha.len() {
        if left <= 0.0 {
            break;
        }
        if y[i] * resid > 0.0 {
            let take = alpha[i].min(left);
            alpha[i] -= take;
            left -= take;
        }
    }
}

struct SmoState<'a> {
    dim: usize,
    x: &'a [f64],
    y: &'a [f64],
    sq_norm: &'a [f64],
    cap: &'a [f64],
    alpha: &'a mut [f64],
    w: Vec<f64>,
    grad: Vec<f64>,
}

impl SmoState<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    fn recompute_w(&mut self) {
        let mut w = vec![0.0; self.dim];
        for i in 0..self.y.len() {
            let a = self.alpha[i];
            if a != 0.0 {
                let coef = a * self.y[i];
                for (wj, xj) in w.iter_mut().zip(self.row(i)) {
                    *wj += coef * xj;
                }
            }
        }
        self.w = w;
    }

    #[inline]
    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.cap[t]
    }

    #[inline]
    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    fn refresh_grad(&mut self, active: &[usize]) {
        for &t in active {
            let g = self.y[t] * dot(&self.w, &self.x[t * self.dim..(t + 1) * self.dim]) - 1.0;
            self.grad[t] = g;
        }
    }

    /// Largest violations (`m(a)` over I_up, `-M(a)` over I_low) on `set`.
    fn violations(&self, set: &[usize]) -> (f64, f64) {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        for &t in set {
            let g = self.grad[t];
            if self.y[t] > 0.0 {
                if !self.at_upper(t) {
                    gmax = gmax.max(-g);
                }
                if !self.at_lower(t) {
                    gmax2 = gmax2.max(g);
                }
            } else {
                if !self.at_lower(t) {
                    gmax = gmax.max(g);
                }
                if !self.at_upper(t) {
                    gmax2 = gmax2.max(-g);
                }
            }
        }
        (gmax, gmax2)
    }

    /// Row `t` would extend the maximal violating pair of a set whose
    /// violations are `(gmax, gmax2)`.
    fn violates(&self, t: usize, gmax: f64, gmax2: f64, eps: f64) -> bool {
        let v = -self.y[t] * self.grad[t];
        let pos = self.y[t] > 0.0;
        let up = if pos { !self.at_upper(t) } else { !self.at_lower(t) };
        let low = if pos { !self.at_lower(t) } else { !self.at_upper(t) };
        (up && v + gmax2 >= eps) || (low && gmax - v >= eps)
    }

    fn be_shrunk(&self, t: usize, gmax1: f64, gmax2: f64) -> bool {
        let g = self.grad[t];
        if self.at_upper(t) {
            if self.y[t] > 0.0 {
                -g > gmax1
            } else {
                -g > gmax2
            }
        } else if self.at_lower(t) {
            if self.y[t] > 0.0 {
                g > gmax2
            } else {
                g > gmax1
            }
        } else {
            false
        }
    }

    /// SMO iterations until the maximal violation on the full set is below
    /// `eps` or the iteration budget runs out. Starts from the working set in
    /// `active` (every row when empty) and leaves the final one there.
    /// Returns iterations used.
    fn run(&mut self, eps: f64, budget: usize, active: &mut Vec<usize>) -> usize {
        let n = self.y.len();
        let all: Vec<usize> = (0..n).filter(|&t| self.cap[t] > 0.0).collect();
        active.retain(|&t| t < n && self.cap[t] > 0.0);
        if active.is_empty() {
            active.clone_from(&all);
        }
        // gradients are cheap to rebuild with an explicit w, so shrink often
        let shrink_every = n.clamp(1, 25);
        let mut counter = 1;
        let mut iters = 0usize;
        let mut since_w_refresh = 0usize;

        while iters < budget {
            self.refresh_grad(active);
            counter -= 1;
            if counter == 0 {
                counter = shrink_every;
                let (g1, g2) = self.violations(active);
                active.retain(|&t| !self.be_shrunk(t, g1, g2));
            }

            let Some((i, j)) = self.select(active, eps) else {
                // converged on the working set; check everything
                if active.len() == all.len() {
                    break;
                }
                self.recompute_w();
                self.refresh_grad(&all);
                let (g1, g2) = self.violations(&all);
                if g1 + g2 < eps {
                    break;
                }
                // grow by the rows that break optimality against the working
                // set's own violation bracket
                let (a1, a2) = self.violations(active);
                let mut member = vec![false; n];
                active.iter().for_each(|&t| member[t] = true);
                let grow: Vec<usize> =
                    all.iter().copied().filter(|&t| !member[t] && self.violates(t, a1, a2, eps)).collect();
                if grow.is_empty() {
                    active.clone_from(&all);
                } else {
                    active.extend(grow);
                    active.sort_unstable();
                }
                counter = shrink_every;
                continue;
            };
            self.update(i, j);
            iters += 1;
            since_w_refresh += 1;
            if since_w_refresh >= 20_000 {
                self.recompute_w();
                since_w_refresh = 0;
            }
        }
        iters
    }

    fn select(&self, active: &[usize], eps: f64) -> Option<(usize, usize)> {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for &t in active {
            let g = self.grad[t];
            if self.y[t] > 0.0 {
                if !self.at_upper(t) && -g >= gmax {
                    gmax = -g;
                    gmax_idx = Some(t);
                }
            } else if !self.at_lower(t) && g >= gmax {
                gmax = g;
                gmax_idx = Some(t);
            }
        }
        let i = gmax_idx?;
        let xi = self.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut obj_min = f64::INFINITY;
        for &t in active {
            let g = self.grad[t];
            let cand = if self.y[t] > 0.0 {
                if self.at_lower(t) {
                    continue;
                }
                gmax2 = gmax2.max(g);
                gmax + g
            } else {
                if self.at_upper(t) {
                    continue;
                }
                gmax2 = gmax2.max(-g);
                gmax - g
            };
            if cand > 0.0 {
                let kit = dot(xi, self.row(t));
                let quad = (self.sq_norm[i] + self.sq_norm[t] - 2.0 * kit).max(TAU);
                let obj = -(cand * cand) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    best = Some(t);
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        best.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ci, cj) = (self.cap[i], self.cap[j]);
        let (gi, gj) = (self.grad[i], self.grad[j]);
        let old_i = self.alpha[i];
        let old_j = self.alpha[j];
        let kij = dot(self.row(i), self.row(j));
        let qij = yi * yj * kij;
        let (mut ai, mut aj) = (old_i, old_j);

        if yi != yj {
            let quad = (self.sq_norm[i] + self.sq_norm[j] + 2.0 * qij).max(TAU);
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let quad = (self.sq_norm[i] + self.sq_norm[j] - 2.0 * qij).max(TAU);
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let di = (ai - old_i) * yi;
        let dj = (aj - old_j) * yj;
        for k in 0..self.dim {
            self.w[k] += di * self.x[i * self.dim + k] + dj * self.x[j * self.dim + k];
        }
    }

    /// Builds the primal model (exact bias for the current `w`) and returns
    /// it with the primal and dual objective values in the caller's scaling.
    fn certify(&mut self, lambda: f64, total_w: f64) -> (LinearModel, f64, f64) {
        let n = self.y.len();
        let all: Vec<usize> = (0..n).collect();
        self.refresh_grad(&all);
        // SMO's own bias estimate: average over free variables, else midpoint
        let (mut sum, mut cnt) = (0.0, 0usize);
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..n {
            if self.cap[t] <= 0.0 {
                continue;
            }
            let yg = self.y[t] * self.grad[t];
            if self.at_upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum += yg;
                cnt += 1;
            }
        }
        let rho = if cnt > 0 {
            sum / cnt as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        };
        let scores: Vec<f64> = (0..n).map(|t| dot(&self.w, self.row(t))).collect();
        let weights: Vec<f64> = self.cap.iter().map(|c| c * lambda * total_w).collect();
        // a bounded minimizer interval is collapsed to its midpoint so that
        // the bias depends on w alone, not on the path the duals took
        let b = match optimal_bias_interval(&scores, self.y, &weights) {
            (lo, hi) if lo.is_finite() && hi.is_finite() => 0.5 * (lo + hi),
            (lo, hi) => (-rho).clamp(lo, hi),
        };

        let wn = dot(&self.w, &self.w);
        let hinge: f64 = (0..n)
            .map(|t| weights[t] * (1.0 - self.y[t] * (scores[t] + b)).max(0.0))
            .sum::<f64>()
            / total_w;
        let primal = 0.5 * lambda * wn + hinge;
        let dual = lambda * (self.alpha.iter().sum::<f64>() - 0.5 * wn);
        (LinearModel { w: self.w.clone(), b, lambda }, primal, dual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64) -> TrainConfig {
        TrainConfig::new(lambda)
    }

    #[test]
    fn merges_duplicate_points() {
        let x = Matrix::from_rows(1, &[[1.0], [-1.0]]).unwrap();
        let mut t = Trainer::new(&x, &[Label::Pos, Label::Neg], &cfg(0.1)).unwrap();
        t.add_point(&[0.5], Label::Neg).unwrap();
        t.add_point(&[0.5], Label::Neg).unwrap();
        t.add_point(&[0.5], Label::Pos).unwrap();
        assert_eq!(t.y.len(), 4);
        assert_eq!(t.total_weight(), 5.0);
    }

    #[test]
    fn weights_equal_duplicates() {
        let x = Matrix::from_rows(1, &[[1.0], [-1.0], [0.2]]).unwrap();
        let y = [Label::Pos, Label::Neg, Label::Neg];
        let mut a = Trainer::new(&x, &y, &cfg(0.2)).unwrap();
        a.add_weighted(&[0.7], Label::Neg, 3.0).unwrap();
        let ma = a.solve().unwrap().model;
        let x2 = Matrix::from_rows(1, &[[1.0], [-1.0], [0.2], [0.7], [0.7], [0.7]]).unwrap();
        let y2 = [Label::Pos, Label::Neg, Label::Neg, Label::Neg, Label::Neg, Label::Neg];
        let mb = Trainer::new(&x2, &y2, &cfg(0.2)).unwrap().solve().unwrap().model;
        assert!(ma.distance(&mb) < 1e-6, "{ma:?} {mb:?}");
    }

    #[test]
    fn warm_solve_is_idempotent() {
        let x = Matrix::from_rows(2, &[[0.0, 1.0], [1.0, 0.5], [-1.0, 0.2], [0.3, -0.8], [0.9, 0.9]])
            .unwrap();
        let y = [Label::Pos, Label::Pos, Label::Neg, Label::Neg, Label::Neg];
        let mut t = Trainer::new(&x, &y, &cfg(0.05)).unwrap();
        let first = t.solve().unwrap();
        let again = t.solve().unwrap();
        assert!(first.model.distance(&again.model) < 1e-9);
        assert!(again.iterations <= 2);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let x = Matrix::from_rows(1, &[[1.0]]).unwrap();
        assert!(Trainer::new(&x, &[Label::Pos], &cfg(0.0)).is_err());
    }

    #[test]
    fn single_class_goes_to_bias() {
        let x = Matrix::from_rows(1, &[[1.0], [2.0]]).unwrap();
        let m = Trainer::new(&x, &[Label::Pos, Label::Pos], &cfg(0.1)).unwrap().solve().unwrap();
        assert!(m.model.w[0].abs() < 1e-12);
        assert!(m.model.b >= 1.0);
        assert!(m.objective.abs() < 1e-12);
    }
}
