//! KKT attack: `n+` copies of `(x+, +1)` and `n-` copies of `(x-, -1)` placed
//! so that the target parameters nearly satisfy the stationarity condition of
//! the poisoned objective.
//!
//! At the target `(w, b)`, with `M = |S_c| + n`, the residual is
//! `r = (1/M) (G_c + sum_k t_k g_k - n+ (x+, 1) + n- (x-, 1)) + lambda (w, 0)`
//! where `G_c` sums the clean margin violators' subgradients `-y (x, 1)`,
//! `g_k` are the subgradients of clean points sitting on the hinge kink and
//! `t_k in [0, 1]`. Poisons are kept in the box and in the target's
//! margin-violating half-space so that their subgradient is the active one.
//! `|r|^2` is convex in `(x+, x-, t)` and is minimized by accelerated
//! projected gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttackRecord, FeasibleMode, FeasibleSet, Phase, StopReason};
use crate::dataspace::{Dataset, Label};
use crate::learner::{dot, CleanFit, LinearModel, Poison};
use crate::rng::stream;
use crate::subpops::{subpop_error, Subpopulation, DEFAULT_R};
use crate::targets::TargetModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktConfig {
    pub r: f64,
    pub steps: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Clean points with `|1 - y f(x)|` below this count as on the kink.
    pub kink_tol: f64,
}

impl Default for KktConfig {
    fn default() -> Self {
        Self { r: DEFAULT_R, steps: 500, restarts: 10, seed: 0, kink_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub n_pos: usize,
    pub n_neg: usize,
    pub x_pos: Vec<f64>,
    pub x_neg: Vec<f64>,
    /// Norm of the stationarity residual.
    pub residual: f64,
}

/// Values of `n+` tried for a poison budget `n`.
pub fn kkt_plus_grid(n: usize) -> Vec<usize> {
    if n <= 20 {
        return (0..=n).collect();
    }
    let mut g: Vec<usize> = (0..=20).map(|k| ((k * n) as f64 / 20.0).round() as usize).collect();
    g.dedup();
    g
}

/// Precomputed clean-side quantities at the target.
struct Stationarity {
    /// `G_c / 1` plus `lambda M (w, 0)`, before dividing by `M`.
    fixed: Vec<f64>,
    kinks: Vec<Vec<f64>>,
    m: f64,
}

impl Stationarity {
    fn new(ds: &Dataset, target: &LinearModel, n: usize, kink_tol: f64) -> Self {
        let d = ds.dim();
        let m = (ds.n_train() + n) as f64;
        let mut fixed = vec![0.0; d + 1];
        let mut kinks = Vec::new();
        for (x, y) in ds.train_points() {
            let s = y.sign();
            let slack = 1.0 - s * target.score(x);
            if slack.abs() <= kink_tol {
                let mut g: Vec<f64> = x.iter().map(|v| -s * v).collect();
                g.push(-s);
                kinks.push(g);
            } else if slack > 0.0 {
                for (f, v) in fixed.iter_mut().zip(x) {
                    *f -= s * v;
                }
                fixed[d] -= s;
            }
        }
        for (f, w) in fixed.iter_mut().zip(&target.w) {
            *f += target.lambda * m * w;
        }
        Self { fixed, kinks, m }
    }

    fn residual(&self, np: f64, nn: f64, xp: &[f64], xn: &[f64], t: &[f64]) -> Vec<f64> {
        let d = xp.len();
        let mut r = self.fixed.clone();
        for (k, g) in self.kinks.iter().enumerate() {
            for (ri, gi) in r.iter_mut().zip(g) {
                *ri += t[k] * gi;
            }
        }
        for j in 0..d {
            r[j] += -np * xp[j] + nn * xn[j];
        }
        r[d] += -np + nn;
        r.iter_mut().for_each(|v| *v /= self.m);
        r
    }
}

/// Euclidean projection onto `{lo <= x <= hi, a.x <= rhs}` by bisection on
/// the half-space multiplier.
fn project_box_halfspace(z: &[f64], a: &[f64], rhs: f64, lo: &[f64], hi: &[f64]) -> Option<Vec<f64>> {
    let clip = |mu: f64| -> Vec<f64> {
        z.iter().zip(a).zip(lo.iter().zip(hi)).map(|((zi, ai), (l, h))| (zi - mu * ai).clamp(*l, *h)).collect()
    };
    let x0 = clip(0.0);
    if dot(a, &x0) <= rhs {
        return Some(x0);
    }
    let min_ax: f64 = a.iter().zip(lo.iter().zip(hi)).map(|(ai, (l, h))| if *ai > 0.0 { ai * l } else { ai * h }).sum();
    if min_ax > rhs + 1e-12 * (1.0 + rhs.abs()) {
        return None;
    }
    let mut hi_mu = 1.0;
    while dot(a, &clip(hi_mu)) > rhs {
        hi_mu *= 2.0;
        if hi_mu > 1e300 {
            break;
        }
    }
    let mut lo_mu = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo_mu + hi_mu);
        if dot(a, &clip(mid)) > rhs {
            lo_mu = mid;
        } else {
            hi_mu = mid;
        }
        if hi_mu - lo_mu <= 1e-15 * hi_mu {
            break;
        }
    }
    Some(clip(hi_mu))
}

/// Minimizes the stationarity residual for a fixed split `n_pos + n_neg`.
fn solve_split(
    st: &Stationarity,
    target: &LinearModel,
    n_pos: usize,
    n_neg: usize,
    feasible: &FeasibleSet,
    config: &KktConfig,
    seed: u64,
) -> Result<KktSolution> {
    let d = target.dim();
    let (lo, hi) = (&feasible.lo, &feasible.hi);
    // x+ needs w.x + b <= 1, x- needs -(w.x + b) <= 1
    let neg_w: Vec<f64> = target.w.iter().map(|v| -v).collect();
    let proj_pos = |z: &[f64]| project_box_halfspace(z, &target.w, 1.0 - target.b, lo, hi);
    let proj_neg = |z: &[f64]| project_box_halfspace(z, &neg_w, 1.0 + target.b, lo, hi);
    let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    if n_pos > 0 && proj_pos(&center).is_none() {
        return Err(Error::Infeasible("no box point violates the target margin with label +1".into()));
    }
    if n_neg > 0 && proj_neg(&center).is_none() {
        return Err(Error::Infeasible("no box point violates the target margin with label -1".into()));
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let kink_sq: f64 = st.kinks.iter().map(|g| dot(g, g)).sum();
    let lip = (np * np + nn * nn + kink_sq) / (st.m * st.m);
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let k = st.kinks.len();

    let mut best: Option<KktSolution> = None;
    let mut rng = stream(seed, 0);
    for _ in 0..config.restarts.max(1) {
        let rand_point = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            lo.iter().zip(hi).map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l }).collect()
        };
        let mut xp = if n_pos > 0 { proj_pos(&rand_point(&mut rng)).expect("feasible") } else { center.clone() };
        let mut xn = if n_neg > 0 { proj_neg(&rand_point(&mut rng)).expect("feasible") } else { center.clone() };
        let mut t: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=1.0)).collect();
        let (mut yp, mut yn, mut yt) = (xp.clone(), xn.clone(), t.clone());
        let mut momentum = 1.0f64;
        for _ in 0..config.steps {
            let r = st.residual(np, nn, &yp, &yn, &yt);
            let scale = 1.0 / st.m;
            let next_p = if n_pos > 0 {
                let z: Vec<f64> = (0..d).map(|j| yp[j] + step * scale * np * r[j]).collect();
                proj_pos(&z).expect("feasible")
            } else {
                xp.clone()
            };
            let next_n = if n_neg > 0 {
                let z: Vec<f64> = (0..d).map(|j| yn[j] - step * scale * nn * r[j]).collect();
                proj_neg(&z).expect("feasible")
            } else {
                xn.clone()
            };
            let next_t: Vec<f64> =
                (0..k).map(|i| (yt[i] - step * scale * dot(&st.kinks[i], &r)).clamp(0.0, 1.0)).collect();
            let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_m;
            yp = next_p.iter().zip(&xp).map(|(a, b)| a + beta * (a - b)).collect();
            yn = next_n.iter().zip(&xn).map(|(a, b)| a + beta * (a - b)).collect();
            yt = next_t.iter().zip(&t).map(|(a, b)| a + beta * (a - b)).collect();
            xp = next_p;
            xn = next_n;
            t = next_t;
            momentum = next_m;
        }
        if feasible.mode == FeasibleMode::OneHot {
            feasible.project(&mut xp);
            feasible.project(&mut xn);
        }
        let r = st.residual(np, nn, &xp, &xn, &t);
        let residual = dot(&r, &r).sqrt();
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(KktSolution { n_pos, n_neg, x_pos: xp, x_neg: xn, residual });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Best split over the `n+` grid for a poison budget `n`.
pub fn kkt_solve(
    ds: &Dataset,
    target: &LinearModel,
    n: usize,
    feasible: &FeasibleSet,
    config: &KktConfig,
) -> Result<KktSolution> {
    let st = Stationarity::new(ds, target, n, config.kink_tol);
    let mut best: Option<KktSolution> = None;
    let mut last_err = None;
    for (k, n_pos) in kkt_plus_grid(n).into_iter().enumerate() {
        let seed = crate::rng::derive_seed(config.seed, k as u64);
        match solve_split(&st, target, n_pos, n - n_pos, feasible, config, seed) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.residual < b.residual) {
                    best = Some(sol);
                }
            }
            Err(e @ Error::Infeasible(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Infeasible("empty n+ grid".into())))
}

/// Runs the KKT attack with exactly `n` poisons. `lb` is carried into the
/// record from the MTP run that suggested the size.
#[allow(clippy::too_many_arguments)]
pub fn kkt_attack(
    ds: &Dataset,
    subpop: &Subpopulation,
    target: &TargetModel,
    n: usize,
    feasible: &FeasibleSet,
    clean: &CleanFit,
    config: &KktConfig,
    lb: usize,
) -> Result<AttackRecord> {
    if n == 0 {
        return Err(Error::InvalidParam("KKT attack needs n >= 1".into()));
    }
    let sol = kkt_solve(ds, &target.model, n, feasible, config)?;
    let mut trainer = clean.trainer();
    if sol.n_pos > 0 {
        trainer.add_weighted(&sol.x_pos, Label::Pos, sol.n_pos as f64)?;
    }
    if sol.n_neg > 0 {
        trainer.add_weighted(&sol.x_neg, Label::Neg, sol.n_neg as f64)?;
    }
    let induced = trainer.solve()?.model;
    let mut poisons = vec![Poison { x: sol.x_pos.clone(), y: Label::Pos }; sol.n_pos];
    poisons.extend(vec![Poison { x: sol.x_neg.clone(), y: Label::Neg }; sol.n_neg]);
    let err = subpop_error(subpop, ds, &induced)?;
    let success = err >= config.r;
    Ok(AttackRecord {
        id: format!("{}/{}/KKT/L{:.2}/n{n}", ds.tag(), subpop.id, target.level),
        dataset: ds.tag(),
        subpop: subpop.id.clone(),
        phase: Phase::Kkt,
        target: target.clone(),
        difficulty: n as f64 / ds.n_train() as f64,
        induced,
        lb,
        lb_degenerate: false,
        success,
        converged: false,
        subpop_error: err,
        n_clean: ds.n_train(),
        poisons,
        trace: Vec::new(),
        stop: if success { StopReason::Success } else { StopReason::Fixed },
    })
}
