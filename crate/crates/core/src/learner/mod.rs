//! Regularized hinge-loss linear classifiers.
//!
//! The training objective over a (multi)set `S` is
//! `mean_{(x,y) in S} max(0, 1 - y(w.x + b)) + (lambda/2)|w|^2`,
//! with the regularizer counted once and the bias left unregularized.

mod bias;
mod smo;
mod subgradient;

use serde::{Deserialize, Serialize};

use crate::dataspace::{Dataset, Label, Matrix, Source};
use crate::{Error, Result};

pub use bias::optimal_bias;
pub use smo::{TrainOutcome, Trainer};
pub use subgradient::{min_norm_subgradient, SubgradientReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize, lambda: f64) -> Self {
        Self { w: vec![0.0; dim], b: 0.0, lambda }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        Label::from_score(self.score(x))
    }

    pub fn reg(&self) -> f64 {
        0.5 * self.lambda * dot(&self.w, &self.w)
    }

    /// Euclidean distance between `(w, b)` parameter vectors.
    pub fn distance(&self, other: &LinearModel) -> f64 {
        let dw: f64 = self.w.iter().zip(&other.w).map(|(a, b)| (a - b) * (a - b)).sum();
        (dw + (self.b - other.b).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|v| v.is_finite())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.w.len() {
            return Err(Error::DimensionMismatch { expected: self.w.len(), got: x.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Target duality gap, relative to `max(1, |objective|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Unused by the deterministic dual solver; kept so configs round-trip.
    pub seed: u64,
}

pub const SYNTHETIC_LAMBDA: f64 = 5e-4;
pub const ADULT_LAMBDA: f64 = 0.09;

impl TrainConfig {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, tolerance: 1e-8, max_iterations: 50_000_000, seed: 0 }
    }

    /// Default regularization for the dataset's source.
    pub fn for_dataset(ds: &Dataset) -> Self {
        match ds.source {
            Source::Synthetic(_) => Self::new(SYNTHETIC_LAMBDA),
            Source::Adult { .. } => Self::new(ADULT_LAMBDA),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "training needs lambda > 0, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParam("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// A poisoning point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poison {
    pub x: Vec<f64>,
    pub y: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean hinge loss, without the regularizer.
    pub mean_loss: f64,
    /// `y (w.x + b)` per point.
    pub margins: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn hinge(model: &LinearModel, x: &[f64], y: Label) -> f64 {
    (1.0 - y.sign() * model.score(x)).max(0.0)
}

/// Hinge loss of one point; `include_reg` adds `(lambda/2)|w|^2`.
pub fn hinge_loss(model: &LinearModel, x: &[f64], y: Label, include_reg: bool) -> Result<f64> {
    model.check_dim(x)?;
    let h = hinge(model, x, y);
    Ok(if include_reg { h + model.reg() } else { h })
}

/// Mean hinge loss over the points plus the regularizer, counted once.
pub fn dataset_loss(model: &LinearModel, x: &Matrix, y: &[Label]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("dataset_loss on an empty set"));
    }
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.dim() });
    }
    let total: f64 = x.rows().zip(y).map(|(r, l)| hinge(model, r, *l)).sum();
    Ok(total / y.len() as f64 + model.reg())
}

/// Training objective over the clean set plus a poison multiset.
pub fn poisoned_objective(model: &LinearModel, clean: &Dataset, poisons: &[Poison]) -> f64 {
    let total: f64 = clean.train_points().map(|(x, y)| hinge(model, x, y)).sum::<f64>()
        + poisons.iter().map(|p| hinge(model, &p.x, p.y)).sum::<f64>();
    total / (clean.n_train() + poisons.len()) as f64 + model.reg()
}

pub fn evaluate(model: &LinearModel, x: &Matrix, y: &[Label]) -> Result<Evaluation> {
    if y.is_empty() {
        return Err(Error::Empty("evaluate on an empty set"));
    }
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.dim() });
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut margins = Vec::with_capacity(y.len());
    for (r, l) in x.rows().zip(y) {
        let s = model.score(r);
        if Label::from_score(s) == *l {
            correct += 1;
        }
        let m = l.sign() * s;
        loss += (1.0 - m).max(0.0);
        margins.push(m);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / y.len() as f64,
        mean_loss: loss / y.len() as f64,
        margins,
    })
}

/// Fraction of the rows of `x` (at `idx`) that `model` assigns to `label`.
pub fn fraction_assigned(model: &LinearModel, x: &Matrix, idx: &[usize], label: Label) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&i| model.predict(x.row(i)) == label).count();
    hits as f64 / idx.len() as f64
}

/// The clean ERM together with its solver state, so later solves on
/// modified training sets (flipped labels, added poisons) start warm.
#[derive(Debug, Clone)]
pub struct CleanFit {
    pub model: LinearModel,
    pub objective: f64,
    trainer: Trainer,
}

impl CleanFit {
    pub fn new(clean: &Dataset, config: &TrainConfig) -> Result<Self> {
        let mut trainer = Trainer::new(&clean.train_x, &clean.train_y, config)?;
        let out = trainer.solve()?;
        Ok(Self { model: out.model, objective: out.objective, trainer })
    }

    /// A trainer holding the clean set and the clean optimum's duals.
    pub fn trainer(&self) -> Trainer {
        self.trainer.clone()
    }

    pub fn config(&self) -> &TrainConfig {
        self.trainer.config()
    }
}

/// Exact ERM on `clean.train ∪ poisons`.
pub fn train(clean: &Dataset, poisons: &[Poison], config: &TrainConfig) -> Result<LinearModel> {
    let mut t = Trainer::new(&clean.train_x, &clean.train_y, config)?;
    for p in poisons {
        t.add_point(&p.x, p.y)?;
    }
    Ok(t.solve()?.model)
}

/// Same optimum as [`train`], starting the solver from `warm`.
pub fn train_warm(
    clean: &Dataset,
    poisons: &[Poison],
    config: &TrainConfig,
    warm: &LinearModel,
) -> Result<LinearModel> {
    let mut t = Trainer::new(&clean.train_x, &clean.train_y, config)?;
    for p in poisons {
        t.add_point(&p.x, p.y)?;
    }
    t.warm_start_from(warm)?;
    Ok(t.solve()?.model)
}
