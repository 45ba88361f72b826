//! Subpopulation properties against attack difficulty: the factor table,
//! correlations and report files.

mod report;
mod stats;
pub mod svg;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::Phase;
use crate::dataspace::{read_source, Dataset, Label, Source};
use crate::harness::{load_workspace, workspace_dirs, IndexEntry, LbRegime, Store, Workspace};
use crate::learner::{evaluate, hinge_loss, LinearModel};
use crate::subpops::{Provenance, Subpopulation};
use crate::targets::{loss_difference, Origin, TargetModel};
use crate::{Error, Result};

pub use report::{emit_reports, semantic_pairs, ReportBundle, SemanticPair, CSV_SCHEMA_VERSION};
pub use stats::{correlations, mid_ranks, pearson, spearman, Correlation};

/// Subpopulations with this clean test accuracy and size in this band form
/// the ambient-positivity selection.
pub const AMBIENT_ACCURACY: f64 = 1.0;
pub const AMBIENT_SIZE: (f64, f64) = (0.01, 0.02);
/// Clean model accuracy separating accurate from inaccurate datasets.
pub const ACCURACY_SPLIT: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub dataset: String,
    pub subpop: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    /// Present only for resolved pipelines.
    pub difficulty: Option<f64>,
    pub n_poisons: Option<usize>,
    pub best_phase: Option<Phase>,
    pub min_lb: Option<usize>,
    pub lb_regime: Option<LbRegime>,
    /// Minimum loss difference over the label-flip targets.
    pub min_loss_difference: Option<f64>,
    /// Clean model accuracy and mean hinge loss on the subpopulation's
    /// training points.
    pub clean_subpop_accuracy: f64,
    pub clean_subpop_loss: f64,
    /// Clean model accuracy on the subpopulation's test points.
    pub clean_subpop_test_accuracy: f64,
    pub size_fraction: f64,
    pub ambient_positivity: Option<f64>,
    /// Clean model accuracy on the dataset's test split.
    pub clean_test_accuracy: f64,
}

impl FactorRow {
    pub fn is_synthetic(&self) -> bool {
        self.alpha.is_some()
    }

    pub fn in_ambient_selection(&self) -> bool {
        self.clean_subpop_test_accuracy >= AMBIENT_ACCURACY
            && self.size_fraction >= AMBIENT_SIZE.0
            && self.size_fraction <= AMBIENT_SIZE.1
    }
}

/// Share of positive labels among training points matching the predicate.
pub fn ambient_positivity(ds: &Dataset, provenance: &Provenance) -> Result<f64> {
    if !matches!(provenance, Provenance::Predicate { .. }) {
        return Err(Error::InvalidParam("ambient positivity needs a feature predicate".into()));
    }
    let (mut pos, mut all) = (0usize, 0usize);
    for (x, y) in ds.train_points() {
        if provenance.matches(x) {
            all += 1;
            if y == Label::Pos {
                pos += 1;
            }
        }
    }
    if all == 0 {
        return Err(Error::Empty("ambient subpopulation"));
    }
    Ok(pos as f64 / all as f64)
}

/// Minimum loss difference over label-flip targets reaching the objective.
pub fn min_loss_difference(targets: &[TargetModel], clean: &LinearModel, ds: &Dataset, r: f64) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for t in targets {
        if matches!(t.origin, Origin::LabelFlip { .. }) && t.subpop_error >= r {
            let ld = loss_difference(t, clean, ds)?;
            best = Some(best.map_or(ld, |b| b.min(ld)));
        }
    }
    Ok(best)
}

/// Factor row for one committed pipeline.
pub fn factor_row(ws: &Workspace, subpop: &Subpopulation, entry: &IndexEntry, targets: &[TargetModel], r: f64) -> Result<FactorRow> {
    let ds = &ws.dataset;
    let clean = &ws.clean.model;
    let (mut correct, mut loss) = (0usize, 0.0);
    for &i in &subpop.train_idx {
        let (x, y) = (ds.train_x.row(i), ds.train_y[i]);
        if clean.predict(x) == y {
            correct += 1;
        }
        loss += hinge_loss(clean, x, y, false)?;
    }
    let m = subpop.train_idx.len() as f64;
    let test_correct = subpop.test_idx.iter().filter(|&&i| clean.predict(ds.test_x.row(i)) == ds.test_y[i]).count();
    let (alpha, beta, seed) = match &ds.source {
        Source::Synthetic(p) => (Some(p.alpha), Some(p.beta), Some(p.seed)),
        Source::Adult { .. } => (None, None, None),
    };
    let res = &entry.result;
    Ok(FactorRow {
        dataset: ds.tag(),
        subpop: subpop.id.clone(),
        alpha,
        beta,
        seed,
        difficulty: res.difficulty,
        n_poisons: res.n_poisons,
        best_phase: res.best_phase,
        min_lb: res.min_lb,
        lb_regime: res.lb_regime,
        min_loss_difference: min_loss_difference(targets, clean, ds, r)?,
        clean_subpop_accuracy: correct as f64 / m,
        clean_subpop_loss: loss / m,
        clean_subpop_test_accuracy: if subpop.test_idx.is_empty() {
            0.0
        } else {
            test_correct as f64 / subpop.test_idx.len() as f64
        },
        size_fraction: subpop.size_fraction,
        ambient_positivity: match subpop.provenance {
            Provenance::Predicate { .. } => Some(ambient_positivity(ds, &subpop.provenance)?),
            Provenance::Cluster { .. } => None,
        },
        clean_test_accuracy: evaluate(clean, &ds.test_x, &ds.test_y)?.accuracy,
    })
}

/// Factor rows for every pipeline in the store, in store order. Datasets
/// are looked up by tag under `datasets`.
pub fn compute_factors(store: &Store, datasets: &Path) -> Result<Vec<FactorRow>> {
    let entries = store.entries();
    let r = store.meta().pipeline.r;
    let mut by_tag: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    for dir in workspace_dirs(datasets)? {
        by_tag.insert(read_source(&dir)?.tag(), dir);
    }
    let mut rows = Vec::with_capacity(entries.len());
    let mut loaded: Option<Workspace> = None;
    for e in &entries {
        if loaded.as_ref().is_none_or(|w| w.dataset.tag() != e.dataset) {
            let dir = by_tag
                .get(&e.dataset)
                .ok_or_else(|| Error::MissingFile(datasets.join(&e.dataset)))?;
            loaded = Some(load_workspace(dir)?);
        }
        let ws = loaded.as_ref().expect("loaded above");
        let subpop = &ws
            .manifest
            .get(e.ordinal)
            .filter(|m| m.subpop.id == e.subpop)
            .ok_or_else(|| Error::CorruptStore(format!("{} #{} not in the manifest", e.subpop, e.ordinal)))?
            .subpop;
        let shard = store.read_shard(e)?;
        if shard.targets.is_empty() && e.result.error.is_none() && !e.result.unresolved {
            return Err(Error::CorruptStore(format!("{}: resolved pipeline without targets", e.subpop)));
        }
        rows.push(factor_row(ws, subpop, e, &shard.targets, r)?);
    }
    Ok(rows)
}

/// Difficulty against one factor over resolved rows where the factor exists.
pub fn factor_correlation(rows: &[&FactorRow], factor: impl Fn(&FactorRow) -> Option<f64>) -> Result<Correlation> {
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter_map(|r| Some((factor(r)?, r.difficulty?))).unzip();
    correlations(&xs, &ys)
}

/// The four subpopulation factors by name.
pub fn factors() -> Vec<(&'static str, fn(&FactorRow) -> Option<f64>)> {
    vec![
        ("min_loss_difference", |r| r.min_loss_difference),
        ("clean_subpop_accuracy", |r| Some(r.clean_subpop_accuracy)),
        ("clean_subpop_loss", |r| Some(r.clean_subpop_loss)),
        ("size_fraction", |r| Some(r.size_fraction)),
    ]
}
