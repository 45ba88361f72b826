//! Target models for subpopulation attacks, produced by label flipping and
//! filed by the subpopulation error they reach.
//!
//! For a subpopulation `P`, flip fractions `f` run over the level grid. Each
//! `(f, trial)` flips a seeded random `f`-share of `P`'s training points to
//! the target label and retrains. A candidate counts for level `e` when
//! `f >= e` and its subpopulation test error is at least `e`; each level keeps
//! its lowest clean-loss candidate. Levels nobody reached are retried by
//! escalation: flip all of `P` plus growing rings of the nearest negative
//! training points outside `P`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataspace::{Dataset, Label};
use crate::learner::{dataset_loss, CleanFit, LinearModel};
use crate::rng::stream;
use crate::subpops::{subpop_error, Subpopulation, DEFAULT_R};
use crate::{Error, Result};

/// Error levels 0.50, 0.55, ..., 1.00.
pub fn default_levels() -> Vec<f64> {
    (0..=10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

const LEVEL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub levels: Vec<f64>,
    pub trials: usize,
    /// Escalation rounds for levels the flip sweep misses. Round `k` first
    /// adds `2^k - 1` target-labelled copies of every flipped subpopulation
    /// point; if levels are still missing, round `k` of the second stage flips
    /// `ceil(|P| / 2) * (2^k - 1)` outside neighbors.
    pub escalation_steps: usize,
    pub seed: u64,
    pub r: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { levels: default_levels(), trials: 5, escalation_steps: 12, seed: 0, r: DEFAULT_R }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    LabelFlip {
        /// Share of the subpopulation flipped.
        fraction: f64,
        trial: usize,
        /// Seed of the flip-set draw.
        seed: u64,
        /// Outside neighbors flipped in addition to the subpopulation.
        escalated: usize,
        /// Extra copies of every flipped subpopulation point added with the
        /// target label.
        #[serde(default)]
        replicas: usize,
    },
    Induced { attack_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    /// Error level this model is filed under.
    pub level: f64,
    pub model: LinearModel,
    pub subpop_error: f64,
    pub clean_loss: f64,
    pub origin: Origin,
}

/// `dataset_loss(target) - dataset_loss(clean)` on the clean training set.
pub fn loss_difference(target: &TargetModel, clean: &LinearModel, ds: &Dataset) -> Result<f64> {
    Ok(dataset_loss(&target.model, &ds.train_x, &ds.train_y)? - dataset_loss(clean, &ds.train_x, &ds.train_y)?)
}

#[derive(Clone)]
struct Candidate {
    fraction: f64,
    model: LinearModel,
    subpop_error: f64,
    clean_loss: f64,
    origin: Origin,
}

fn retrain_flipped(
    ds: &Dataset,
    subpop: &Subpopulation,
    clean: &CleanFit,
    flips: &[usize],
    replicas: usize,
    fraction: f64,
    origin: Origin,
) -> Result<Candidate> {
    let mut t = clean.trainer();
    for &i in flips {
        t.set_base_label(i, subpop.y_t);
    }
    if replicas > 0 {
        for &i in &subpop.train_idx {
            t.add_weighted(ds.train_x.row(i), subpop.y_t, replicas as f64)?;
        }
    }
    let model = t.solve()?.model;
    Ok(Candidate {
        fraction,
        subpop_error: subpop_error(subpop, ds, &model)?,
        clean_loss: dataset_loss(&model, &ds.train_x, &ds.train_y)?,
        model,
        origin,
    })
}

/// Negative training points outside `subpop`, nearest first to its mean.
fn outside_neighbors(ds: &Dataset, subpop: &Subpopulation) -> Vec<usize> {
    let d = ds.dim();
    let mut mean = vec![0.0; d];
    for &i in &subpop.train_idx {
        for (m, v) in mean.iter_mut().zip(ds.train_x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= subpop.train_idx.len() as f64);
    let inside: std::collections::HashSet<usize> = subpop.train_idx.iter().copied().collect();
    let mut out: Vec<(f64, usize)> = (0..ds.n_train())
        .filter(|i| ds.train_y[*i] == Label::Neg && !inside.contains(i))
        .map(|i| {
            let dist: f64 = ds.train_x.row(i).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            (dist, i)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, i)| i).collect()
}

fn file_candidate(best: &mut [Option<Candidate>], levels: &[f64], cand: Candidate) {
    for (k, &e) in levels.iter().enumerate() {
        if cand.fraction + LEVEL_SLACK < e || cand.subpop_error + LEVEL_SLACK < e {
            continue;
        }
        if best[k].as_ref().is_none_or(|b| cand.clean_loss < b.clean_loss) {
            best[k] = Some(Candidate { model: cand.model.clone(), origin: cand.origin.clone(), ..cand });
        }
    }
}

/// Label-flip target models for a nontrivial subpopulation, at most one per
/// level. Levels no candidate reaches are left out.
pub fn generate_targets(
    ds: &Dataset,
    subpop: &Subpopulation,
    clean: &CleanFit,
    config: &TargetConfig,
) -> Result<Vec<TargetModel>> {
    if subpop_error(subpop, ds, &clean.model)? >= config.r {
        return Err(Error::Precondition(format!(
            "subpopulation {} is trivial: the clean model already meets the objective",
            subpop.id
        )));
    }
    if config.levels.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidParam("levels must lie in [0, 1]".into()));
    }
    let m = subpop.train_idx.len();
    let mut best: Vec<Option<Candidate>> = config.levels.iter().map(|_| None).collect();
    let mut seen_sizes = Vec::new();

    for (k, &f) in config.levels.iter().enumerate() {
        let count = ((f * m as f64 - LEVEL_SLACK).ceil() as usize).clamp(1, m);
        // several levels can round to the same count on small subpopulations
        if seen_sizes.contains(&count) {
            continue;
        }
        seen_sizes.push(count);
        let trials = if count == m { 1 } else { config.trials.max(1) };
        for trial in 0..trials {
            let seed = crate::rng::derive_seed(config.seed, (k * 1000 + trial) as u64);
            let mut rng = stream(seed, 0);
            let flips: Vec<usize> =
                sample(&mut rng, m, count).into_iter().map(|j| subpop.train_idx[j]).collect();
            let fraction = count as f64 / m as f64;
            let origin = Origin::LabelFlip { fraction, trial, seed, escalated: 0, replicas: 0 };
            let cand = retrain_flipped(ds, subpop, clean, &flips, 0, fraction, origin)?;
            file_candidate(&mut best, &config.levels, cand);
        }
    }

    let n = ds.n_train();
    for step in 1..=config.escalation_steps {
        if best.iter().all(Option::is_some) {
            break;
        }
        let replicas = (1usize << step.min(40)) - 1;
        let origin = Origin::LabelFlip { fraction: 1.0, trial: 0, seed: config.seed, escalated: 0, replicas };
        let cand = retrain_flipped(ds, subpop, clean, &subpop.train_idx, replicas, 1.0, origin)?;
        file_candidate(&mut best, &config.levels, cand);
        if replicas.saturating_mul(m) >= n {
            break;
        }
    }

    if best.iter().any(Option::is_none) && config.escalation_steps > 0 {
        let ring = m.div_ceil(2).max(1);
        let neighbors = outside_neighbors(ds, subpop);
        for step in 1..=config.escalation_steps {
            let extra = ring.saturating_mul((1usize << step.min(40)) - 1).min(neighbors.len());
            let mut flips = subpop.train_idx.clone();
            flips.extend_from_slice(&neighbors[..extra]);
            let origin = Origin::LabelFlip { fraction: 1.0, trial: 0, seed: config.seed, escalated: extra, replicas: 0 };
            let cand = retrain_flipped(ds, subpop, clean, &flips, 0, 1.0, origin)?;
            file_candidate(&mut best, &config.levels, cand);
            if best.iter().all(Option::is_some) || extra == neighbors.len() {
                break;
            }
        }
    }

    Ok(config
        .levels
        .iter()
        .zip(best)
        .filter_map(|(&level, c)| {
            c.map(|c| TargetModel {
                level,
                model: c.model,
                subpop_error: c.subpop_error,
                clean_loss: c.clean_loss,
                origin: c.origin,
            })
        })
        .collect())
}

/// One line of a target manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub dataset: String,
    pub subpop: String,
    #[serde(flatten)]
    pub target: TargetModel,
}

pub fn write_targets(path: &Path, entries: &[TargetEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetEntry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
