//! Subpopulations: ClusterMatch on continuous data and FeatureMatch on
//! categorical predicates. Every subpopulation holds negative-label points
//! only and targets the positive label.

mod kmeans;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataspace::{Dataset, Label};
use crate::learner::LinearModel;
use crate::{Error, Result};

pub use kmeans::{kmeans, kmeans_pp_init, lloyd, KMeans};

/// k used for synthetic datasets.
pub const DEFAULT_K: usize = 16;
pub const KMEANS_RESTARTS: usize = 10;
/// Attack success threshold on the subpopulation test error.
pub const DEFAULT_R: f64 = 0.5;

/// One `group = category` condition of a feature predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub group: usize,
    pub group_name: String,
    pub category: String,
    /// One-hot column that encodes the condition.
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Cluster { id: usize, centroid: Vec<f64> },
    Predicate { conditions: Vec<Condition> },
}

impl Provenance {
    /// Whether a row satisfies the predicate. Clusters have no row-level test
    /// without their centroid set, so they never match here.
    pub fn matches(&self, x: &[f64]) -> bool {
        match self {
            Provenance::Predicate { conditions } => conditions.iter().all(|c| x[c.column] == 1.0),
            Provenance::Cluster { .. } => false,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Provenance::Cluster { id, .. } => format!("cluster {id}"),
            Provenance::Predicate { conditions } => conditions
                .iter()
                .map(|c| format!("{}={}", c.group_name, c.category))
                .collect::<Vec<_>>()
                .join(" & "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subpopulation {
    /// Stable within a dataset: `c{cluster}` or the predicate text.
    pub id: String,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub y_t: Label,
    pub provenance: Provenance,
    pub size_fraction: f64,
}

impl Subpopulation {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.train_idx.is_empty() {
            return Err(Error::InvalidParam(format!("subpopulation {} has no train points", self.id)));
        }
        let bad_train = self.train_idx.iter().any(|&i| i >= ds.n_train() || ds.train_y[i] != Label::Neg);
        let bad_test = self.test_idx.iter().any(|&i| i >= ds.n_test() || ds.test_y[i] != Label::Neg);
        if bad_train || bad_test {
            return Err(Error::InvalidParam(format!(
                "subpopulation {} references a non-negative or out-of-range point",
                self.id
            )));
        }
        if let Provenance::Predicate { conditions } = &self.provenance {
            if conditions.is_empty() || conditions.len() > 3 {
                return Err(Error::InvalidParam(format!(
                    "predicate of {} has {} conditions",
                    self.id,
                    conditions.len()
                )));
            }
        }
        if self.y_t != Label::Pos {
            return Err(Error::InvalidParam("target label must be +1".into()));
        }
        Ok(())
    }
}

/// ClusterMatch: k-means on all training features; one subpopulation per
/// cluster holding its negative members. Test points join the cluster of
/// their nearest centroid.
pub fn cluster_match(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Subpopulation>> {
    let km = kmeans(&ds.train_x, k, seed, KMEANS_RESTARTS)?;
    let mut train: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in km.assignments.iter().enumerate() {
        if ds.train_y[i] == Label::Neg {
            train[a].push(i);
        }
    }
    let mut test: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, (x, y)) in ds.test_points().enumerate() {
        if y == Label::Neg {
            test[km.nearest(x)].push(i);
        }
    }
    let n = ds.n_train() as f64;
    Ok(train
        .into_iter()
        .zip(test)
        .enumerate()
        .filter(|(_, (tr, _))| !tr.is_empty())
        .map(|(id, (tr, te))| Subpopulation {
            id: format!("c{id:02}"),
            size_fraction: tr.len() as f64 / n,
            train_idx: tr,
            test_idx: te,
            y_t: Label::Pos,
            provenance: Provenance::Cluster { id, centroid: km.centroids.row(id).to_vec() },
        })
        .collect())
}

/// Category index per categorical group for one row.
fn categories(x: &[f64], groups: &[Vec<usize>]) -> Vec<usize> {
    groups
        .iter()
        .map(|cols| cols.iter().position(|&c| x[c] == 1.0).expect("validated one-hot"))
        .collect()
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for g in start..n {
            cur.push(g);
            out.push(cur.clone());
            if cur.len() < max {
                rec(g + 1, n, max, cur, out);
            }
            cur.pop();
        }
    }
    rec(0, n, max, &mut cur, &mut out);
    out.sort_by_key(|s| s.len());
    out
}

/// FeatureMatch: every conjunction of up to `max_features` categorical
/// conditions whose value combination occurs in both splits. Combinations
/// with no negative train point yield nothing.
pub fn feature_match(ds: &Dataset, max_features: usize) -> Vec<Subpopulation> {
    let groups = ds.categorical_groups();
    let cols: Vec<Vec<usize>> = groups.iter().map(|g| g.columns.iter().map(|c| c.0).collect()).collect();
    let train_cat: Vec<Vec<usize>> = ds.train_x.rows().map(|x| categories(x, &cols)).collect();
    let test_cat: Vec<Vec<usize>> = ds.test_x.rows().map(|x| categories(x, &cols)).collect();
    let n = ds.n_train() as f64;

    #[derive(Default)]
    struct Acc {
        train_any: bool,
        test_any: bool,
        train: Vec<usize>,
        test: Vec<usize>,
    }

    let mut out = Vec::new();
    for subset in subsets(groups.len(), max_features) {
        let mut combos: BTreeMap<Vec<usize>, Acc> = BTreeMap::new();
        for (i, cats) in train_cat.iter().enumerate() {
            let key: Vec<usize> = subset.iter().map(|&g| cats[g]).collect();
            let acc = combos.entry(key).or_default();
            acc.train_any = true;
            if ds.train_y[i] == Label::Neg {
                acc.train.push(i);
            }
        }
        for (i, cats) in test_cat.iter().enumerate() {
            let key: Vec<usize> = subset.iter().map(|&g| cats[g]).collect();
            let acc = combos.entry(key).or_default();
            acc.test_any = true;
            if ds.test_y[i] == Label::Neg {
                acc.test.push(i);
            }
        }
        for (key, acc) in combos {
            if !(acc.train_any && acc.test_any) || acc.train.is_empty() {
                continue;
            }
            let conditions: Vec<Condition> = subset
                .iter()
                .zip(&key)
                .map(|(&g, &c)| Condition {
                    group: groups[g].id,
                    group_name: groups[g].name.clone(),
                    category: groups[g].columns[c].1.clone(),
                    column: groups[g].columns[c].0,
                })
                .collect();
            let provenance = Provenance::Predicate { conditions };
            out.push(Subpopulation {
                id: provenance.describe(),
                size_fraction: acc.train.len() as f64 / n,
                train_idx: acc.train,
                test_idx: acc.test,
                y_t: Label::Pos,
                provenance,
            });
        }
    }
    out
}

/// Fraction of the subpopulation's test points that `model` assigns to `y_t`.
pub fn subpop_error(subpop: &Subpopulation, ds: &Dataset, model: &LinearModel) -> Result<f64> {
    if subpop.test_idx.is_empty() {
        return Err(Error::Untestable(format!("subpopulation {} has no test points", subpop.id)));
    }
    Ok(crate::learner::fraction_assigned(model, &ds.test_x, &subpop.test_idx, subpop.y_t))
}

/// True iff the clean model already assigns `y_t` to at least `r` of the
/// subpopulation's test points.
pub fn is_trivial(subpop: &Subpopulation, ds: &Dataset, clean: &LinearModel, r: f64) -> Result<bool> {
    Ok(subpop_error(subpop, ds, clean)? >= r)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dataset: String,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when the subpopulation has no test points.
    pub trivial: Option<bool>,
    #[serde(flatten)]
    pub subpop: Subpopulation,
}

impl ManifestEntry {
    pub fn new(ds: &Dataset, subpop: Subpopulation, clean: &LinearModel, r: f64) -> Self {
        let trivial = is_trivial(&subpop, ds, clean, r).ok();
        Self {
            dataset: ds.tag(),
            n_train: subpop.train_idx.len(),
            n_test: subpop.test_idx.len(),
            trivial,
            subpop,
        }
    }

    /// Eligible for attacks: testable and not already at the objective.
    pub fn is_attackable(&self) -> bool {
        self.trivial == Some(false)
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::{generate_synthetic, FeatureMeta, Matrix, Source, SyntheticParams};

    #[test]
    fn subsets_enumerates_up_to_three() {
        let s = subsets(6, 3);
        assert_eq!(s.len(), 6 + 15 + 20);
        assert!(s.windows(2).all(|w| w[0].len() <= w[1].len()));
    }

    #[test]
    fn clusters_partition_negatives() {
        let ds = generate_synthetic(&SyntheticParams::new(1.0, 0.2, 4)).unwrap();
        let subs = cluster_match(&ds, DEFAULT_K, 0).unwrap();
        let mut all: Vec<usize> = subs.iter().flat_map(|s| s.train_idx.clone()).collect();
        all.sort_unstable();
        let negs: Vec<usize> = (0..ds.n_train()).filter(|&i| ds.train_y[i] == Label::Neg).collect();
        assert_eq!(all, negs);
        for s in &subs {
            s.validate(&ds).unwrap();
        }
    }

    #[test]
    fn all_positive_cluster_is_dropped() {
        let x = Matrix::from_rows(1, &[[0.0], [0.1], [10.0], [10.1]]).unwrap();
        let y = vec![Label::Neg, Label::Neg, Label::Pos, Label::Pos];
        let ds = Dataset::new(
            x.clone(),
            y.clone(),
            x,
            y,
            vec![FeatureMeta::continuous("f0", 0.0, 10.1)],
            Source::Adult { seed: 0 },
        )
        .unwrap();
        let subs = cluster_match(&ds, 2, 0).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].train_idx, vec![0, 1]);
        assert_eq!(subs[0].test_idx, vec![0, 1]);
    }

    #[test]
    fn trivial_when_model_flips_everything() {
        let ds = generate_synthetic(&SyntheticParams::new(2.0, 0.0, 1)).unwrap();
        let subs = cluster_match(&ds, 4, 0).unwrap();
        let everything_pos = LinearModel::zeros(2, 1.0);
        for s in subs.iter().filter(|s| !s.test_idx.is_empty()) {
            assert!(is_trivial(s, &ds, &everything_pos, 0.5).unwrap());
        }
    }

    #[test]
    fn empty_test_side_is_untestable() {
        let ds = generate_synthetic(&SyntheticParams::new(2.0, 0.0, 1)).unwrap();
        let mut s = cluster_match(&ds, 4, 0).unwrap().remove(0);
        s.test_idx.clear();
        assert!(matches!(
            is_trivial(&s, &ds, &LinearModel::zeros(2, 1.0), 0.5),
            Err(Error::Untestable(_))
        ));
    }
}
