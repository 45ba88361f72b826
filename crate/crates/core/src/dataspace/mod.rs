//! Datasets: dense feature matrices with ±1 labels, a train/test split and
//! per-column metadata.

mod adult;
mod io;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adult::{load_adult, load_adult_with_layout, AdultLayout, ADULT_CATEGORICAL, ADULT_CONTINUOUS};
pub use io::{read_dataset, read_source, write_dataset, DATASET_FORMAT_VERSION};
pub use synthetic::{desk_grid, generate_synthetic, grid, SyntheticParams, ALPHA_GRID_LEN, BETA_GRID_LEN};

/// Binary label. Serialized as `-1` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }

    /// Label predicted for a raw score; a zero score goes to `Pos`.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            -1 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(format!("label must be -1 or 1, got {other}")),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut m = Self::with_capacity(dim, rows.len());
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidParam(format!(
                "flat buffer of length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * rows) }
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Matrix {
        let mut m = Matrix::with_capacity(self.dim, idx.len());
        for &i in idx {
            m.data.extend_from_slice(self.row(i));
        }
        m
    }
}

/// Column descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous { lo: f64, hi: f64 },
    /// One column of a one-hot block.
    Categorical { group: usize, group_name: String, category: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), kind: FeatureKind::Continuous { lo, hi } }
    }

    pub fn categorical(group: usize, group_name: &str, category: &str) -> Self {
        Self {
            name: format!("{group_name}={category}"),
            kind: FeatureKind::Categorical {
                group,
                group_name: group_name.to_string(),
                category: category.to_string(),
            },
        }
    }

    pub fn group(&self) -> Option<usize> {
        match &self.kind {
            FeatureKind::Categorical { group, .. } => Some(*group),
            FeatureKind::Continuous { .. } => None,
        }
    }
}

/// A one-hot block: its name and the (column, category) pairs it spans.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalGroup {
    pub id: usize,
    pub name: String,
    pub columns: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Source {
    Synthetic(SyntheticParams),
    Adult { seed: u64 },
}

impl Source {
    pub fn tag(&self) -> String {
        match self {
            Source::Synthetic(p) => p.tag(),
            Source::Adult { seed } => format!("adult-s{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train_x: Matrix,
    pub train_y: Vec<Label>,
    pub test_x: Matrix,
    pub test_y: Vec<Label>,
    pub feature_meta: Vec<FeatureMeta>,
    pub source: Source,
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    pub fn new(
        train_x: Matrix,
        train_y: Vec<Label>,
        test_x: Matrix,
        test_y: Vec<Label>,
        feature_meta: Vec<FeatureMeta>,
        source: Source,
    ) -> Result<Self> {
        let ds = Self { train_x, train_y, test_x, test_y, feature_meta, source };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.test_x.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.test_x.dim() });
        }
        if self.feature_meta.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.feature_meta.len() });
        }
        if self.train_x.len() != self.train_y.len() || self.test_x.len() != self.test_y.len() {
            return Err(Error::InvalidParam("row count and label count differ".into()));
        }
        for x in self.train_x.rows().chain(self.test_x.rows()) {
            for (j, (v, meta)) in x.iter().zip(&self.feature_meta).enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidParam(format!("non-finite value in column {j}")));
                }
                if let FeatureKind::Continuous { lo, hi } = meta.kind {
                    if *v < lo || *v > hi {
                        return Err(Error::InvalidParam(format!(
                            "value {v} in column {j} outside declared range [{lo}, {hi}]"
                        )));
                    }
                }
            }
        }
        for g in self.categorical_groups() {
            for x in self.train_x.rows().chain(self.test_x.rows()) {
                let s: f64 = g.columns.iter().map(|(c, _)| x[*c]).sum();
                if s != 1.0 || g.columns.iter().any(|(c, _)| x[*c] != 0.0 && x[*c] != 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "one-hot group {} does not sum to 1",
                        g.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.train_x.dim()
    }

    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_y.len()
    }

    /// One-hot blocks ordered by group id.
    pub fn categorical_groups(&self) -> Vec<CategoricalGroup> {
        let mut by_id: BTreeMap<usize, CategoricalGroup> = BTreeMap::new();
        for (col, meta) in self.feature_meta.iter().enumerate() {
            if let FeatureKind::Categorical { group, group_name, category } = &meta.kind {
                by_id
                    .entry(*group)
                    .or_insert_with(|| CategoricalGroup {
                        id: *group,
                        name: group_name.clone(),
                        columns: Vec::new(),
                    })
                    .columns
                    .push((col, category.clone()));
            }
        }
        by_id.into_values().collect()
    }

    /// Per-column [min, max] over the training split.
    pub fn train_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for x in self.train_x.rows() {
            for j in 0..d {
                lo[j] = lo[j].min(x[j]);
                hi[j] = hi[j].max(x[j]);
            }
        }
        (lo, hi)
    }

    pub fn train_points(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        self.train_x.rows().zip(self.train_y.iter().copied())
    }

    pub fn test_points(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        self.test_x.rows().zip(self.test_y.iter().copied())
    }

    /// A copy of the dataset with a different training label vector.
    pub fn with_train_labels(&self, labels: Vec<Label>) -> Result<Dataset> {
        if labels.len() != self.n_train() {
            return Err(Error::DimensionMismatch { expected: self.n_train(), got: labels.len() });
        }
        let mut ds = self.clone();
        ds.train_y = labels;
        Ok(ds)
    }

    /// Short identifier used by stores and reports.
    pub fn tag(&self) -> String {
        self.source.tag()
    }
}
