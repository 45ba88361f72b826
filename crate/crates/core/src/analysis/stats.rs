//! Pearson and Spearman correlation with mid-ranked ties.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `None` when either column is constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n: usize,
}

/// Pearson's r, or `None` for a constant column.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&mid_ranks(x), &mid_ranks(y))
}

/// Both coefficients over paired columns of at least three finite rows.
pub fn correlations(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::InvalidParam(format!("correlation needs at least 3 rows, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("correlation input must be finite".into()));
    }
    Ok(Correlation { pearson: pearson(x, y), spearman: spearman(x, y), n: x.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_negation() {
        let x = [1.0, 2.0, 5.0, 7.0];
        let c = correlations(&x, &x).unwrap();
        assert!((c.pearson.unwrap() - 1.0).abs() < 1e-12 && (c.spearman.unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = correlations(&x, &y).unwrap();
        assert!((c.pearson.unwrap() + 1.0).abs() < 1e-12 && (c.spearman.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_share_mid_rank() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn constant_column_is_flagged() {
        let c = correlations(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((c.pearson, c.spearman), (None, None));
        assert!(correlations(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
