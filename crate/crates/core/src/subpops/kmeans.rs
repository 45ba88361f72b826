//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataspace::Matrix;
use crate::rng::stream;
use crate::{Error, Result};

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

impl KMeans {
    /// Index of the closest centroid; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance to the closest chosen center.
pub fn kmeans_pp_init(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.len();
    let mut centers = Matrix::with_capacity(x.dim(), k);
    let first = rng.random_range(0..n);
    centers.push(x.row(first)).expect("same dim");
    let mut d2: Vec<f64> = x.rows().map(|r| sq_dist(r, x.row(first))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(x.row(pick)).expect("same dim");
        for (i, r) in x.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centers
}

/// Lloyd iterations from the given centers until assignments stop changing.
/// An emptied cluster keeps its previous center.
pub fn lloyd(x: &Matrix, init: Matrix) -> KMeans {
    let k = init.len();
    let d = x.dim();
    let mut centroids = init;
    let mut assignments = vec![usize::MAX; x.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, r) in x.rows().enumerate() {
            let j = nearest(&centroids, r).0;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().enumerate() {
            let j = assignments[i];
            counts[j] += 1;
            for (s, v) in sums[j * d..(j + 1) * d].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut next = Matrix::with_capacity(d, k);
        for j in 0..k {
            if counts[j] == 0 {
                next.push(centroids.row(j)).expect("same dim");
            } else {
                let c: Vec<f64> = sums[j * d..(j + 1) * d].iter().map(|s| s / counts[j] as f64).collect();
                next.push(&c).expect("same dim");
            }
        }
        centroids = next;
    }
    let inertia = x.rows().zip(&assignments).map(|(r, &j)| sq_dist(r, centroids.row(j))).sum();
    KMeans { centroids, assignments, inertia }
}

/// Best-inertia result over `restarts` seeded runs.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if k == 0 || k > x.len() {
        return Err(Error::InvalidParam(format!("k = {k} with {} points", x.len())));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = stream(seed, 100 + r as u64);
        let run = lloyd(x, kmeans_pp_init(x, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn two_blobs_split_cleanly() {
        let pts: Vec<[f64; 2]> = (0..10)
            .map(|i| if i < 5 { [i as f64 * 0.01, 0.0] } else { [10.0 + i as f64 * 0.01, 0.0] })
            .collect();
        let x = Matrix::from_rows(2, &pts).unwrap();
        let km = kmeans(&x, 2, 1, 10).unwrap();
        assert!(km.assignments[..5].iter().all(|&a| a == km.assignments[0]));
        assert!(km.assignments[5..].iter().all(|&a| a == km.assignments[5]));
        assert_ne!(km.assignments[0], km.assignments[5]);
    }

    #[test]
    fn init_picks_distinct_points() {
        let x = Matrix::from_rows(1, &[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = kmeans_pp_init(&x, 4, &mut rng);
        let mut v: Vec<f64> = c.as_flat().to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_too_many_clusters() {
        let x = Matrix::from_rows(1, &[[0.0], [1.0]]).unwrap();
        assert!(kmeans(&x, 3, 0, 1).is_err());
    }
}
