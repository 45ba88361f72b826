//! Two-component Gaussian mixture in the plane with two knobs: class
//! separation `alpha` and label-noise fraction `beta`.
//!
//! All random draws depend on the seed only, so datasets sharing a seed share
//! their latent Gaussian samples, mixing matrices and noise order; `alpha`
//! moves the centers and `beta` selects a prefix of the noise order.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureMeta, Label, Matrix, Source};
use crate::rng::stream;
use crate::{Error, Result};

pub const ALPHA_GRID_LEN: usize = 13;
pub const BETA_GRID_LEN: usize = 11;
const GRID_SEEDS: u64 = 10;
const GRID_N_TRAIN: usize = 2000;
const GRID_N_TEST: usize = 1000;

const STREAM_GEOMETRY: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl SyntheticParams {
    pub fn new(alpha: f64, beta: f64, seed: u64) -> Self {
        Self { alpha, beta, seed, n_train: GRID_N_TRAIN, n_test: GRID_N_TEST }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=3.0).contains(&self.alpha) {
            return Err(Error::InvalidParam(format!("alpha {} outside [0, 3]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParam(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.n_train < 2 {
            return Err(Error::InvalidParam("n_train must be at least 2".into()));
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        format!("a{:.2}-b{:.2}-s{}", self.alpha, self.beta, self.seed)
    }
}

/// The full parameter grid: 13 alphas in [0, 3], 11 betas in [0, 1], seeds 0..10.
pub fn grid() -> Vec<SyntheticParams> {
    let mut out = Vec::with_capacity(ALPHA_GRID_LEN * BETA_GRID_LEN * GRID_SEEDS as usize);
    for a in 0..ALPHA_GRID_LEN {
        for b in 0..BETA_GRID_LEN {
            for seed in 0..GRID_SEEDS {
                out.push(SyntheticParams::new(a as f64 / 4.0, b as f64 / 10.0, seed));
            }
        }
    }
    out
}

/// Desk-scale grid: alpha in {0, 1.5, 3}, beta in {0, 0.5, 1}, seeds 0 and 1.
pub fn desk_grid() -> Vec<SyntheticParams> {
    let mut out = Vec::with_capacity(18);
    for alpha in [0.0, 1.5, 3.0] {
        for beta in [0.0, 0.5, 1.0] {
            for seed in 0..2 {
                out.push(SyntheticParams::new(alpha, beta, seed));
            }
        }
    }
    out
}

struct Geometry {
    direction: [f64; 2],
    mixing: [[[f64; 2]; 2]; 2],
}

fn geometry(seed: u64) -> Geometry {
    let mut rng = stream(seed, STREAM_GEOMETRY);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut mixing = [[[0.0; 2]; 2]; 2];
    for m in mixing.iter_mut() {
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..=1.0);
            }
        }
    }
    Geometry { direction: [theta.cos(), theta.sin()], mixing }
}

/// Component (0 = negative, 1 = positive) and latent standard-normal draw per row.
fn latent(seed: u64, n: usize) -> Vec<(usize, [f64; 2])> {
    let mut rng = stream(seed, STREAM_SAMPLES);
    let mut comps: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    comps.shuffle(&mut rng);
    comps
        .into_iter()
        .map(|c| {
            let z = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            (c, z)
        })
        .collect()
}

/// Noise order and the replacement label each row would receive if noised.
fn noise_plan(seed: u64, n: usize) -> (Vec<usize>, Vec<Label>) {
    let mut rng = stream(seed, STREAM_NOISE);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let labels = (0..n)
        .map(|_| if rng.random_bool(0.5) { Label::Pos } else { Label::Neg })
        .collect();
    (order, labels)
}

fn split(
    params: &SyntheticParams,
    geo: &Geometry,
    salt: u64,
    n: usize,
) -> (Vec<[f64; 2]>, Vec<Label>) {
    let base = params.seed.wrapping_mul(2).wrapping_add(salt);
    let samples = latent(base, n);
    let (order, replacement) = noise_plan(base, n);
    let noisy = (params.beta * n as f64).round() as usize;

    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for (comp, z) in &samples {
        let a = &geo.mixing[*comp];
        let sign = if *comp == 0 { -1.0 } else { 1.0 };
        let x = [
            a[0][0] * z[0] + a[0][1] * z[1] + sign * params.alpha * geo.direction[0],
            a[1][0] * z[0] + a[1][1] * z[1] + sign * params.alpha * geo.direction[1],
        ];
        xs.push(x);
        ys.push(if *comp == 0 { Label::Neg } else { Label::Pos });
    }
    for &i in order.iter().take(noisy) {
        ys[i] = replacement[i];
    }
    (xs, ys)
}

/// Generates one synthetic dataset; a pure function of `params`.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<Dataset> {
    params.validate()?;
    let geo = geometry(params.seed);
    let (train, train_y) = split(params, &geo, 0, params.n_train);
    let (test, test_y) = split(params, &geo, 1, params.n_test);

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for x in train.iter().chain(&test) {
        for j in 0..2 {
            lo[j] = lo[j].min(x[j]);
            hi[j] = hi[j].max(x[j]);
        }
    }
    let meta = (0..2).map(|j| FeatureMeta::continuous(format!("f{j}"), lo[j], hi[j])).collect();
    Dataset::new(
        Matrix::from_rows(2, &train)?,
        train_y,
        Matrix::from_rows(2, &test)?,
        test_y,
        meta,
        Source::Synthetic(*params),
    )
}

/// Mixture component of every training row (ignores label noise). Test helper
/// for the noise-free invariant.
#[cfg(test)]
fn train_components(params: &SyntheticParams) -> Vec<Label> {
    latent(params.seed.wrapping_mul(2), params.n_train)
        .into_iter()
        .map(|(c, _)| if c == 0 { Label::Neg } else { Label::Pos })
        .collect()
}
