use std::path::Path;

use proptest::prelude::*;
use subpop::analysis::spearman;
use subpop::dataspace::{generate_synthetic, load_adult, read_dataset, write_dataset, FeatureKind, Label, SyntheticParams};

fn class_mean_distance(p: &SyntheticParams) -> f64 {
    let ds = generate_synthetic(p).unwrap();
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0.0; 2];
    for (x, y) in ds.train_points() {
        let k = usize::from(y == Label::Pos);
        counts[k] += 1.0;
        sums[k][0] += x[0];
        sums[k][1] += x[1];
    }
    let d0 = sums[1][0] / counts[1] - sums[0][0] / counts[0];
    let d1 = sums[1][1] / counts[1] - sums[0][1] / counts[0];
    (d0 * d0 + d1 * d1).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_a_pure_function_of_its_parameters(a in 0usize..13, b in 0usize..11, seed in 0u64..50) {
        let p = SyntheticParams::new(a as f64 / 4.0, b as f64 / 10.0, seed);
        let (x, y) = (generate_synthetic(&p).unwrap(), generate_synthetic(&p).unwrap());
        prop_assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&x, dir.path()).unwrap();
        prop_assert_eq!(read_dataset(dir.path()).unwrap(), x);
    }
}

#[test]
fn center_distance_grows_with_alpha() {
    let alphas: Vec<f64> = (0..13).map(|a| a as f64 / 4.0).collect();
    let means: Vec<f64> = alphas
        .iter()
        .map(|&a| (0..10).map(|s| class_mean_distance(&SyntheticParams::new(a, 0.0, s))).sum::<f64>() / 10.0)
        .collect();
    let rho = spearman(&alphas, &means).unwrap();
    assert!(rho >= 0.99, "rank correlation {rho} over {means:?}");
}

#[test]
fn prepared_adult_is_balanced_and_scaled_on_train_only() {
    let raw = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult");
    if !raw.join("adult.data").exists() {
        eprintln!("raw Adult files not found under {}, skipping", raw.display());
        return;
    }
    let ds = load_adult(&raw.join("adult.data"), &raw.join("adult.test"), 0).unwrap();
    let pos = ds.train_y.iter().filter(|l| **l == Label::Pos).count();
    assert_eq!(2 * pos, ds.n_train());
    for (j, meta) in ds.feature_meta.iter().enumerate() {
        let col: Vec<f64> = ds.train_x.rows().map(|r| r[j]).collect();
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        match meta.kind {
            FeatureKind::Continuous { .. } => assert!(lo == 0.0 && hi == 1.0, "{}: [{lo}, {hi}]", meta.name),
            FeatureKind::Categorical { .. } => assert!(col.iter().all(|v| *v == 0.0 || *v == 1.0)),
        }
    }
    // a different test split leaves the train encoding untouched
    let text = std::fs::read_to_string(raw.join("adult.test")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let dir = tempfile::tempdir().unwrap();
    let half = dir.path().join("adult.test");
    std::fs::write(&half, lines[..lines.len() / 2].join("\n") + "\n").unwrap();
    let other = load_adult(&raw.join("adult.data"), &half, 0).unwrap();
    assert_eq!(other.train_x, ds.train_x);
    assert_eq!(other.train_y, ds.train_y);
}
