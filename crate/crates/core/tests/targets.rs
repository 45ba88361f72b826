use proptest::prelude::*;
use rand::seq::index::sample;
use subpop::dataspace::{generate_synthetic, Label, SyntheticParams};
use subpop::learner::{dataset_loss, train, CleanFit, Poison, TrainConfig};
use subpop::rng::stream;
use subpop::subpops::{cluster_match, is_trivial, subpop_error, DEFAULT_R};
use subpop::targets::{generate_targets, loss_difference, Origin, TargetConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn targets_are_filed_consistently(seed in 0u64..100, alpha in 0.5..3.0f64) {
        let mut p = SyntheticParams::new(alpha, 0.0, seed);
        p.n_train = 300;
        p.n_test = 150;
        let ds = generate_synthetic(&p).unwrap();
        let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds)).unwrap();
        let config = TargetConfig { trials: 2, ..TargetConfig::default() };
        let clean_loss = dataset_loss(&clean.model, &ds.train_x, &ds.train_y).unwrap();
        let subpops = cluster_match(&ds, 6, seed).unwrap();
        let Some(s) = subpops
            .iter()
            .find(|s| !s.test_idx.is_empty() && !is_trivial(s, &ds, &clean.model, DEFAULT_R).unwrap())
        else {
            return Ok(());
        };
        let targets = generate_targets(&ds, s, &clean, &config).unwrap();
        prop_assert!(targets.len() <= config.levels.len());
        for w in targets.windows(2) {
            prop_assert!(w[0].level < w[1].level);
            // a candidate reaching the higher level also competed at the lower one
            prop_assert!(w[0].clean_loss <= w[1].clean_loss + 1e-12);
        }
        for t in &targets {
            let err = subpop_error(s, &ds, &t.model).unwrap();
            prop_assert_eq!(err, t.subpop_error);
            prop_assert!(err >= t.level - 1e-12);
            prop_assert!(t.clean_loss.is_finite());
            let ld = loss_difference(t, &clean.model, &ds).unwrap();
            let direct = dataset_loss(&t.model, &ds.train_x, &ds.train_y).unwrap() - clean_loss;
            prop_assert!((ld - direct).abs() < 1e-12);
            prop_assert!(ld >= -1e-9);

            // replay the flip from the recorded origin
            if let Origin::LabelFlip { fraction, seed, escalated: 0, replicas, .. } = t.origin {
                let m = s.train_idx.len();
                let count = (fraction * m as f64).round() as usize;
                let flips: Vec<usize> = if count == m {
                    s.train_idx.clone()
                } else {
                    sample(&mut stream(seed, 0), m, count).into_iter().map(|j| s.train_idx[j]).collect()
                };
                let labels: Vec<Label> =
                    (0..ds.n_train()).map(|i| if flips.contains(&i) { s.y_t } else { ds.train_y[i] }).collect();
                let extra: Vec<Poison> = s
                    .train_idx
                    .iter()
                    .flat_map(|&i| std::iter::repeat_n(Poison { x: ds.train_x.row(i).to_vec(), y: s.y_t }, replicas))
                    .collect();
                let replay = train(&ds.with_train_labels(labels).unwrap(), &extra, clean.config()).unwrap();
                prop_assert!(replay.distance(&t.model) <= 1e-6, "{:?} off by {}", t.origin, replay.distance(&t.model));
            }
        }
    }
}
