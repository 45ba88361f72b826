//! ClusterMatch on synthetic data and FeatureMatch on the UCI Adult data,
//! with triviality under the clean model.
//!
//! cargo run --release --example subpopulations -- [adult.data adult.test]

use std::path::Path;

use subpop::dataspace::{generate_synthetic, load_adult, SyntheticParams};
use subpop::learner::{CleanFit, TrainConfig};
use subpop::subpops::{cluster_match, feature_match, is_trivial, DEFAULT_K, DEFAULT_R};

fn main() -> subpop::Result<()> {
    let ds = generate_synthetic(&SyntheticParams::new(1.5, 0.0, 0))?;
    let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds))?;
    for s in cluster_match(&ds, DEFAULT_K, 0)? {
        let trivial = if s.test_idx.is_empty() { None } else { Some(is_trivial(&s, &ds, &clean.model, DEFAULT_R)?) };
        println!("{:>4}: {:>3} train / {:>3} test points, trivial {:?}", s.id, s.train_idx.len(), s.test_idx.len(), trivial);
    }

    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [train, test] = args.as_slice() {
        let adult = load_adult(Path::new(train), Path::new(test), 0)?;
        let subpops = feature_match(&adult, 3);
        println!("{}: {} columns, {} FeatureMatch subpopulations", adult.tag(), adult.dim(), subpops.len());
        for s in subpops.iter().take(5) {
            println!("  {} ({:.2}% of train)", s.id, 100.0 * s.size_fraction);
        }
    }
    Ok(())
}
