//! Label-flip target models for one subpopulation, with their loss
//! difference to the clean model.

use subpop::dataspace::{generate_synthetic, SyntheticParams};
use subpop::learner::{CleanFit, TrainConfig};
use subpop::subpops::{cluster_match, is_trivial, DEFAULT_K, DEFAULT_R};
use subpop::targets::{generate_targets, loss_difference, TargetConfig};

fn main() -> subpop::Result<()> {
    let ds = generate_synthetic(&SyntheticParams::new(3.0, 0.0, 1))?;
    let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds))?;
    let s = cluster_match(&ds, DEFAULT_K, 1)?
        .into_iter()
        .find(|s| !s.test_idx.is_empty() && !is_trivial(s, &ds, &clean.model, DEFAULT_R).unwrap_or(true))
        .expect("a nontrivial cluster");
    println!("subpopulation {} with {} train points", s.id, s.train_idx.len());
    for t in generate_targets(&ds, &s, &clean, &TargetConfig::default())? {
        println!(
            "level {:.2}: subpop error {:.3}, loss difference {:.5}, origin {:?}",
            t.level,
            t.subpop_error,
            loss_difference(&t, &clean.model, &ds)?,
            t.origin
        );
    }
    Ok(())
}
