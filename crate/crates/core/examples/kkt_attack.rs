//! KKT attack at a range of poison counts toward one target model.

use subpop::attacks::{kkt_attack, FeasibleMode, FeasibleSet, KktConfig};
use subpop::dataspace::{generate_synthetic, SyntheticParams};
use subpop::learner::{CleanFit, TrainConfig};
use subpop::subpops::{cluster_match, is_trivial, DEFAULT_K, DEFAULT_R};
use subpop::targets::{generate_targets, TargetConfig};

fn main() -> subpop::Result<()> {
    let ds = generate_synthetic(&SyntheticParams::new(1.5, 0.0, 0))?;
    let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds))?;
    let s = cluster_match(&ds, DEFAULT_K, 0)?
        .into_iter()
        .find(|s| !s.test_idx.is_empty() && !is_trivial(s, &ds, &clean.model, DEFAULT_R).unwrap_or(true))
        .expect("a nontrivial cluster");
    let target = generate_targets(&ds, &s, &clean, &TargetConfig::default())?.remove(0);
    let feasible = FeasibleSet::for_dataset(&ds, FeasibleMode::Box)?;
    for n in [10, 40, 160] {
        let rec = kkt_attack(&ds, &s, &target, n, &feasible, &clean, &KktConfig::default(), 0)?;
        let (pos, neg) = rec.poisons_by_label();
        println!(
            "n = {n:>3} ({pos} positive, {neg} negative): subpop error {:.3}, distance to target {:.4}, success {}",
            rec.subpop_error,
            rec.induced.distance(&target.model),
            rec.success
        );
    }
    Ok(())
}
