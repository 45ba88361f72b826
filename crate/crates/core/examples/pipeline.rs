//! The three-phase difficulty pipeline on one subpopulation.

use subpop::dataspace::{generate_synthetic, SyntheticParams};
use subpop::harness::{run_pipeline, PipelineConfig};
use subpop::learner::{CleanFit, TrainConfig};
use subpop::subpops::{cluster_match, is_trivial, DEFAULT_K, DEFAULT_R};

fn main() -> subpop::Result<()> {
    let ds = generate_synthetic(&SyntheticParams::new(3.0, 0.0, 0))?;
    let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds))?;
    let s = cluster_match(&ds, DEFAULT_K, 0)?
        .into_iter()
        .find(|s| !s.test_idx.is_empty() && !is_trivial(s, &ds, &clean.model, DEFAULT_R).unwrap_or(true))
        .expect("a nontrivial cluster");
    let out = run_pipeline(&ds, &s, &clean, &PipelineConfig::default())?;
    let r = &out.result;
    println!("{} {}: {} targets, {} attack records", r.dataset, r.subpop, r.n_targets, out.records.len());
    for p in &r.phases {
        println!("  {:<5} {} attempts, {} successes, fewest poisons {:?}", p.phase.as_str(), p.attempts, p.successes, p.min_poisons);
    }
    println!("difficulty {:?} via {:?}, min lower bound {:?} ({:?})", r.difficulty, r.best_phase, r.min_lb, r.lb_regime);
    Ok(())
}
