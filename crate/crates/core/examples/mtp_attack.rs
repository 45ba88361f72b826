//! Model-targeted poisoning toward one target, printing the trace and the
//! certified lower bound.

use std::ops::ControlFlow;

use subpop::attacks::{mtp_attack_observed, FeasibleMode, FeasibleSet, MtpConfig, Phase};
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
    let targets = generate_targets(&ds, &s, &clean, &TargetConfig::default())?;
    let target = targets.first().expect("at least one target");
    let feasible = FeasibleSet::for_dataset(&ds, FeasibleMode::Box)?;
    let mut observer = |e: &subpop::attacks::TraceEvent| {
        if e.iter % 10 == 0 {
            println!("  poison {:>4}: subpop error {:.3}, clean accuracy {:.3}", e.iter, e.subpop_err, e.clean_acc);
        }
        ControlFlow::Continue(())
    };
    let rec = mtp_attack_observed(&ds, &s, target, &feasible, &clean, &MtpConfig::new(&ds, 0.5), Phase::Mtp1, &mut observer)?;
    println!(
        "{}: {} poisons ({:.2}% of the clean set), success {}, lower bound {}",
        rec.id,
        rec.n_poisons(),
        100.0 * rec.difficulty,
        rec.success,
        rec.lb
    );
    Ok(())
}
