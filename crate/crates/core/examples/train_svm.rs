//! Trains the regularized hinge-loss classifier, checks optimality and shows
//! how poisons move the optimum.

use subpop::dataspace::{generate_synthetic, Label, SyntheticParams};
use subpop::learner::{evaluate, min_norm_subgradient, poisoned_objective, train, CleanFit, Poison, TrainConfig};

fn main() -> subpop::Result<()> {
    let ds = generate_synthetic(&SyntheticParams::new(1.5, 0.1, 0))?;
    let config = TrainConfig::for_dataset(&ds);
    let clean = CleanFit::new(&ds, &config)?;
    let m = &clean.model;
    println!("lambda {}: w = {:?}, b = {:.4}, objective {:.6}", config.lambda, m.w, m.b, clean.objective);
    println!("test accuracy {:.4}", evaluate(m, &ds.test_x, &ds.test_y)?.accuracy);
    let sub = min_norm_subgradient(m, &ds.train_x, &ds.train_y, None, 1e-7);
    println!("smallest subgradient norm {:.2e} with {} points on the hinge", sub.norm, sub.kinks);

    let poisons = vec![Poison { x: vec![0.0, 0.0], y: Label::Pos }; 50];
    let poisoned = train(&ds, &poisons, &config)?;
    println!(
        "50 positive poisons at the origin: b moves {:.4} -> {:.4}, objective {:.6}",
        m.b,
        poisoned.b,
        poisoned_objective(&poisoned, &ds, &poisons)
    );
    Ok(())
}
