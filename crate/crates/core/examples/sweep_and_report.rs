//! Prepares two small datasets, sweeps a sample of their subpopulations into
//! a store, then computes factors, correlations and the report bundle.
//!
//! cargo run --release --example sweep_and_report -- <work dir>

use std::path::PathBuf;

use subpop::analysis::{compute_factors, emit_reports, factor_correlation, factors};
use subpop::dataspace::{generate_synthetic, SyntheticParams};
use subpop::harness::{prepare_dataset, sweep, PipelineConfig, Selection, Store, SweepConfig};
use subpop::subpops::DEFAULT_R;

fn main() -> subpop::Result<()> {
    let work = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("subpop-sweep"));
    let data = work.join("datasets");
    for p in [SyntheticParams::new(1.5, 0.0, 0), SyntheticParams::new(3.0, 0.5, 0)] {
        prepare_dataset(&generate_synthetic(&p)?, &data.join(p.tag()), p.seed, DEFAULT_R)?;
    }
    let mut pipeline = PipelineConfig::default();
    pipeline.targets.trials = 2;
    let config = SweepConfig { pipeline, workers: 2, selection: Selection::Sample { per_dataset: 4, seed: 0 } };
    let summary = sweep(&data, &work.join("store"), &config, |e| {
        println!("{} {}: {:?}", e.dataset, e.subpop, e.result.difficulty);
    })?;
    println!("{summary:?}");

    let store = Store::open(&work.join("store"))?;
    let rows = compute_factors(&store, &data)?;
    let resolved: Vec<_> = rows.iter().filter(|r| r.difficulty.is_some()).collect();
    for (name, f) in factors() {
        let c = factor_correlation(&resolved, f)?;
        println!("{name:<24} spearman {:?}", c.spearman);
    }
    let bundle = emit_reports(&rows, &store, &work.join("report"))?;
    println!("{} report files in {}", bundle.files.len(), bundle.dir.display());
    Ok(())
}
