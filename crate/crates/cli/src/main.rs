use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subpop::analysis::{compute_factors, emit_reports, factor_correlation, factors, FactorRow};
use subpop::dataspace::{desk_grid, generate_synthetic, grid, load_adult, SyntheticParams};
use subpop::harness::{prepare_dataset, sweep, PipelineConfig, Selection, Store, SweepConfig};
use subpop::subpops::DEFAULT_R;
use subpop_service::{serve, ServiceConfig};

#[derive(Parser)]
#[command(name = "subpop", version, about = "Subpopulation poisoning difficulty measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic dataset with its subpopulation manifest.
    SynthGen {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic grid, one directory per dataset.
    SynthGrid {
        #[arg(long)]
        out: PathBuf,
        /// Only the 3x3x2 desk-scale grid.
        #[arg(long)]
        desk: bool,
    },
    /// Preprocess the raw UCI Adult files into a balanced dataset.
    AdultPrep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the attack pipeline on every attackable subpopulation.
    Sweep(SweepArgs),
    /// Compute factors and write the report bundle for a store.
    Analyze {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset root, when it moved since the sweep.
        #[arg(long)]
        datasets: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// MTP budget as a share of the clean training set.
    #[arg(long, default_value_t = 0.5)]
    budget_frac: f64,
    /// Label-flip trials per error level.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated target error levels.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    kkt_restarts: Option<usize>,
    #[arg(long)]
    kkt_steps: Option<usize>,
    /// Skip the target-convergence runs.
    #[arg(long)]
    no_converge: bool,
    /// Wall-clock cap per subpopulation, in seconds.
    #[arg(long)]
    time_cap: Option<f64>,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut p = PipelineConfig { budget_frac: self.budget_frac, time_cap_secs: self.time_cap, ..Default::default() };
        if let Some(t) = self.trials {
            p.targets.trials = t;
        }
        if let Some(l) = &self.levels {
            p.targets.levels = l.clone();
        }
        if let Some(r) = self.kkt_restarts {
            p.kkt.restarts = r;
        }
        if let Some(s) = self.kkt_steps {
            p.kkt.steps = s;
        }
        if self.no_converge {
            p.converge = None;
        }
        p
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    datasets: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Attack a seeded random sample of this many subpopulations per dataset.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "SUBPOP_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "SUBPOP_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "SUBPOP_DATASETS")]
    datasets: PathBuf,
    /// Sweep store exposed under /results.
    #[arg(long, env = "SUBPOP_STORE")]
    store: Option<PathBuf>,
    /// Where finished runs are kept.
    #[arg(long, env = "SUBPOP_RUNS", default_value = "runs")]
    runs: PathBuf,
    #[arg(long, env = "SUBPOP_WORKERS", default_value_t = 2)]
    workers: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

fn run(cmd: Command) -> AnyResult {
    match cmd {
        Command::SynthGen { alpha, beta, seed, out } => {
            synth_one(&SyntheticParams::new(alpha, beta, seed), &out)?;
        }
        Command::SynthGrid { out, desk } => {
            let params = if desk { desk_grid() } else { grid() };
            for (i, p) in params.iter().enumerate() {
                synth_one(p, &out.join(p.tag()))?;
                eprintln!("[{}/{}] {}", i + 1, params.len(), p.tag());
            }
        }
        Command::AdultPrep { train, test, seed, out } => {
            let ds = load_adult(&train, &test, seed)?;
            let manifest = prepare_dataset(&ds, &out, seed, DEFAULT_R)?;
            let attackable = manifest.iter().filter(|e| e.is_attackable()).count();
            println!(
                "{}: {} train / {} test rows, {} columns, {} subpopulations ({} attackable)",
                ds.tag(),
                ds.n_train(),
                ds.n_test(),
                ds.dim(),
                manifest.len(),
                attackable
            );
        }
        Command::Sweep(args) => {
            let config = SweepConfig {
                pipeline: args.pipeline.config(),
                workers: args.workers,
                selection: args.sample.map_or(Selection::All, |k| Selection::Sample { per_dataset: k, seed: args.sample_seed }),
            };
            let summary = sweep(&args.datasets, &args.out, &config, |e| {
                let d = e.result.difficulty.map_or("unresolved".to_string(), |d| format!("{:.4}", d));
                eprintln!("{} #{} {}: {d}", e.dataset, e.ordinal, e.subpop);
            })?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Analyze { store, out, datasets } => analyze(&store, &out, datasets.as_deref())?,
        Command::Serve(args) => {
            let config = ServiceConfig {
                addr: SocketAddr::new(args.host, args.port),
                datasets: args.datasets,
                store: args.store,
                runs: args.runs,
                workers: args.workers,
                pipeline: args.pipeline.config(),
            };
            tokio::runtime::Runtime::new()?.block_on(serve(config))?;
        }
    }
    Ok(())
}

fn synth_one(p: &SyntheticParams, out: &Path) -> AnyResult {
    let ds = generate_synthetic(p)?;
    let manifest = prepare_dataset(&ds, out, p.seed, DEFAULT_R)?;
    println!("{}: {} subpopulations, {} attackable", ds.tag(), manifest.len(), manifest.iter().filter(|e| e.is_attackable()).count());
    Ok(())
}

fn analyze(store_dir: &Path, out: &Path, datasets: Option<&Path>) -> AnyResult {
    let store = Store::open(store_dir)?;
    let datasets = datasets.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&store.meta().datasets));
    let rows = compute_factors(&store, &datasets)?;
    let bundle = emit_reports(&rows, &store, out)?;
    let resolved: Vec<&FactorRow> = rows.iter().filter(|r| r.difficulty.is_some()).collect();
    println!("{} pipelines, {} resolved, {} files in {}", rows.len(), resolved.len(), bundle.files.len(), out.display());
    for (name, f) in factors() {
        if let Ok(c) = factor_correlation(&resolved, f) {
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:+.3}"));
            println!("  {name:<24} spearman {} pearson {} (n = {})", fmt(c.spearman), fmt(c.pearson), c.n);
        }
    }
    Ok(())
}
