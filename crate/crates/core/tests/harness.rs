use std::fs;

use subpop::attacks::Phase;
use subpop::dataspace::{generate_synthetic, SyntheticParams};
use subpop::harness::{
    kkt_sizes, prepare_dataset, run_pipeline, sweep, DifficultyResult, PipelineConfig, Selection, Store, SweepConfig,
};
use subpop::learner::{train, CleanFit, TrainConfig};
use subpop::subpops::{cluster_match, is_trivial, Subpopulation, DEFAULT_R};
use subpop::targets::TargetConfig;
use subpop::Error;

fn quick_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.targets = TargetConfig { levels: vec![0.5, 0.75, 1.0], trials: 2, ..TargetConfig::default() };
    cfg.kkt.restarts = 2;
    cfg.kkt.steps = 200;
    cfg
}

fn first_nontrivial(alpha: f64, beta: f64) -> (subpop::dataspace::Dataset, CleanFit, Subpopulation) {
    let ds = generate_synthetic(&SyntheticParams::new(alpha, beta, 4)).unwrap();
    let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds)).unwrap();
    let s = cluster_match(&ds, 16, 4)
        .unwrap()
        .into_iter()
        .filter(|s| !s.test_idx.is_empty())
        .find(|s| !is_trivial(s, &ds, &clean.model, DEFAULT_R).unwrap())
        .unwrap();
    (ds, clean, s)
}

#[test]
fn pipeline_result_is_recomputable_from_its_records() {
    let (ds, clean, s) = first_nontrivial(1.5, 0.5);
    let out = run_pipeline(&ds, &s, &clean, &quick_config()).unwrap();
    let res = &out.result;
    assert!(!res.unresolved);
    let best = out.records.iter().filter(|r| r.success).map(|r| r.n_poisons()).min().unwrap();
    assert_eq!(res.n_poisons, Some(best));
    assert!(res.difficulty.unwrap() > 0.0);
    let winner = out.records.iter().find(|r| Some(&r.id) == res.best_attack.as_ref()).unwrap();
    assert_eq!(Some(winner.phase), res.best_phase);
    assert_eq!(winner.n_poisons(), best);
    let again = DifficultyResult::from_records(
        &res.dataset,
        &res.subpop,
        res.n_clean,
        res.n_targets,
        &out.records,
        [res.phases[0].errors, res.phases[1].errors, res.phases[2].errors],
        res.lb_checks.clone(),
        res.timed_out,
    );
    assert_eq!(&again, res);
    for c in &res.lb_checks {
        if c.converged {
            assert!(c.holds(), "{c:?}");
        }
    }
    let ids: std::collections::BTreeSet<_> = out.records.iter().map(|r| &r.id).collect();
    assert_eq!(ids.len(), out.records.len(), "attack ids are unique");
}

#[test]
fn persisted_poisons_replay_to_the_induced_model() {
    let (ds, clean, s) = first_nontrivial(3.0, 0.0);
    let out = run_pipeline(&ds, &s, &clean, &quick_config()).unwrap();
    for r in out.records.iter().filter(|r| r.phase != Phase::Kkt).take(4) {
        let replay = train(&ds, &r.poisons, clean.config()).unwrap();
        assert!(replay.distance(&r.induced) <= 1e-6, "{} off by {}", r.id, replay.distance(&r.induced));
    }
}

#[test]
fn trivial_subpopulation_is_rejected() {
    let ds = generate_synthetic(&SyntheticParams::new(0.0, 0.0, 1)).unwrap();
    let clean = CleanFit::new(&ds, &TrainConfig::for_dataset(&ds)).unwrap();
    let trivial = cluster_match(&ds, 16, 1)
        .unwrap()
        .into_iter()
        .find(|s| is_trivial(s, &ds, &clean.model, DEFAULT_R).unwrap_or(false))
        .unwrap();
    assert!(matches!(run_pipeline(&ds, &trivial, &clean, &quick_config()), Err(Error::Precondition(_))));
}

#[test]
fn kkt_interval_rules() {
    assert!(kkt_sizes(0, 1, 5).is_empty());
    assert!(kkt_sizes(1, 1, 5).is_empty());
    assert_eq!(kkt_sizes(0, 3, 5), vec![1, 2]);
    assert_eq!(kkt_sizes(100, 200, 5), vec![100, 120, 140, 160, 180]);
}

fn sweep_config(workers: usize) -> SweepConfig {
    SweepConfig { pipeline: quick_config(), workers, selection: Selection::Sample { per_dataset: 2, seed: 7 } }
}

fn store_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn sweep_is_resumable_and_independent_of_workers() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let ds = generate_synthetic(&SyntheticParams::new(3.0, 1.0, 2)).unwrap();
    prepare_dataset(&ds, &data.join(ds.tag()), 2, DEFAULT_R).unwrap();

    let serial = root.path().join("serial");
    let s1 = sweep(&data, &serial, &sweep_config(1), |_| {}).unwrap();
    assert_eq!((s1.scheduled, s1.completed, s1.failed), (2, 2, 0));

    let parallel = root.path().join("parallel");
    sweep(&data, &parallel, &sweep_config(2), |_| {}).unwrap();
    assert_eq!(store_bytes(&serial), store_bytes(&parallel));

    // drop the last committed pipeline as if the run had been killed
    let index = serial.join("index.jsonl");
    let text = fs::read_to_string(&index).unwrap();
    let kept: Vec<&str> = text.lines().take(1).collect();
    fs::write(&index, format!("{}\n", kept.join("\n"))).unwrap();
    let s2 = sweep(&data, &serial, &sweep_config(1), |_| {}).unwrap();
    assert_eq!((s2.resumed, s2.completed), (1, 1));
    assert_eq!(store_bytes(&serial), store_bytes(&parallel));

    let store = Store::open(&serial).unwrap();
    for e in store.entries() {
        let shard = store.read_shard(&e).unwrap();
        let recomputed = shard.records.iter().filter(|r| r.success).map(|r| r.n_poisons()).min();
        assert_eq!(recomputed, e.result.n_poisons);
    }
}

#[test]
fn corrupt_store_is_not_resumed() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let ds = generate_synthetic(&SyntheticParams::new(3.0, 1.0, 2)).unwrap();
    prepare_dataset(&ds, &data.join(ds.tag()), 2, DEFAULT_R).unwrap();
    let cfg = SweepConfig { selection: Selection::Sample { per_dataset: 1, seed: 7 }, ..sweep_config(1) };
    let out = root.path().join("store");
    sweep(&data, &out, &cfg, |_| {}).unwrap();
    let store = Store::open(&out).unwrap();
    let shard = out.join(&store.entries()[0].shard);
    let mut text = fs::read_to_string(&shard).unwrap();
    text.push_str("{not json\n");
    fs::write(&shard, text).unwrap();
    match sweep(&data, &out, &cfg, |_| {}) {
        Err(Error::CorruptStore(msg)) => assert!(msg.contains("line")),
        other => panic!("expected a corrupt-store error, got {other:?}"),
    }
}
