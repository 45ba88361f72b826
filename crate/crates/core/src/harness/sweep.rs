//! Dataset workspaces and the parallel sweep over their subpopulations.
//!
//! A workspace is a dataset directory (see `dataspace::write_dataset`) plus
//! a `subpops.jsonl` manifest. The sweep runs `run_pipeline` on every
//! attackable manifest entry of every workspace under a root directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::store::{IndexEntry, Store, StoreMeta};
use super::{build_manifest, default_subpops, run_pipeline, DifficultyResult, PipelineConfig, PipelineOutput};
use crate::dataspace::{read_dataset, write_dataset, Dataset};
use crate::learner::{CleanFit, TrainConfig};
use crate::rng::stream;
use crate::subpops::{read_manifest, write_manifest, ManifestEntry};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "subpops.jsonl";

pub struct Workspace {
    pub dir: PathBuf,
    pub dataset: Dataset,
    pub clean: CleanFit,
    pub manifest: Vec<ManifestEntry>,
}

impl Workspace {
    /// Manifest ordinals eligible for attacks.
    pub fn attackable(&self) -> Vec<usize> {
        self.manifest.iter().enumerate().filter(|(_, e)| e.is_attackable()).map(|(i, _)| i).collect()
    }
}

/// Writes a dataset with its default subpopulations and manifest to `dir`.
pub fn prepare_dataset(ds: &Dataset, dir: &Path, seed: u64, r: f64) -> Result<Vec<ManifestEntry>> {
    write_dataset(ds, dir)?;
    let subpops = default_subpops(ds, seed)?;
    let (_, manifest) = build_manifest(ds, subpops, r)?;
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_workspace(dir: &Path) -> Result<Workspace> {
    let dataset = read_dataset(dir)?;
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let clean = CleanFit::new(&dataset, &TrainConfig::for_dataset(&dataset))?;
    for e in &manifest {
        if e.dataset != dataset.tag() {
            return Err(Error::InvalidParam(format!(
                "manifest in {} lists dataset {}, expected {}",
                dir.display(),
                e.dataset,
                dataset.tag()
            )));
        }
    }
    Ok(Workspace { dir: dir.to_path_buf(), dataset, clean, manifest })
}

/// Dataset directories directly under `root`, sorted by name. `root` itself
/// counts when it is a dataset directory.
pub fn workspace_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.exists() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    if root.join("meta.txt").exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.txt").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Empty("no dataset directories"));
    }
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub pipeline: PipelineConfig,
    pub workers: usize,
    pub selection: Selection,
}

/// Which attackable subpopulations a sweep runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    All,
    /// A seeded random sample of this many per dataset.
    Sample { per_dataset: usize, seed: u64 },
    /// Explicit manifest ordinals per dataset tag; other datasets are skipped.
    Listed(BTreeMap<String, Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scheduled: usize,
    /// Already committed by an earlier run.
    pub resumed: usize,
    pub completed: usize,
    /// Pipelines that ended in an error, recorded as unresolved.
    pub failed: usize,
}

/// Manifest ordinals to run for one workspace.
pub fn select_jobs(ws: &Workspace, selection: &Selection) -> Vec<usize> {
    let all = ws.attackable();
    match selection {
        Selection::Sample { per_dataset: k, seed } if *k < all.len() => {
            let mut rng = stream(*seed, 0);
            let mut pick: Vec<usize> = sample(&mut rng, all.len(), *k).into_iter().map(|i| all[i]).collect();
            pick.sort_unstable();
            pick
        }
        Selection::Listed(lists) => {
            let mut pick: Vec<usize> = lists
                .get(&ws.dataset.tag())
                .map(|l| l.iter().copied().filter(|o| ws.manifest.get(*o).is_some_and(|e| e.is_attackable())).collect())
                .unwrap_or_default();
            pick.sort_unstable();
            pick.dedup();
            pick
        }
        _ => all,
    }
}

/// Runs every selected pipeline not yet in the store, then writes the index
/// in canonical order. `progress` sees each commit.
pub fn sweep(
    datasets: &Path,
    store_dir: &Path,
    config: &SweepConfig,
    progress: impl Fn(&IndexEntry) + Sync,
) -> Result<SweepSummary> {
    let store = Store::create_or_resume(store_dir, StoreMeta::new(datasets, config.pipeline.clone(), config.selection.clone()))?;
    let workspaces: Vec<Workspace> = workspace_dirs(datasets)?.iter().map(|d| load_workspace(d)).collect::<Result<_>>()?;
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    let mut summary = SweepSummary::default();
    for (w, ws) in workspaces.iter().enumerate() {
        for ordinal in select_jobs(ws, &config.selection) {
            summary.scheduled += 1;
            if store.is_done(&ws.dataset.tag(), ordinal) {
                summary.resumed += 1;
            } else {
                jobs.push((w, ordinal));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(w, ordinal)| {
                let ws = &workspaces[w];
                let subpop = &ws.manifest[ordinal].subpop;
                let (output, failed) = match run_pipeline(&ws.dataset, subpop, &ws.clean, &config.pipeline) {
                    Ok(out) => (out, false),
                    Err(e) => (failure_output(&ws.dataset, &subpop.id, &e), true),
                };
                let entry = store.commit(ordinal, &output)?;
                progress(&entry);
                Ok(failed)
            })
            .collect()
    });
    for o in outcomes {
        summary.completed += 1;
        if o? {
            summary.failed += 1;
        }
    }
    store.finalize()?;
    Ok(summary)
}

fn failure_output(ds: &Dataset, subpop: &str, err: &Error) -> PipelineOutput {
    let mut result = DifficultyResult::from_records(&ds.tag(), subpop, ds.n_train(), 0, &[], [0; 3], Vec::new(), false);
    result.error = Some(err.to_string());
    PipelineOutput { targets: Vec::new(), records: Vec::new(), result }
}
