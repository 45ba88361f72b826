//! Read-only projections of the dataset workspaces and the sweep store.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use subpop::dataspace::Source;
use subpop::harness::{load_workspace, workspace_dirs, IndexEntry, PipelineConfig, Store, Workspace};
use subpop::learner::evaluate;
use subpop::subpops::ManifestEntry;
use subpop::targets::{generate_targets, Origin, TargetModel};

use crate::{ApiError, SharedState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub source: Source,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub clean_test_accuracy: f64,
    pub n_subpops: usize,
    pub n_attackable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpopInfo {
    /// `{dataset}:{ordinal}`, accepted wherever a subpopulation is referenced.
    #[serde(rename = "ref")]
    pub subpop_ref: String,
    pub ordinal: usize,
    pub id: String,
    pub description: String,
    pub n_train: usize,
    pub n_test: usize,
    pub size_fraction: f64,
    pub trivial: Option<bool>,
    pub attackable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    /// Position in the subpopulation's target list, used as the target ref.
    pub index: usize,
    #[serde(flatten)]
    pub target: TargetModel,
}

impl TargetInfo {
    pub fn new(index: usize, target: &TargetModel) -> Self {
        Self { index, target: target.clone() }
    }
}

pub struct Catalog {
    order: Vec<String>,
    workspaces: BTreeMap<String, Arc<Workspace>>,
    infos: Vec<DatasetInfo>,
    store: Option<Store>,
    pipeline: PipelineConfig,
    targets: Mutex<HashMap<(String, usize), Arc<Vec<TargetModel>>>>,
}

pub fn subpop_ref(dataset: &str, ordinal: usize) -> String {
    format!("{dataset}:{ordinal}")
}

pub fn parse_subpop_ref(s: &str) -> Result<(String, usize), ApiError> {
    let (ds, ord) = s
        .rsplit_once(':')
        .ok_or_else(|| ApiError::BadRequest(format!("subpopulation ref {s:?} is not dataset:ordinal")))?;
    let ord = ord.parse().map_err(|_| ApiError::BadRequest(format!("bad ordinal in {s:?}")))?;
    Ok((ds.to_string(), ord))
}

impl Catalog {
    pub fn load(datasets: &Path, store: Option<&Path>, pipeline: PipelineConfig) -> subpop::Result<Self> {
        let mut order = Vec::new();
        let mut workspaces = BTreeMap::new();
        let mut infos = Vec::new();
        for dir in workspace_dirs(datasets)? {
            let ws = load_workspace(&dir)?;
            let ds = &ws.dataset;
            let tag = ds.tag();
            infos.push(DatasetInfo {
                id: tag.clone(),
                source: ds.source.clone(),
                n_train: ds.n_train(),
                n_test: ds.n_test(),
                dim: ds.dim(),
                clean_test_accuracy: evaluate(&ws.clean.model, &ds.test_x, &ds.test_y)?.accuracy,
                n_subpops: ws.manifest.len(),
                n_attackable: ws.attackable().len(),
            });
            order.push(tag.clone());
            workspaces.insert(tag, Arc::new(ws));
        }
        let store = match store {
            Some(p) if p.join("store.json").exists() => Some(Store::open(p)?),
            _ => None,
        };
        Ok(Self { order, workspaces, infos, store, pipeline, targets: Mutex::new(HashMap::new()) })
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.pipeline
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.infos.clone()
    }

    pub fn dataset_ids(&self) -> &[String] {
        &self.order
    }

    pub fn workspace(&self, id: &str) -> Result<Arc<Workspace>, ApiError> {
        self.workspaces.get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown dataset {id}")))
    }

    pub fn subpops(&self, id: &str) -> Result<Vec<SubpopInfo>, ApiError> {
        let ws = self.workspace(id)?;
        Ok(ws
            .manifest
            .iter()
            .enumerate()
            .map(|(i, e)| SubpopInfo {
                subpop_ref: subpop_ref(id, i),
                ordinal: i,
                id: e.subpop.id.clone(),
                description: e.subpop.provenance.describe(),
                n_train: e.n_train,
                n_test: e.n_test,
                size_fraction: e.subpop.size_fraction,
                trivial: e.trivial,
                attackable: e.is_attackable(),
            })
            .collect())
    }

    /// Manifest entry of an attackable subpopulation.
    pub fn attackable(&self, ds: &str, ordinal: usize) -> Result<(Arc<Workspace>, ManifestEntry), ApiError> {
        let ws = self.workspace(ds)?;
        let entry = ws
            .manifest
            .get(ordinal)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("dataset {ds} has no subpopulation #{ordinal}")))?;
        match entry.trivial {
            Some(true) => Err(ApiError::Rejected(format!(
                "subpopulation {} is trivial: the clean model already assigns the target label to at least {:.0}% of \
                 its test points, so it is excluded from attack difficulty measurements",
                entry.subpop.id,
                100.0 * self.pipeline.r
            ))),
            None => Err(ApiError::Rejected(format!(
                "subpopulation {} has no test points, so attack success cannot be evaluated",
                entry.subpop.id
            ))),
            Some(false) => Ok((ws, entry)),
        }
    }

    /// Target models for a subpopulation: the swept ones when the store has
    /// them, otherwise freshly generated label-flip targets. Blocks.
    pub fn targets(&self, ds: &str, ordinal: usize) -> Result<Arc<Vec<TargetModel>>, ApiError> {
        let key = (ds.to_string(), ordinal);
        if let Some(t) = self.targets.lock().expect("target cache").get(&key) {
            return Ok(t.clone());
        }
        let (ws, entry) = self.attackable(ds, ordinal)?;
        let stored = match &self.store {
            Some(store) => match store.entries().into_iter().find(|e| e.dataset == ds && e.ordinal == ordinal) {
                Some(e) => store.read_shard(&e)?.targets,
                None => Vec::new(),
            },
            None => Vec::new(),
        };
        let targets = if stored.is_empty() {
            generate_targets(&ws.dataset, &entry.subpop, &ws.clean, &self.pipeline.targets)?
        } else {
            stored
        };
        let targets = Arc::new(targets);
        self.targets.lock().expect("target cache").insert(key, targets.clone());
        Ok(targets)
    }

    /// The label-flip target with the lowest clean loss among those meeting
    /// the error objective.
    pub fn auto_target(&self, ds: &str, ordinal: usize) -> Result<TargetModel, ApiError> {
        let r = self.pipeline.r;
        self.targets(ds, ordinal)?
            .iter()
            .filter(|t| matches!(t.origin, Origin::LabelFlip { .. }) && t.subpop_error >= r)
            .min_by(|a, b| a.clean_loss.total_cmp(&b.clean_loss))
            .cloned()
            .ok_or_else(|| ApiError::Rejected(format!("no target model reaches {:.0}% subpopulation error", 100.0 * r)))
    }

    pub fn results(&self) -> Vec<IndexEntry> {
        self.store.as_ref().map(|s| s.entries()).unwrap_or_default()
    }
}

/// `Catalog::targets` on the blocking pool.
pub async fn load_targets(state: SharedState, ds: String, ordinal: usize) -> Result<Arc<Vec<TargetModel>>, ApiError> {
    tokio::task::spawn_blocking(move || state.catalog().targets(&ds, ordinal))
        .await
        .map_err(|e| ApiError::Internal(format!("target generation panicked: {e}")))?
}
