//! Live attack runs: the registry, execution on a bounded worker pool, and
//! trace fan-out.
//!
//! Every run keeps its full event list in memory; subscribers read from it
//! starting at any sequence number and wait on a watch channel for more. A
//! finished run is written to `{runs}/{id}.json` by atomic rename, which is
//! what a restarted service reloads.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use futures::Stream;
use serde::{Deserialize, Serialize};
use subpop::attacks::{
    kkt_attack, mtp_attack_observed, AttackRecord, FeasibleSet, MtpConfig, Phase, StopReason, StopRule, TraceEvent,
};
use subpop::targets::TargetModel;
use tokio::sync::{watch, Semaphore};

use crate::{ApiError, SharedState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Succeeded | RunState::Failed | RunState::Cancelled)
    }

    /// Allowed transitions: queued to running, and any live state to a
    /// terminal one.
    pub fn can_become(self, next: RunState) -> bool {
        match self {
            RunState::Queued => next != RunState::Queued,
            RunState::Running => next.is_terminal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    Mtp,
    Kkt,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRef {
    /// Lowest clean-loss label-flip target reaching the error objective.
    #[default]
    Auto,
    /// Position in `GET /subpops/{ref}/targets`.
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    /// MTP poison budget as a share of the clean training set.
    pub budget_frac: Option<f64>,
    /// Run MTP until within this parameter distance of the target instead
    /// of stopping at success.
    pub converge_tol: Option<f64>,
    /// KKT poison count.
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub dataset: String,
    /// Manifest ordinal of the subpopulation.
    pub subpop: usize,
    #[serde(default)]
    pub target: TargetRef,
    #[serde(default)]
    pub attack: AttackKind,
    #[serde(default)]
    pub params: RunParams,
    /// Also accepted as the `Idempotency-Key` header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl RunRequest {
    /// Identity of the work, used to coalesce duplicate live runs.
    fn work_key(&self) -> String {
        serde_json::to_string(&(&self.dataset, self.subpop, &self.target, self.attack, &self.params))
            .expect("request serializes")
    }

    fn validate(&self) -> Result<(), ApiError> {
        let p = &self.params;
        if let Some(f) = p.budget_frac {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ApiError::BadRequest("budget_frac must be in (0, 1]".into()));
            }
        }
        if let Some(t) = p.converge_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ApiError::BadRequest("converge_tol must be positive".into()));
            }
        }
        match (self.attack, p.n) {
            (AttackKind::Kkt, None | Some(0)) => Err(ApiError::BadRequest("a KKT attack needs params.n >= 1".into())),
            (AttackKind::Mtp, Some(_)) => Err(ApiError::BadRequest("params.n applies to KKT attacks only".into())),
            (AttackKind::Kkt, Some(_)) if p.budget_frac.is_some() || p.converge_tol.is_some() => {
                Err(ApiError::BadRequest("budget_frac and converge_tol apply to MTP attacks only".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub iterations: usize,
    pub subpop_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub state: RunState,
    pub n_poisons: usize,
    pub success: Option<bool>,
    pub subpop_error: Option<f64>,
    pub difficulty: Option<f64>,
    pub lb: Option<usize>,
    pub stop: Option<StopReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub id: String,
    pub state: RunState,
    pub progress: Progress,
    pub request: RunRequest,
    /// Resolved target, once the run has started.
    pub target: Option<TargetModel>,
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    Iteration(TraceEvent),
    Summary(RunSummary),
}

/// One line of the trace stream. Sequence numbers start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Serialize, Deserialize)]
struct PersistedRun {
    handle: RunHandle,
    record: Option<AttackRecord>,
}

struct RunInner {
    state: RunState,
    progress: Progress,
    target: Option<TargetModel>,
    events: Vec<StreamEvent>,
    summary: Option<RunSummary>,
    record: Option<AttackRecord>,
}

pub struct Run {
    id: String,
    request: RunRequest,
    dir: PathBuf,
    inner: Mutex<RunInner>,
    tick: watch::Sender<u64>,
    cancel: AtomicBool,
}

impl Run {
    fn new(id: String, request: RunRequest, dir: PathBuf) -> Self {
        Self {
            id,
            request,
            dir,
            inner: Mutex::new(RunInner {
                state: RunState::Queued,
                progress: Progress::default(),
                target: None,
                events: Vec::new(),
                summary: None,
                record: None,
            }),
            tick: watch::Sender::new(0),
            cancel: AtomicBool::new(false),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, RunInner> {
        self.inner.lock().expect("run lock")
    }

    fn notify(&self) {
        self.tick.send_modify(|v| *v += 1);
    }

    pub fn handle(&self) -> RunHandle {
        let inner = self.lock();
        RunHandle {
            id: self.id.clone(),
            state: inner.state,
            progress: inner.progress.clone(),
            request: self.request.clone(),
            target: inner.target.clone(),
            summary: inner.summary.clone(),
        }
    }

    pub fn record(&self) -> Option<AttackRecord> {
        self.lock().record.clone()
    }

    pub fn state(&self) -> RunState {
        self.lock().state
    }

    /// Queued runs end at once; running MTP runs stop after the current
    /// iteration. Finished runs are left alone.
    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
        if self.state() == RunState::Queued {
            self.finish(RunState::Cancelled, None, None);
        }
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    fn start(&self, target: TargetModel) -> bool {
        let mut inner = self.lock();
        if !inner.state.can_become(RunState::Running) {
            return false;
        }
        inner.state = RunState::Running;
        inner.target = Some(target);
        drop(inner);
        self.notify();
        true
    }

    fn push_iteration(&self, event: &TraceEvent) {
        let mut inner = self.lock();
        let seq = inner.events.len() as u64 + 1;
        inner.progress = Progress { iterations: event.iter, subpop_err: Some(event.subpop_err) };
        inner.events.push(StreamEvent { seq, body: EventBody::Iteration(event.clone()) });
        drop(inner);
        self.notify();
    }

    /// Moves to a terminal state, persists the run, then publishes the
    /// summary event. A no-op on runs that already finished.
    fn finish(&self, state: RunState, record: Option<AttackRecord>, error: Option<String>) {
        let mut inner = self.lock();
        if !inner.state.can_become(state) {
            return;
        }
        let mut summary = RunSummary {
            state,
            n_poisons: record.as_ref().map_or(inner.progress.iterations, |r| r.n_poisons()),
            success: record.as_ref().map(|r| r.success),
            subpop_error: record.as_ref().map(|r| r.subpop_error).or(inner.progress.subpop_err),
            difficulty: record.as_ref().map(|r| r.difficulty),
            lb: record.as_ref().map(|r| r.lb),
            stop: record.as_ref().map(|r| r.stop),
            error,
        };
        inner.state = state;
        inner.record = record;
        let persisted = PersistedRun {
            handle: RunHandle {
                id: self.id.clone(),
                state,
                progress: inner.progress.clone(),
                request: self.request.clone(),
                target: inner.target.clone(),
                summary: Some(summary.clone()),
            },
            record: inner.record.clone(),
        };
        if let Err(e) = persist(&self.dir, &self.id, &persisted) {
            summary.error = Some(format!("run could not be persisted: {e}"));
        }
        let seq = inner.events.len() as u64 + 1;
        inner.events.push(StreamEvent { seq, body: EventBody::Summary(summary.clone()) });
        inner.summary = Some(summary);
        drop(inner);
        self.notify();
    }
}

fn persist(dir: &Path, id: &str, run: &PersistedRun) -> std::io::Result<()> {
    let path = dir.join(format!("{id}.json"));
    let tmp = dir.join(format!("{id}.json.tmp"));
    fs::write(&tmp, serde_json::to_vec(run)?)?;
    fs::rename(tmp, path)
}

fn restore(dir: &Path, p: PersistedRun) -> Run {
    let h = p.handle;
    let run = Run::new(h.id.clone(), h.request, dir.to_path_buf());
    {
        let mut inner = run.lock();
        inner.state = h.state;
        inner.progress = h.progress;
        inner.target = h.target;
        if let Some(rec) = &p.record {
            for e in &rec.trace {
                let seq = inner.events.len() as u64 + 1;
                inner.events.push(StreamEvent { seq, body: EventBody::Iteration(e.clone()) });
            }
        }
        if let Some(s) = &h.summary {
            let seq = inner.events.len() as u64 + 1;
            inner.events.push(StreamEvent { seq, body: EventBody::Summary(s.clone()) });
        }
        inner.summary = h.summary;
        inner.record = p.record;
    }
    run
}

#[derive(Default)]
struct RegistryInner {
    runs: BTreeMap<String, Arc<Run>>,
    idempotency: HashMap<String, String>,
    /// Work key to the live run doing that work.
    live: HashMap<String, String>,
    next: u64,
}

pub struct Registry {
    dir: PathBuf,
    inner: Mutex<RegistryInner>,
    permits: Arc<Semaphore>,
}

fn run_number(id: &str) -> Option<u64> {
    id.strip_prefix("run-")?.parse().ok()
}

impl Registry {
    /// Reloads finished runs persisted under `dir`.
    pub fn load(dir: &Path, workers: usize) -> subpop::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut inner = RegistryInner { next: 1, ..Default::default() };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if name.ends_with(".json.tmp") {
                // an interrupted write never became a run
                fs::remove_file(&path)?;
                continue;
            }
            if !name.ends_with(".json") {
                continue;
            }
            let p: PersistedRun = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| subpop::Error::CorruptStore(format!("{}: {e}", path.display())))?;
            let run = restore(dir, p);
            if let Some(n) = run_number(&run.id) {
                inner.next = inner.next.max(n + 1);
            }
            if let Some(k) = &run.request.idempotency_key {
                inner.idempotency.insert(k.clone(), run.id.clone());
            }
            inner.runs.insert(run.id.clone(), Arc::new(run));
        }
        Ok(Self { dir: dir.to_path_buf(), inner: Mutex::new(inner), permits: Arc::new(Semaphore::new(workers.max(1))) })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Run>, ApiError> {
        self.inner.lock().expect("registry lock").runs.get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown run {id}")))
    }

    /// Every run, oldest first.
    pub fn handles(&self) -> Vec<RunHandle> {
        let runs: Vec<Arc<Run>> = self.inner.lock().expect("registry lock").runs.values().cloned().collect();
        runs.iter().map(|r| r.handle()).collect()
    }

    /// Returns the run already answering this request, or registers a new
    /// queued one. The flag says whether the run is new.
    fn register(&self, req: RunRequest) -> (Arc<Run>, bool) {
        let mut inner = self.inner.lock().expect("registry lock");
        if let Some(id) = req.idempotency_key.as_ref().and_then(|k| inner.idempotency.get(k)) {
            return (inner.runs[id].clone(), false);
        }
        let work = req.work_key();
        if let Some(run) = inner.live.get(&work).map(|id| inner.runs[id].clone()) {
            if !run.state().is_terminal() {
                if let Some(k) = &req.idempotency_key {
                    inner.idempotency.insert(k.clone(), run.id.clone());
                }
                return (run, false);
            }
        }
        let id = format!("run-{:06}", inner.next);
        inner.next += 1;
        if let Some(k) = &req.idempotency_key {
            inner.idempotency.insert(k.clone(), id.clone());
        }
        inner.live.insert(work, id.clone());
        let run = Arc::new(Run::new(id.clone(), req, self.dir.clone()));
        inner.runs.insert(id, run.clone());
        (run, true)
    }
}

/// Validates a request and queues it, or returns the run it duplicates.
pub async fn submit(state: SharedState, req: RunRequest) -> Result<RunHandle, ApiError> {
    req.validate()?;
    state.catalog().attackable(&req.dataset, req.subpop)?;
    if let TargetRef::Index(k) = req.target {
        let targets = crate::catalog::load_targets(state.clone(), req.dataset.clone(), req.subpop).await?;
        if k >= targets.len() {
            return Err(ApiError::NotFound(format!("subpopulation has {} targets, no #{k}", targets.len())));
        }
    }
    let (run, fresh) = state.runs.register(req);
    let handle = run.handle();
    if fresh {
        tokio::spawn(drive(state, run));
    }
    Ok(handle)
}

async fn drive(state: SharedState, run: Arc<Run>) {
    let Ok(_permit) = state.runs.permits.clone().acquire_owned().await else {
        run.finish(RunState::Failed, None, Some("worker pool closed".into()));
        return;
    };
    if run.state().is_terminal() {
        return;
    }
    let worker = run.clone();
    let outcome = tokio::task::spawn_blocking(move || execute(&state, &worker)).await;
    match outcome {
        Ok(Ok(record)) => {
            let state = if record.stop == StopReason::Cancelled {
                RunState::Cancelled
            } else if record.success || record.converged {
                RunState::Succeeded
            } else {
                RunState::Failed
            };
            run.finish(state, Some(record), None);
        }
        Ok(Err(e)) => {
            let state = if run.cancelled() { RunState::Cancelled } else { RunState::Failed };
            run.finish(state, None, Some(e.to_string()));
        }
        Err(e) => run.finish(RunState::Failed, None, Some(format!("attack panicked: {e}"))),
    }
}

fn execute(state: &SharedState, run: &Run) -> Result<AttackRecord, ApiError> {
    let catalog = state.catalog();
    let req = &run.request;
    let (ws, entry) = catalog.attackable(&req.dataset, req.subpop)?;
    let target = match req.target {
        TargetRef::Auto => catalog.auto_target(&req.dataset, req.subpop)?,
        TargetRef::Index(k) => catalog
            .targets(&req.dataset, req.subpop)?
            .get(k)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no target #{k}")))?,
    };
    if run.cancelled() || !run.start(target.clone()) {
        return Err(ApiError::Rejected("run was cancelled before it started".into()));
    }
    let pipeline = catalog.pipeline();
    let ds = &ws.dataset;
    let feasible = FeasibleSet::for_dataset(ds, pipeline.feasible)?;
    let record = match req.attack {
        AttackKind::Mtp => {
            let mut config = MtpConfig::new(ds, req.params.budget_frac.unwrap_or(pipeline.budget_frac));
            config.r = pipeline.r;
            if let Some(tol) = req.params.converge_tol {
                config.stop = StopRule::Converge { tol };
            }
            mtp_attack_observed(ds, &entry.subpop, &target, &feasible, &ws.clean, &config, Phase::Mtp1, &mut |e| {
                run.push_iteration(e);
                if run.cancelled() {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?
        }
        AttackKind::Kkt => {
            let n = req.params.n.expect("validated");
            kkt_attack(ds, &entry.subpop, &target, n, &feasible, &ws.clean, &pipeline.kkt, 0)?
        }
    };
    Ok(record)
}

/// NDJSON chunks of the run's events with `seq > from`, ending after the
/// summary event.
pub fn event_stream(run: Arc<Run>, from: u64) -> impl Stream<Item = Result<Bytes, Infallible>> {
    let rx = run.tick.subscribe();
    futures::stream::unfold((run, from, rx, false), |(run, cursor, mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let (chunk, last, ended) = {
                let inner = run.lock();
                let fresh: Vec<&StreamEvent> = inner.events.iter().filter(|e| e.seq > cursor).collect();
                let mut buf = Vec::new();
                for e in &fresh {
                    serde_json::to_writer(&mut buf, e).expect("event serializes");
                    buf.push(b'\n');
                }
                let ended = inner.events.last().is_some_and(|e| matches!(e.body, EventBody::Summary(_)));
                (buf, fresh.last().map(|e| e.seq), ended)
            };
            if let Some(last) = last {
                return Some((Ok(Bytes::from(chunk)), (run, last, rx, ended)));
            }
            if ended || rx.changed().await.is_err() {
                return None;
            }
        }
    })
}
