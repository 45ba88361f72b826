//! Per-subpopulation attack pipeline and the sweep that runs it over many
//! datasets.
//!
//! A pipeline runs MTP against every distinct label-flip target (MTP-1), MTP
//! again against every induced model that met the objective (MTP-2), and KKT
//! at up to five sizes drawn from `[lb, n)` of each successful MTP run. The
//! difficulty is the smallest successful poison set over all of them.

mod store;
mod sweep;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    kkt_attack, mtp_attack, AttackRecord, FeasibleMode, FeasibleSet, KktConfig, MtpConfig, Phase, StopRule,
};
use crate::dataspace::{Dataset, Source};
use crate::learner::{CleanFit, TrainConfig};
use crate::subpops::{cluster_match, feature_match, subpop_error, ManifestEntry, Subpopulation, DEFAULT_K, DEFAULT_R};
use crate::targets::{generate_targets, Origin, TargetConfig, TargetModel};
use crate::{Error, Result};

pub use store::{IndexEntry, Shard, ShardLine, Store, StoreMeta};
pub use sweep::{
    load_workspace, prepare_dataset, select_jobs, sweep, workspace_dirs, Selection, SweepConfig, SweepSummary, Workspace,
    MANIFEST_FILE,
};

/// Predicates over at most this many features for tabular datasets.
pub const MAX_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeConfig {
    /// Stop when the poisoned model is within `tol * max(1, |target|)`.
    pub tol: f64,
    /// Budget as a multiple of the poisons the target was induced with.
    pub budget_factor: f64,
    /// Convergence runs per subpopulation, over the first induced targets.
    pub runs: usize,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self { tol: 1e-2, budget_factor: 4.0, runs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub r: f64,
    /// MTP budget as a share of the clean training set.
    pub budget_frac: f64,
    pub feasible: FeasibleMode,
    pub targets: TargetConfig,
    pub kkt: KktConfig,
    /// KKT sizes drawn from `[lb, n)`.
    pub kkt_sizes: usize,
    pub converge: Option<ConvergeConfig>,
    /// Per-subpopulation wall-clock cap in seconds; later attacks are skipped
    /// and the result is flagged.
    pub time_cap_secs: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r: DEFAULT_R,
            budget_frac: 0.5,
            feasible: FeasibleMode::Box,
            targets: TargetConfig::default(),
            kkt: KktConfig::default(),
            kkt_sizes: 5,
            converge: Some(ConvergeConfig::default()),
            time_cap_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub attempts: usize,
    pub successes: usize,
    /// Attempts that ended in an error instead of a record.
    pub errors: usize,
    pub min_poisons: Option<usize>,
}

/// A convergence-driven MTP run used to check the certified bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbCheck {
    pub attack_id: String,
    pub lb: usize,
    pub n: usize,
    pub converged: bool,
}

impl LbCheck {
    pub fn holds(&self) -> bool {
        self.lb <= self.n
    }
}

/// Which side of the certified bound the best attack landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbRegime {
    /// `min_lb <= best poisons`.
    AtOrAbove,
    /// The best attack used fewer poisons than every target's bound, so it
    /// induced a model away from all targets.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyResult {
    pub dataset: String,
    pub subpop: String,
    pub n_clean: usize,
    /// Smallest successful poison set over `|S_c|`.
    pub difficulty: Option<f64>,
    pub n_poisons: Option<usize>,
    pub best_phase: Option<Phase>,
    pub best_attack: Option<String>,
    /// Minimum certified bound over the MTP runs.
    pub min_lb: Option<usize>,
    pub lb_regime: Option<LbRegime>,
    pub phases: Vec<PhaseSummary>,
    /// No attack met the objective.
    pub unresolved: bool,
    /// Highest subpopulation error any attack reached.
    pub best_error: f64,
    pub n_targets: usize,
    pub timed_out: bool,
    pub lb_checks: Vec<LbCheck>,
    /// Set when the pipeline itself failed.
    #[serde(default)]
    pub error: Option<String>,
}

impl DifficultyResult {
    #[allow(clippy::too_many_arguments)]
    /// Recomputes difficulty, phase and bound fields from attack records.
    pub fn from_records(
        dataset: &str,
        subpop: &str,
        n_clean: usize,
        n_targets: usize,
        records: &[AttackRecord],
        errors: [usize; 3],
        lb_checks: Vec<LbCheck>,
        timed_out: bool,
    ) -> Self {
        let phases: Vec<PhaseSummary> = [Phase::Mtp1, Phase::Mtp2, Phase::Kkt]
            .into_iter()
            .zip(errors)
            .map(|(phase, errors)| {
                let of_phase = records.iter().filter(|r| r.phase == phase);
                PhaseSummary {
                    phase,
                    attempts: of_phase.clone().count() + errors,
                    successes: of_phase.clone().filter(|r| r.success).count(),
                    errors,
                    min_poisons: of_phase.filter(|r| r.success).map(|r| r.n_poisons()).min(),
                }
            })
            .collect();
        // records arrive in phase order, so the first minimum wins ties
        let mut best: Option<&AttackRecord> = None;
        for r in records.iter().filter(|r| r.success) {
            if best.is_none_or(|b| r.n_poisons() < b.n_poisons()) {
                best = Some(r);
            }
        }
        let min_lb = records.iter().filter(|r| r.phase != Phase::Kkt).map(|r| r.lb).min();
        let n_poisons = best.map(|b| b.n_poisons());
        let lb_regime = match (min_lb, n_poisons) {
            (Some(lb), Some(n)) => Some(if lb <= n { LbRegime::AtOrAbove } else { LbRegime::Below }),
            _ => None,
        };
        Self {
            dataset: dataset.to_string(),
            subpop: subpop.to_string(),
            n_clean,
            difficulty: n_poisons.map(|n| n as f64 / n_clean as f64),
            n_poisons,
            best_phase: best.map(|b| b.phase),
            best_attack: best.map(|b| b.id.clone()),
            min_lb,
            lb_regime,
            phases,
            unresolved: best.is_none(),
            best_error: records.iter().map(|r| r.subpop_error).fold(0.0, f64::max),
            n_targets,
            timed_out,
            lb_checks,
            error: None,
        }
    }
}

/// Everything one pipeline produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub targets: Vec<TargetModel>,
    /// Attacks in phase order, convergence runs last.
    pub records: Vec<AttackRecord>,
    pub result: DifficultyResult,
}

/// Sizes `lb + k (n - lb) / count` for `k < count`, rounded, deduplicated and
/// kept inside `[max(lb, 1), n)`.
pub fn kkt_sizes(lb: usize, n: usize, count: usize) -> Vec<usize> {
    if lb >= n || count == 0 {
        return Vec::new();
    }
    let span = (n - lb) as f64;
    let mut out: Vec<usize> = (0..count)
        .map(|k| (lb as f64 + k as f64 * span / count as f64).round() as usize)
        .filter(|&s| s >= 1 && s >= lb && s < n)
        .collect();
    out.dedup();
    out
}

/// Keeps the first target of each distinct parameter vector.
fn distinct_targets(targets: &[TargetModel]) -> Vec<TargetModel> {
    let mut out: Vec<TargetModel> = Vec::new();
    for t in targets {
        if !out.iter().any(|o| o.model == t.model) {
            out.push(t.clone());
        }
    }
    out
}

struct Clock {
    start: Instant,
    cap: Option<Duration>,
    hit: bool,
}

impl Clock {
    fn expired(&mut self) -> bool {
        if self.cap.is_some_and(|c| self.start.elapsed() > c) {
            self.hit = true;
        }
        self.hit
    }
}

/// Runs the three phases on one nontrivial subpopulation.
pub fn run_pipeline(
    ds: &Dataset,
    subpop: &Subpopulation,
    clean: &CleanFit,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    if subpop_error(subpop, ds, &clean.model)? >= config.r {
        return Err(Error::Precondition(format!("subpopulation {} is trivial", subpop.id)));
    }
    let feasible = FeasibleSet::for_dataset(ds, config.feasible)?;
    let mtp = MtpConfig { r: config.r, ..MtpConfig::new(ds, config.budget_frac) };
    let target_cfg = TargetConfig { r: config.r, ..config.targets.clone() };
    let targets = generate_targets(ds, subpop, clean, &target_cfg)?;
    let mut clock = Clock {
        start: Instant::now(),
        cap: config.time_cap_secs.map(Duration::from_secs_f64),
        hit: false,
    };
    let mut records: Vec<AttackRecord> = Vec::new();
    let mut errors = [0usize; 3];

    let run_mtp = |target: &TargetModel, phase: Phase, errors: &mut [usize; 3]| -> Result<Option<AttackRecord>> {
        match mtp_attack(ds, subpop, target, &feasible, clean, &mtp, phase) {
            Ok(r) => Ok(Some(r)),
            Err(Error::NoProgress(_)) | Err(Error::NonConvergence { .. }) => {
                errors[if phase == Phase::Mtp1 { 0 } else { 1 }] += 1;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    let phase1_targets = distinct_targets(&targets);
    for t in &phase1_targets {
        if clock.expired() {
            break;
        }
        if let Some(r) = run_mtp(t, Phase::Mtp1, &mut errors)? {
            records.push(r);
        }
    }

    let mut induced: Vec<TargetModel> = Vec::new();
    for r in records.iter().filter(|r| r.success) {
        let t = TargetModel {
            level: r.target.level,
            model: r.induced.clone(),
            subpop_error: r.subpop_error,
            clean_loss: crate::learner::dataset_loss(&r.induced, &ds.train_x, &ds.train_y)?,
            origin: Origin::Induced { attack_id: r.id.clone() },
        };
        if !induced.iter().any(|o| o.model == t.model) {
            induced.push(t);
        }
    }
    for t in &induced {
        if clock.expired() {
            break;
        }
        if let Some(r) = run_mtp(t, Phase::Mtp2, &mut errors)? {
            records.push(r);
        }
    }

    let mtp_runs: Vec<(usize, usize, TargetModel, Phase)> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| (r.lb, r.n_poisons(), r.target.clone(), r.phase))
        .collect();
    for (lb, n, target, source) in &mtp_runs {
        for size in kkt_sizes(*lb, *n, config.kkt_sizes) {
            if clock.expired() {
                break;
            }
            match kkt_attack(ds, subpop, target, size, &feasible, clean, &config.kkt, *lb) {
                Ok(mut r) => {
                    r.id = format!("{}/{}/KKT/{}/L{:.2}/n{size}", ds.tag(), subpop.id, source.as_str(), target.level);
                    records.push(r);
                }
                Err(Error::Infeasible(_)) | Err(Error::NonConvergence { .. }) => errors[2] += 1,
                Err(e) => return Err(e),
            }
        }
    }

    let mut lb_checks = Vec::new();
    let mut conv_records = Vec::new();
    if let Some(cc) = &config.converge {
        let sources: Vec<(TargetModel, usize)> = records
            .iter()
            .filter(|r| r.phase == Phase::Mtp1 && r.success)
            .map(|r| {
                let t = induced.iter().find(|t| t.model == r.induced).cloned().expect("induced target");
                (t, r.n_poisons())
            })
            .take(cc.runs)
            .collect();
        for (target, n_src) in sources {
            if clock.expired() {
                break;
            }
            let tol = cc.tol * target.model.w.iter().chain([&target.model.b]).map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            let cfg = MtpConfig {
                r: config.r,
                budget: ((n_src as f64 * cc.budget_factor).ceil() as usize).max(1),
                stop: StopRule::Converge { tol },
                stall_iters: mtp.stall_iters,
            };
            match mtp_attack(ds, subpop, &target, &feasible, clean, &cfg, Phase::Mtp2) {
                Ok(mut r) => {
                    r.id.push_str("/converge");
                    lb_checks.push(LbCheck { attack_id: r.id.clone(), lb: r.lb, n: r.n_poisons(), converged: r.converged });
                    conv_records.push(r);
                }
                Err(Error::NoProgress(_)) | Err(Error::NonConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    records.extend(conv_records);
    let result = DifficultyResult::from_records(
        &ds.tag(),
        &subpop.id,
        ds.n_train(),
        targets.len(),
        &records,
        errors,
        lb_checks,
        clock.hit,
    );
    Ok(PipelineOutput { targets, records, result })
}

/// Subpopulations for a dataset: ClusterMatch for synthetic data, FeatureMatch
/// for tabular data.
pub fn default_subpops(ds: &Dataset, seed: u64) -> Result<Vec<Subpopulation>> {
    match ds.source {
        Source::Synthetic(_) => cluster_match(ds, DEFAULT_K, seed),
        Source::Adult { .. } => Ok(feature_match(ds, MAX_FEATURES)),
    }
}

/// Manifest entries with triviality under the dataset's default learner.
pub fn build_manifest(ds: &Dataset, subpops: Vec<Subpopulation>, r: f64) -> Result<(CleanFit, Vec<ManifestEntry>)> {
    let clean = CleanFit::new(ds, &TrainConfig::for_dataset(ds))?;
    let entries = subpops.into_iter().map(|s| ManifestEntry::new(ds, s, &clean.model, r)).collect();
    Ok((clean, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_are_rounded_and_deduplicated() {
        assert_eq!(kkt_sizes(10, 20, 5), vec![10, 12, 14, 16, 18]);
        assert_eq!(kkt_sizes(3, 5, 5), vec![3, 4]);
        assert!(kkt_sizes(0, 1, 5).iter().all(|&s| s >= 1));
        assert!(kkt_sizes(5, 5, 5).is_empty());
        assert!(kkt_sizes(7, 5, 5).is_empty());
    }
}
