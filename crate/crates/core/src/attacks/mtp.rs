//! Model-targeted poisoning: one greedy point per iteration with a warm
//! retrain after each addition.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::lower_bound::{bound_from, clean_total_loss};
use super::{AttackRecord, FeasibleSet, Phase, StopReason, TraceEvent};
use crate::dataspace::Dataset;
use crate::learner::{evaluate, CleanFit, Poison};
use crate::subpops::{subpop_error, Subpopulation, DEFAULT_R};
use crate::targets::TargetModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once the subpopulation test error reaches `r`.
    Success,
    /// Stop once the poisoned model is within `tol` of the target parameters.
    Converge { tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtpConfig {
    pub r: f64,
    /// Maximum number of poisons.
    pub budget: usize,
    pub stop: StopRule,
    /// Consecutive iterations without positive loss difference tolerated.
    pub stall_iters: usize,
}

impl MtpConfig {
    /// Success-driven run with budget `budget_frac * |S_c|`.
    pub fn new(ds: &Dataset, budget_frac: f64) -> Self {
        Self {
            r: DEFAULT_R,
            budget: (budget_frac * ds.n_train() as f64).floor() as usize,
            stop: StopRule::Success,
            stall_iters: 10,
        }
    }
}

const STALL_GAIN: f64 = 1e-10;

/// Runs MTP toward `target` on a nontrivial subpopulation.
pub fn mtp_attack(
    ds: &Dataset,
    subpop: &Subpopulation,
    target: &TargetModel,
    feasible: &FeasibleSet,
    clean: &CleanFit,
    config: &MtpConfig,
    phase: Phase,
) -> Result<AttackRecord> {
    mtp_attack_observed(ds, subpop, target, feasible, clean, config, phase, &mut |_| ControlFlow::Continue(()))
}

/// `mtp_attack` that hands every committed iteration to `observer`. A
/// `Break` ends the run early with `StopReason::Cancelled`.
#[allow(clippy::too_many_arguments)]
pub fn mtp_attack_observed(
    ds: &Dataset,
    subpop: &Subpopulation,
    target: &TargetModel,
    feasible: &FeasibleSet,
    clean: &CleanFit,
    config: &MtpConfig,
    phase: Phase,
    observer: &mut dyn FnMut(&TraceEvent) -> ControlFlow<()>,
) -> Result<AttackRecord> {
    if subpop_error(subpop, ds, &clean.model)? >= config.r {
        return Err(Error::Precondition(format!("subpopulation {} is trivial", subpop.id)));
    }
    if subpop_error(subpop, ds, &target.model)? < config.r {
        return Err(Error::Precondition("target model does not reach the error objective".into()));
    }
    let n = ds.n_train();
    let target_loss = clean_total_loss(&target.model, ds);
    let mut trainer = clean.trainer();
    let mut model = clean.model.clone();
    let mut poisons: Vec<Poison> = Vec::new();
    let mut trace = Vec::new();
    let mut lb = 0usize;
    let mut lb_degenerate = false;
    let mut stall = 0usize;

    let stop = loop {
        let err = subpop_error(subpop, ds, &model)?;
        let best = feasible.max_loss_difference(&model, &target.model)?;
        let bound = bound_from(target_loss, clean_total_loss(&model, ds), best.gain, &model, &target.model);
        lb = lb.max(bound.value);
        lb_degenerate |= bound.degenerate;

        match config.stop {
            StopRule::Success if err >= config.r => break StopReason::Success,
            StopRule::Converge { tol } if model.distance(&target.model) <= tol => break StopReason::Converged,
            _ => {}
        }
        if poisons.len() >= config.budget {
            break StopReason::Budget;
        }
        if best.gain <= STALL_GAIN {
            stall += 1;
            if stall >= config.stall_iters {
                return Err(Error::NoProgress(format!(
                    "no feasible point separates the current model from the target after {} poisons",
                    poisons.len()
                )));
            }
        } else {
            stall = 0;
        }

        trainer.add_point(&best.x, best.y)?;
        model = trainer.solve()?.model;
        let clean_acc = evaluate(&model, &ds.test_x, &ds.test_y)?.accuracy;
        let event = TraceEvent {
            iter: poisons.len() + 1,
            poison: best.x.clone(),
            y: best.y,
            subpop_err: subpop_error(subpop, ds, &model)?,
            clean_acc,
            w: model.w.clone(),
            b: model.b,
        };
        poisons.push(Poison { x: best.x, y: best.y });
        let flow = observer(&event);
        trace.push(event);
        if flow.is_break() {
            break StopReason::Cancelled;
        }
    };

    let err = subpop_error(subpop, ds, &model)?;
    let converged = match config.stop {
        StopRule::Converge { tol } => model.distance(&target.model) <= tol,
        StopRule::Success => false,
    };
    Ok(AttackRecord {
        id: format!("{}/{}/{}/L{:.2}", ds.tag(), subpop.id, phase.as_str(), target.level),
        dataset: ds.tag(),
        subpop: subpop.id.clone(),
        phase,
        target: target.clone(),
        difficulty: poisons.len() as f64 / n as f64,
        induced: model,
        lb,
        lb_degenerate,
        success: err >= config.r,
        converged,
        subpop_error: err,
        n_clean: n,
        poisons,
        trace,
        stop,
    })
}
