//! Poisoning attacks against hinge-loss linear ERM.
//!
//! [`mtp_attack`] greedily adds the feasible point with the largest loss
//! difference between the current poisoned model and the target, and
//! certifies a lower bound on the poisons any attack needs to reach the
//! target. [`kkt_attack`] places a fixed number of poisons so the target
//! satisfies the stationarity conditions of the poisoned objective.

mod feasible;
mod kkt;
mod lower_bound;
mod mtp;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataspace::Label;
use crate::learner::{LinearModel, Poison};
use crate::targets::TargetModel;
use crate::{Error, Result};

pub use feasible::{BestPoint, FeasibleMode, FeasibleSet};
pub use kkt::{kkt_attack, kkt_plus_grid, kkt_solve, KktConfig, KktSolution};
pub use lower_bound::{lower_bound, LowerBound};
pub use mtp::{mtp_attack, mtp_attack_observed, MtpConfig, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "MTP-1")]
    Mtp1,
    #[serde(rename = "MTP-2")]
    Mtp2,
    #[serde(rename = "KKT")]
    Kkt,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Mtp1 => "MTP-1",
            Phase::Mtp2 => "MTP-2",
            Phase::Kkt => "KKT",
        }
    }
}

/// One committed attack iteration, also the service's stream event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iter: usize,
    pub poison: Vec<f64>,
    pub y: Label,
    pub subpop_err: f64,
    pub clean_acc: f64,
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub id: String,
    pub dataset: String,
    pub subpop: String,
    pub phase: Phase,
    pub target: TargetModel,
    pub poisons: Vec<Poison>,
    pub induced: LinearModel,
    /// Running-maximum certified lower bound (MTP), or the bound of the MTP
    /// run a KKT size was drawn from.
    pub lb: usize,
    /// Some iteration had a non-positive loss-difference denominator.
    pub lb_degenerate: bool,
    pub success: bool,
    /// The run ended within the target-convergence distance.
    pub converged: bool,
    pub subpop_error: f64,
    pub difficulty: f64,
    pub n_clean: usize,
    pub trace: Vec<TraceEvent>,
    /// Why the run stopped.
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Success,
    Converged,
    Budget,
    NoProgress,
    Fixed,
    /// Stopped by the caller.
    Cancelled,
}

impl AttackRecord {
    pub fn n_poisons(&self) -> usize {
        self.poisons.len()
    }

    pub fn poisons_by_label(&self) -> (usize, usize) {
        let pos = self.poisons.iter().filter(|p| p.y == Label::Pos).count();
        (pos, self.poisons.len() - pos)
    }
}

pub fn append_records(path: &Path, records: &[AttackRecord]) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<AttackRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
