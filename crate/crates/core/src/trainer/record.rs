use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    StepOne,
    StepTwo,
    ColdStart,
}

impl Phase {
    /// 1 for the CE-only warm-up, 2 for anything optimizing the joint loss.
    pub fn step_id(self) -> u8 {
        match self {
            Phase::StepOne => 1,
            Phase::StepTwo | Phase::ColdStart => 2,
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Phase::StepOne => 1,
            Phase::StepTwo => 2,
            Phase::ColdStart => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch across the whole run.
    pub epoch: usize,
    pub phase: Phase,
    pub step_id: u8,
    /// 1-based epoch within the phase.
    pub phase_epoch: usize,
    /// Optimizer steps taken so far in the run.
    pub steps: u64,
    pub lr: f64,
    pub lr_decayed: bool,
    pub mean_ce: f64,
    pub mean_bce: Option<f64>,
    pub mean_total: f64,
    pub train_accuracy: f64,
    /// Closed-set accuracy on the probe's seen samples.
    pub accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub msp_auroc: Option<f64>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub step_id: u8,
    pub ce: f64,
    pub bce: Option<f64>,
    pub total: f64,
}

/// Per-epoch log of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(RunRecord {
            epochs: read_jsonl(path)?,
        })
    }

    /// Number of places where consecutive epochs go from step 1 to step 2.
    pub fn step_transitions(&self) -> usize {
        self.epochs
            .windows(2)
            .filter(|w| w[0].step_id == 1 && w[1].step_id == 2)
            .count()
    }

    /// `(epoch, lr)` for every epoch flagged as a decay event.
    pub fn decay_events(&self) -> Vec<(usize, f64)> {
        self.epochs
            .iter()
            .filter(|e| e.lr_decayed)
            .map(|e| (e.epoch, e.lr))
            .collect()
    }

    pub fn last_of(&self, phase: Phase) -> Option<&EpochRecord> {
        self.epochs.iter().rev().find(|e| e.phase == phase)
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| OpgError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(OpgError::from))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| OpgError::io(path, e))
}

pub fn append_jsonl<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| OpgError::io(path, e))?;
    let line = serde_json::to_string(row)? + "\n";
    f.write_all(line.as_bytes()).map_err(|e| OpgError::io(path, e))
}
