use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::plots::plot_bars;
use super::report::evaluate;
use crate::augment::AugmentKind;
use crate::config::{Experiment, RunConfig, CONFIG_SNAPSHOT};
use crate::error::{OpgError, Result};
use crate::model::ModelState;
use crate::trainer::{Phase, RunRecord, ScheduleMode, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    AugmentationKind,
    TotalClasses,
    ScheduleMode,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 3] = [
        AblationAxis::AugmentationKind,
        AblationAxis::TotalClasses,
        AblationAxis::ScheduleMode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::AugmentationKind => "augmentation_kind",
            AblationAxis::TotalClasses => "total_classes",
            AblationAxis::ScheduleMode => "schedule_mode",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = OpgError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| OpgError::validation(format!("unknown ablation axis `{s}`")))
    }
}

/// One sweep cell: a key and the full config it trains with.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub key: String,
    pub config: RunConfig,
}

/// Expands a base config along one axis. `r` and `q` are the split's seen
/// and unseen class counts.
pub fn ablation_cells(base: &RunConfig, axis: AblationAxis, r: usize, q: usize) -> Vec<AblationCell> {
    match axis {
        AblationAxis::AugmentationKind => AugmentKind::ablation_set()
            .into_iter()
            .map(|kind| {
                let mut c = base.clone();
                c.augment.pseudo_unseen.kind = kind;
                AblationCell {
                    key: kind.name().to_string(),
                    config: c,
                }
            })
            .collect(),
        AblationAxis::TotalClasses => [1, 2, 4]
            .into_iter()
            .map(|m| {
                let total = m * (r + q);
                let mut c = base.clone();
                c.model.r_prime = Some(total - r);
                c.model.head_width = None;
                AblationCell {
                    key: format!("total_{total}"),
                    config: c,
                }
            })
            .collect(),
        AblationAxis::ScheduleMode => [ScheduleMode::TwoStep, ScheduleMode::ColdStart]
            .into_iter()
            .map(|mode| {
                let mut c = base.clone();
                c.schedule.mode = mode;
                let key = match mode {
                    ScheduleMode::TwoStep => "two_step",
                    ScheduleMode::ColdStart => "cold_start",
                };
                AblationCell {
                    key: key.to_string(),
                    config: c,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub auroc: Option<f64>,
    pub msp_auroc: Option<f64>,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub cells: Vec<CellResult>,
}

impl AblationReport {
    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_some())
    }

    /// Tab-separated table, one row per cell.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::from("cell\tauroc\tmsp_auroc\taccuracy\tstatus\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.key,
                fmt(c.auroc),
                fmt(c.msp_auroc),
                fmt(c.accuracy),
                c.error.as_deref().unwrap_or("ok")
            ));
        }
        out
    }
}

fn run_cell(exp: &Experiment, cell: &AblationCell, dir: &Path) -> Result<CellResult> {
    let spec = cell.config.model_spec(exp.split.r(), exp.model_spec.input_shape)?;
    fs::create_dir_all(dir).map_err(|e| OpgError::io(dir, e))?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, cell.config.to_toml()?).map_err(|e| OpgError::io(&snapshot, e))?;
    let model = ModelState::new(spec, cell.config.schedule.seed)?;
    let opts = cell.config.train_options(Some(dir.to_path_buf()));
    let mut t = Trainer::new(model, &exp.sets.seen_train, Some(&exp.probe), opts)?;
    t.run()?;
    let (report, _) = evaluate(t.model(), &exp.probe, cell.config.eval.histogram_bins)?;
    report.write_json(&dir.join("report.json"))?;
    Ok(CellResult {
        key: cell.key.clone(),
        auroc: Some(report.auroc),
        msp_auroc: Some(report.msp_auroc),
        accuracy: Some(report.closed_set_accuracy),
        error: None,
    })
}

/// Trains one run per cell under `out_dir/<key>` and writes the cell table
/// and a bar chart. Failed cells are recorded and the sweep continues.
pub fn run_ablation(base: &RunConfig, axis: AblationAxis, out_dir: &Path) -> Result<AblationReport> {
    let exp = Experiment::prepare(base.clone())?;
    let cells = ablation_cells(base, axis, exp.split.r(), exp.split.q());
    let mut results = Vec::with_capacity(cells.len());
    for cell in &cells {
        log::info!("ablation {axis}: cell {}", cell.key);
        let res = run_cell(&exp, cell, &out_dir.join(&cell.key)).unwrap_or_else(|e| {
            log::error!("ablation cell {} failed: {e}", cell.key);
            CellResult {
                key: cell.key.clone(),
                auroc: None,
                msp_auroc: None,
                accuracy: None,
                error: Some(e.to_string()),
            }
        });
        results.push(res);
    }
    let report = AblationReport { axis, cells: results };
    fs::create_dir_all(out_dir).map_err(|e| OpgError::io(out_dir, e))?;
    let table = out_dir.join("ablation.tsv");
    fs::write(&table, report.to_table()).map_err(|e| OpgError::io(&table, e))?;
    let json = out_dir.join("ablation.json");
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| OpgError::io(&json, e))?;
    let bars: Vec<(String, Option<f64>)> = report.cells.iter().map(|c| (c.key.clone(), c.auroc)).collect();
    plot_bars(
        &bars,
        &format!("AUROC by {axis}"),
        "AUROC",
        &out_dir.join("ablation.svg"),
    )?;
    Ok(report)
}

/// Probe accuracy at the end of step one and at the end of step two.
pub fn accuracy_after_steps(run: &RunRecord) -> Result<(f64, f64)> {
    let pick = |phase: Phase, name: &str| -> Result<f64> {
        run.last_of(phase)
            .ok_or_else(|| OpgError::validation(format!("run has no {name} boundary")))?
            .accuracy
            .ok_or_else(|| OpgError::validation(format!("run recorded no accuracy at the {name} boundary")))
    };
    Ok((pick(Phase::StepOne, "step-one")?, pick(Phase::StepTwo, "step-two")?))
}
