use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{append_jsonl, write_jsonl, EpochRecord, Phase, RunRecord, StepRecord};
use super::schedule::{two_step_budget, ScheduleMode, StepSchedule, TrainSchedule};
use super::sgd::Sgd;
use super::steps::{step_one_gradients, step_two_gradients, StepOutput};
use crate::augment::{AugmentSpec, StandardAugment};
use crate::data::{iterate_batches, Batch, SampleSet};
use crate::error::{OpgError, Result};
use crate::eval::{auroc, probe_accuracy, score_probe, Probe, ScoreKind};
use crate::losses::LossWeights;
use crate::model::{Checkpoint, ModelState, TensorRecord};
use crate::pairing::PolicyMode;
use crate::rng;

pub const RUN_RECORD_FILE: &str = "run_record.jsonl";
pub const STEP_LOG_FILE: &str = "steps.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_POINTER: &str = "latest";

/// Everything the training loop needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    pub standard: StandardAugment,
    pub pseudo: AugmentSpec,
    pub policy: PolicyMode,
    /// AUROC cadence in epochs; 0 evaluates only at phase ends.
    pub auroc_every: usize,
    pub out_dir: Option<PathBuf>,
}

impl TrainOptions {
    pub fn new(schedule: TrainSchedule) -> Self {
        TrainOptions {
            schedule,
            standard: StandardAugment::default(),
            pseudo: AugmentSpec::default(),
            policy: PolicyMode::default(),
            auroc_every: 5,
            out_dir: None,
        }
    }

    pub fn plan(&self) -> Vec<Phase> {
        match self.schedule.mode {
            ScheduleMode::TwoStep => vec![Phase::StepOne, Phase::StepTwo],
            ScheduleMode::ColdStart => vec![Phase::ColdStart],
        }
    }

    fn phase_schedule(&self, phase: Phase) -> &StepSchedule {
        match phase {
            Phase::StepOne => &self.schedule.step1,
            Phase::StepTwo | Phase::ColdStart => &self.schedule.step2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub plan: Vec<Phase>,
    /// Index into `plan`; equal to `plan.len()` once training is done.
    pub phase_index: usize,
    /// Completed epochs in the current phase.
    pub phase_epoch: usize,
    /// Completed epochs in the run.
    pub epoch: usize,
    /// Remaining gradient steps for budget-limited phases.
    pub steps_left: Option<u64>,
    pub plateau_best: Option<f64>,
    pub plateau_wait: usize,
}

impl Progress {
    pub fn phase(&self) -> Option<Phase> {
        self.plan.get(self.phase_index).copied()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    schedule: TrainSchedule,
    progress: Progress,
    records: Vec<EpochRecord>,
    steps: Vec<StepRecord>,
}

/// Owns the model during training and drives the phase plan epoch by epoch.
pub struct Trainer<'a> {
    opts: TrainOptions,
    train: &'a SampleSet,
    probe: Option<&'a Probe>,
    model: ModelState,
    sgd: Sgd,
    progress: Progress,
    record: RunRecord,
    steps: Vec<StepRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: ModelState, train: &'a SampleSet, probe: Option<&'a Probe>, opts: TrainOptions) -> Result<Self> {
        let plan = opts.plan();
        Self::with_plan(model, train, probe, opts, plan)
    }

    /// Runs an explicit phase sequence instead of the one implied by the mode.
    pub fn with_plan(
        model: ModelState,
        train: &'a SampleSet,
        probe: Option<&'a Probe>,
        opts: TrainOptions,
        plan: Vec<Phase>,
    ) -> Result<Self> {
        opts.schedule.validate()?;
        opts.pseudo.validate()?;
        if train.len() < 2 {
            return Err(OpgError::validation("training needs at least 2 samples"));
        }
        if let Some(y) = train.samples.iter().map(|s| s.label).find(|&y| y >= model.spec.r) {
            return Err(OpgError::validation(format!(
                "training label {y} does not fit r = {}",
                model.spec.r
            )));
        }
        let sgd = Sgd::new(opts.schedule.momentum, opts.schedule.weight_decay);
        let mut t = Trainer {
            opts,
            train,
            probe,
            model,
            sgd,
            progress: Progress {
                plan,
                phase_index: 0,
                phase_epoch: 0,
                epoch: 0,
                steps_left: None,
                plateau_best: None,
                plateau_wait: 0,
            },
            record: RunRecord::default(),
            steps: Vec::new(),
        };
        t.enter_phase();
        t.reset_logs()?;
        Ok(t)
    }

    /// Continues from a checkpoint written by a trainer with the same schedule.
    pub fn resume(ck: &Checkpoint, train: &'a SampleSet, probe: Option<&'a Probe>, opts: TrainOptions) -> Result<Self> {
        let state: TrainerState = match &ck.trainer {
            Some(v) => serde_json::from_value(v.clone())?,
            None => {
                return Err(OpgError::validation(
                    "checkpoint carries no trainer state to resume from",
                ))
            }
        };
        if state.schedule != opts.schedule {
            return Err(OpgError::config(
                "schedule",
                "checkpoint was written with a different schedule",
            ));
        }
        let model = ck.to_model()?;
        let mut t = Self::with_plan(model, train, probe, opts, state.progress.plan.clone())?;
        t.progress = state.progress;
        t.record = RunRecord { epochs: state.records };
        t.steps = state.steps;
        t.sgd.buffers = ck.momentum_buffers()?;
        t.reset_logs()?;
        Ok(t)
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn into_model(self) -> ModelState {
        self.model
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn step_log(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn finished(&self) -> bool {
        self.progress.phase().is_none()
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(())
    }

    fn enter_phase(&mut self) {
        self.progress.phase_epoch = 0;
        self.progress.plateau_best = None;
        self.progress.plateau_wait = 0;
        self.progress.steps_left = match self.progress.phase() {
            Some(Phase::ColdStart) => Some(two_step_budget(&self.opts.schedule, self.train.len())),
            _ => None,
        };
    }

    fn reset_logs(&self) -> Result<()> {
        if let Some(dir) = &self.opts.out_dir {
            let ckdir = dir.join(CHECKPOINT_DIR);
            fs::create_dir_all(&ckdir).map_err(|e| OpgError::io(&ckdir, e))?;
            write_jsonl(&dir.join(RUN_RECORD_FILE), &self.record.epochs)?;
            write_jsonl(&dir.join(STEP_LOG_FILE), &self.steps)?;
        }
        Ok(())
    }

    /// Snapshot of model, optimizer and loop state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.momentum = self
            .sgd
            .buffers
            .iter()
            .map(|b| TensorRecord::encode(vec![b.len()], b))
            .collect();
        let state = TrainerState {
            schedule: self.opts.schedule.clone(),
            progress: self.progress.clone(),
            records: self.record.epochs.clone(),
            steps: self.steps.clone(),
        };
        ck.trainer = Some(serde_json::to_value(state).expect("trainer state serializes"));
        ck
    }

    fn save_checkpoint(&self, name: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.opts.out_dir else {
            return Ok(None);
        };
        let ckdir = dir.join(CHECKPOINT_DIR);
        let path = ckdir.join(name);
        self.checkpoint().save(&path)?;
        let pointer = ckdir.join(LATEST_POINTER);
        fs::write(&pointer, name).map_err(|e| OpgError::io(&pointer, e))?;
        Ok(Some(path))
    }

    fn abort_non_finite(&self, out: &StepOutput) -> OpgError {
        match self.save_checkpoint("diagnostic.json") {
            Ok(Some(p)) => log::error!("non-finite loss or weights; diagnostic checkpoint at {}", p.display()),
            Ok(None) => log::error!("non-finite loss"),
            Err(e) => log::error!("non-finite loss; diagnostic checkpoint failed: {e}"),
        }
        OpgError::NonFinite {
            step: self.model.step_counter,
            ce: out.report.ce,
            bce: out.report.bce,
        }
    }

    /// Trains one epoch of the current phase and handles phase transitions.
    pub fn run_epoch(&mut self) -> Result<()> {
        let Some(phase) = self.progress.phase() else {
            return Ok(());
        };
        let sched = self.opts.phase_schedule(phase).clone();
        let pe = self.progress.phase_epoch;
        let lr = sched.lr_at(pe);
        let seed = self.opts.schedule.seed;
        let tags = [phase.tag(), pe as u64];
        let shuffle_seed = rng::derive_seed(seed, &[tags[0], tags[1], 1]);
        let mut rng = rng::stream(seed, &[tags[0], tags[1], 2, self.opts.pseudo.rng_seed]);

        let (mut ce_sum, mut bce_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let (mut correct, mut seen, mut n_steps) = (0usize, 0usize, 0usize);
        for batch in iterate_batches(self.train, sched.batch_size, shuffle_seed)? {
            if batch.len() < 2 {
                continue;
            }
            if self.progress.steps_left == Some(0) {
                break;
            }
            let augmented = Batch::new(
                batch
                    .samples()
                    .iter()
                    .map(|s| self.opts.standard.apply(s, &mut rng))
                    .collect(),
            )?;
            let out = match phase {
                Phase::StepOne => step_one_gradients(&mut self.model, &augmented)?,
                Phase::StepTwo | Phase::ColdStart => step_two_gradients(
                    &mut self.model,
                    &augmented,
                    &self.opts.pseudo,
                    self.opts.policy,
                    LossWeights::STEP_TWO,
                    self.opts.schedule.eps,
                    &mut rng,
                )?,
            };
            if !out.report.is_finite() {
                return Err(self.abort_non_finite(&out));
            }
            self.sgd.step(&mut self.model, &out.grads, lr)?;
            if !self.model.all_finite() {
                return Err(self.abort_non_finite(&out));
            }
            if let Some(left) = self.progress.steps_left.as_mut() {
                *left -= 1;
            }
            let bce = (phase != Phase::StepOne).then_some(out.report.bce);
            let row = StepRecord {
                step: self.model.step_counter,
                epoch: self.progress.epoch + 1,
                step_id: phase.step_id(),
                ce: out.report.ce,
                bce,
                total: out.report.total,
            };
            if let Some(dir) = &self.opts.out_dir {
                append_jsonl(&dir.join(STEP_LOG_FILE), &row)?;
            }
            self.steps.push(row);
            ce_sum += out.report.ce;
            bce_sum += out.report.bce;
            total_sum += out.report.total;
            correct += out.correct;
            seen += out.n_original;
            n_steps += 1;
        }
        let denom = n_steps.max(1) as f64;
        let mean_ce = ce_sum / denom;

        self.progress.phase_epoch += 1;
        self.progress.epoch += 1;
        let phase_done = match phase {
            Phase::ColdStart => self.progress.steps_left == Some(0),
            _ => self.progress.phase_epoch >= sched.epochs || (phase == Phase::StepOne && self.plateaued(mean_ce)),
        };

        let (accuracy, auroc_v, msp_v) = self.probe_metrics(phase_done)?;
        let mut rec = EpochRecord {
            epoch: self.progress.epoch,
            phase,
            step_id: phase.step_id(),
            phase_epoch: self.progress.phase_epoch,
            steps: self.model.step_counter,
            lr,
            lr_decayed: sched.decays_at(pe),
            mean_ce,
            mean_bce: (phase != Phase::StepOne).then_some(bce_sum / denom),
            mean_total: total_sum / denom,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            accuracy,
            auroc: auroc_v,
            msp_auroc: msp_v,
            checkpoint: None,
        };
        let every = self.opts.schedule.checkpoint_every;
        let ck_name = if phase_done {
            Some(match phase {
                Phase::StepOne => "step1_end.json".to_string(),
                Phase::StepTwo => "step2_end.json".to_string(),
                Phase::ColdStart => "cold_start_end.json".to_string(),
            })
        } else if every > 0 && self.progress.epoch.is_multiple_of(every) {
            Some(format!("epoch_{:04}.json", self.progress.epoch))
        } else {
            None
        };
        if self.opts.out_dir.is_some() {
            rec.checkpoint = ck_name.clone().map(|n| format!("{CHECKPOINT_DIR}/{n}"));
        }
        log::info!(
            "epoch {} ({:?} {}) lr {:.2e} ce {:.4} bce {} acc {:.3}",
            rec.epoch,
            phase,
            rec.phase_epoch,
            lr,
            rec.mean_ce,
            rec.mean_bce.map_or("-".into(), |b| format!("{b:.4}")),
            rec.train_accuracy
        );
        self.record.epochs.push(rec.clone());
        if phase_done {
            self.progress.phase_index += 1;
            self.enter_phase();
            if self.progress.phase() == Some(Phase::StepTwo) && self.opts.schedule.reset_momentum {
                self.sgd.reset();
            }
        }
        if let Some(name) = ck_name {
            self.save_checkpoint(&name)?;
        }
        if let Some(dir) = &self.opts.out_dir {
            append_jsonl(&dir.join(RUN_RECORD_FILE), &rec)?;
        }
        Ok(())
    }

    fn plateaued(&mut self, mean_ce: f64) -> bool {
        let Some(p) = self.opts.schedule.plateau else {
            return false;
        };
        match self.progress.plateau_best {
            Some(best) if mean_ce > best - p.min_delta => {
                self.progress.plateau_wait += 1;
            }
            _ => {
                self.progress.plateau_best = Some(mean_ce);
                self.progress.plateau_wait = 0;
            }
        }
        self.progress.plateau_wait >= p.patience
    }

    fn probe_metrics(&self, phase_done: bool) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        let Some(probe) = self.probe else {
            return Ok((None, None, None));
        };
        let acc = probe_accuracy(&self.model, probe)?;
        let every = self.opts.auroc_every;
        let due = phase_done || (every > 0 && self.progress.phase_epoch.is_multiple_of(every));
        if !due || !probe.has_unseen() {
            return Ok((Some(acc), None, None));
        }
        let s = auroc(&score_probe(&self.model, probe, ScoreKind::Detection)?)?;
        let m = auroc(&score_probe(&self.model, probe, ScoreKind::MaxSoftmax)?)?;
        Ok((Some(acc), Some(s), Some(m)))
    }
}

/// Reads the checkpoint named by the `latest` pointer of a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let ckdir = run_dir.join(CHECKPOINT_DIR);
    let pointer = ckdir.join(LATEST_POINTER);
    let name = fs::read_to_string(&pointer).map_err(|e| OpgError::io(&pointer, e))?;
    Ok(ckdir.join(name.trim()))
}

fn run_plan(
    model: ModelState,
    train: &SampleSet,
    opts: &TrainOptions,
    plan: Vec<Phase>,
) -> Result<(ModelState, RunRecord)> {
    let mut t = Trainer::with_plan(model, train, None, opts.clone(), plan)?;
    t.run()?;
    let record = t.record().clone();
    Ok((t.into_model(), record))
}

/// CE-only warm-up over the seen sub-head.
pub fn train_step1(model: ModelState, train: &SampleSet, opts: &TrainOptions) -> Result<(ModelState, RunRecord)> {
    run_plan(model, train, opts, vec![Phase::StepOne])
}

/// Joint CE + pairwise BCE training on original and pseudo-unseen samples.
pub fn train_step2(model: ModelState, train: &SampleSet, opts: &TrainOptions) -> Result<(ModelState, RunRecord)> {
    run_plan(model, train, opts, vec![Phase::StepTwo])
}

/// Joint loss from initialization, with the two-step arm's gradient-step budget.
pub fn train_cold_start(model: ModelState, train: &SampleSet, opts: &TrainOptions) -> Result<(ModelState, RunRecord)> {
    run_plan(model, train, opts, vec![Phase::ColdStart])
}
