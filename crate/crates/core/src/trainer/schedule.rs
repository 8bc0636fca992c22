use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};

/// Epoch budget and learning-rate plan for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// 0-based epochs at whose start the rate is divided by `lr_decay_factor`.
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
}

fn default_decay_factor() -> f64 {
    10.0
}

impl StepSchedule {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, lr_decay_epochs: Vec<usize>) -> Self {
        StepSchedule {
            epochs,
            batch_size,
            lr,
            lr_decay_epochs,
            lr_decay_factor: default_decay_factor(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.lr_decay_factor.powi(n as i32)
    }

    pub fn decays_at(&self, epoch: usize) -> bool {
        self.lr_decay_epochs.contains(&epoch)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let err = |m: String| Err(OpgError::config(field, m));
        if self.epochs == 0 {
            return err("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return err("batch_size must be >= 2".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay_factor >= 1.0 && self.lr_decay_factor.is_finite()) {
            return err(format!("lr_decay_factor must be >= 1, got {}", self.lr_decay_factor));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return err("lr_decay_epochs must be strictly increasing".into());
        }
        if let Some(&e) = self.lr_decay_epochs.iter().find(|&&e| e == 0 || e >= self.epochs) {
            return err(format!("decay epoch {e} is outside 1..{}", self.epochs));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    TwoStep,
    ColdStart,
}

/// Ends step one early once the mean CE stops improving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plateau {
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

fn default_patience() -> usize {
    10
}
fn default_min_delta() -> f64 {
    1e-3
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            patience: default_patience(),
            min_delta: default_min_delta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    #[serde(default)]
    pub mode: ScheduleMode,
    pub seed: u64,
    pub step1: StepSchedule,
    pub step2: StepSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Clear momentum buffers when step two starts.
    #[serde(default = "default_true")]
    pub reset_momentum: bool,
    /// Clamp for pairwise dot products in the BCE term.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Extra checkpoint every K epochs; 0 keeps only the phase-end ones.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub plateau: Option<Plateau>,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    crate::losses::DEFAULT_EPS
}

impl TrainSchedule {
    fn with_steps(seed: u64, step1: StepSchedule, step2: StepSchedule) -> Self {
        TrainSchedule {
            mode: ScheduleMode::TwoStep,
            seed,
            step1,
            step2,
            momentum: default_momentum(),
            weight_decay: 0.0,
            reset_momentum: true,
            eps: default_eps(),
            checkpoint_every: 0,
            plateau: None,
        }
    }

    pub fn paper_cifar(seed: u64) -> Self {
        Self::with_steps(
            seed,
            StepSchedule::new(200, 128, 0.01, vec![100, 150]),
            StepSchedule::new(100, 256, 0.01, vec![]),
        )
    }

    pub fn paper_tiny(seed: u64) -> Self {
        Self::with_steps(
            seed,
            StepSchedule::new(500, 128, 0.01, vec![300]),
            StepSchedule::new(200, 128, 0.01, vec![100]),
        )
    }

    pub fn desk(seed: u64) -> Self {
        let mut s = Self::with_steps(
            seed,
            StepSchedule::new(30, 64, 0.05, vec![20]),
            StepSchedule::new(20, 64, 0.01, vec![]),
        );
        s.weight_decay = 5e-4;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.step1.validate("schedule.step1")?;
        self.step2.validate("schedule.step2")?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OpgError::config("schedule.momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(OpgError::config("schedule.weight_decay", "must be >= 0"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(OpgError::config("schedule.eps", "must be in (0, 0.5)"));
        }
        if let Some(p) = &self.plateau {
            if p.patience == 0 || p.min_delta.is_nan() || p.min_delta < 0.0 {
                return Err(OpgError::config(
                    "schedule.plateau",
                    "patience must be >= 1 and min_delta >= 0",
                ));
            }
        }
        Ok(())
    }
}

/// Optimizer steps in one epoch. A trailing batch of one sample is dropped
/// because batch statistics need two.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= 2)
}

/// Gradient steps of a full two-step run, used to size the cold-start arm.
pub fn two_step_budget(schedule: &TrainSchedule, n_train: usize) -> u64 {
    (schedule.step1.epochs * batches_per_epoch(n_train, schedule.step1.batch_size)
        + schedule.step2.epochs * batches_per_epoch(n_train, schedule.step2.batch_size)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets() {
        let c = TrainSchedule::paper_cifar(0);
        assert_eq!((c.step1.epochs, c.step1.batch_size, c.step1.lr), (200, 128, 0.01));
        assert_eq!(c.step1.lr_decay_epochs, vec![100, 150]);
        assert_eq!((c.step2.epochs, c.step2.batch_size), (100, 256));
        assert!(c.step2.lr_decay_epochs.is_empty());
        let t = TrainSchedule::paper_tiny(0);
        assert_eq!((t.step1.epochs, t.step1.lr_decay_epochs.clone()), (500, vec![300]));
        assert_eq!(
            (t.step2.epochs, t.step2.batch_size, t.step2.lr_decay_epochs.clone()),
            (200, 128, vec![100])
        );
        for s in [c, t, TrainSchedule::desk(0)] {
            s.validate().unwrap();
        }
    }

    #[test]
    fn lr_decays_by_factor_at_listed_epochs() {
        let s = StepSchedule::new(200, 128, 0.01, vec![100, 150]);
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(99), 0.01);
        assert!((s.lr_at(100) - 1e-3).abs() < 1e-15);
        assert!((s.lr_at(199) - 1e-4).abs() < 1e-15);
        assert!(s.decays_at(150) && !s.decays_at(151));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut s = StepSchedule::new(10, 8, 0.1, vec![5, 3]);
        assert!(s.validate("x").is_err());
        s.lr_decay_epochs = vec![10];
        assert!(s.validate("x").is_err());
        s.lr_decay_epochs = vec![];
        s.lr_decay_factor = 0.5;
        assert!(s.validate("x").is_err());
        s.lr_decay_factor = 10.0;
        s.lr = 0.0;
        assert!(s.validate("x").is_err());
    }

    #[test]
    fn budget_counts_usable_batches() {
        assert_eq!(batches_per_epoch(10, 4), 3);
        assert_eq!(batches_per_epoch(9, 4), 2);
        assert_eq!(batches_per_epoch(8, 4), 2);
        let mut s = TrainSchedule::desk(0);
        s.step1 = StepSchedule::new(3, 4, 0.1, vec![]);
        s.step2 = StepSchedule::new(2, 8, 0.1, vec![]);
        assert_eq!(two_step_budget(&s, 10), 3 * 3 + 2 * 2);
    }
}
