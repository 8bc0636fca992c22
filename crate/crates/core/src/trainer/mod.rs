mod record;
mod run;
mod schedule;
mod sgd;
mod steps;

pub use record::{read_jsonl, EpochRecord, Phase, RunRecord, StepRecord};
pub use run::{
    latest_checkpoint, train_cold_start, train_step1, train_step2, Progress, TrainOptions, Trainer, CHECKPOINT_DIR,
    LATEST_POINTER, RUN_RECORD_FILE, STEP_LOG_FILE,
};
pub use schedule::{batches_per_epoch, two_step_budget, Plateau, ScheduleMode, StepSchedule, TrainSchedule};
pub use sgd::Sgd;
pub use steps::{step_one_gradients, step_two_gradients, StepOutput};
