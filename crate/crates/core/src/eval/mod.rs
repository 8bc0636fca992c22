mod ablation;
mod auroc;
mod features;
mod plots;
mod report;
mod score;

pub use ablation::{
    ablation_cells, accuracy_after_steps, run_ablation, AblationAxis, AblationCell, AblationReport, CellResult,
};
pub use auroc::{auroc, auroc_brute_force, auroc_from_scores};
pub use features::{export_features, file_digest, pseudo_unseen_set, FeatureDump, FeatureOrigin};
pub use plots::{plot_bars, plot_curves, plot_histogram};
pub use report::{evaluate, probe_accuracy, score_probe, Counts, EvalReport, Histogram, Probe, DEFAULT_BINS};
pub use score::{
    closed_set_accuracy, closed_set_predict, detection_score, msp_score, score_rows, ScoreKind, ScoredSample,
    TrueOrigin,
};
