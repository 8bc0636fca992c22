use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use opg_core::bench::{write_benchmark, BenchSpec};
use opg_core::config::{Experiment, RunConfig, CONFIG_SNAPSHOT, DATA_ROOT_ENV};
use opg_core::data::{load_manifest, make_split, Holdout, SampleSet, SplitSpec};
use opg_core::eval::{
    accuracy_after_steps, evaluate, export_features, plot_curves, plot_histogram, pseudo_unseen_set, run_ablation,
    EvalReport, FeatureOrigin, Probe, ScoredSample, TrueOrigin, DEFAULT_BINS,
};
use opg_core::model::{Checkpoint, ModelState};
use opg_core::trainer::{latest_checkpoint, RunRecord, Trainer, CHECKPOINT_DIR, LATEST_POINTER, RUN_RECORD_FILE};
use opg_core::OpgError;

use crate::{AblateArgs, ConfigSource, EvalArgs, InitArgs, ReportArgs, SynthArgs, TrainArgs};

/// A bad invocation: missing inputs, conflicting flags. Exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn env_data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(src: &ConfigSource) -> Result<RunConfig> {
    let mut cfg = if let Some(path) = &src.config {
        require_file(path, "config file")?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(d) = &src.data {
            cfg.data.root = absolute(d)?;
        }
        if let Some(s) = &src.split {
            cfg.split.path = absolute(s)?;
        }
        cfg
    } else if let Some(preset) = src.preset {
        let data = src
            .data
            .clone()
            .or_else(env_data_root)
            .ok_or_else(|| usage(format!("--preset needs --data or {DATA_ROOT_ENV}")))?;
        let split = src.split.as_deref().expect("clap enforces --split with --preset");
        RunConfig::preset(preset, absolute(&data)?, absolute(split)?, src.seed.unwrap_or(0))
    } else {
        return Err(usage("one of --config or --preset is required"));
    };
    if let Some(seed) = src.seed {
        cfg.schedule.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_scores(path: &Path, scored: &[ScoredSample]) -> Result<()> {
    let mut out = String::from("id\torigin\tlabel\tscore\tpredicted\n");
    for s in scored {
        let origin = match s.origin {
            TrueOrigin::Seen => "seen",
            TrueOrigin::Unseen => "unseen",
        };
        let label = s.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        out.push_str(&format!(
            "{}\t{origin}\t{label}\t{:.17e}\t{}\n",
            s.id, s.score, s.predicted
        ));
    }
    write_text(path, &out)
}

fn write_eval_outputs(dir: &Path, report: &EvalReport, scored: &[ScoredSample]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    report.write_json(&dir.join("report.json"))?;
    write_scores(&dir.join("scores.tsv"), scored)?;
    plot_histogram(&report.histogram, "Detection score", &dir.join("histogram.svg"))?;
    plot_histogram(
        &report.msp_histogram,
        "Max-softmax score",
        &dir.join("msp_histogram.svg"),
    )?;
    Ok(())
}

fn dump_features(
    model: &ModelState,
    seen: &SampleSet,
    unseen: &SampleSet,
    cfg: Option<&RunConfig>,
    path: &Path,
) -> Result<()> {
    let (spec, seed) = cfg.map_or((Default::default(), 0), |c| (c.augment.pseudo_unseen, c.schedule.seed));
    let pseudo = pseudo_unseen_set(seen, &spec, seed)?;
    let dump = export_features(
        model,
        &[
            (FeatureOrigin::Seen, seen),
            (FeatureOrigin::PseudoUnseen, &pseudo),
            (FeatureOrigin::Unseen, unseen),
        ],
        path,
    )?;
    log::info!(
        "wrote {} feature rows to {} (sha256 {})",
        dump.records,
        path.display(),
        dump.sha256
    );
    Ok(())
}

fn plot_run(record: &RunRecord, dir: &Path) -> Result<()> {
    let pick = |f: fn(&opg_core::trainer::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        record
            .epochs
            .iter()
            .filter_map(|e| f(e).map(|v| (e.epoch as f64, v)))
            .collect()
    };
    let auroc = pick(|e| e.auroc);
    if !auroc.is_empty() {
        plot_curves(
            &[
                ("detection".to_string(), auroc),
                ("max-softmax".to_string(), pick(|e| e.msp_auroc)),
            ],
            "Probe AUROC by epoch",
            "AUROC",
            &dir.join("auroc_curve.svg"),
        )?;
    }
    if !record.epochs.is_empty() {
        plot_curves(
            &[
                ("total".to_string(), pick(|e| Some(e.mean_total))),
                ("ce".to_string(), pick(|e| Some(e.mean_ce))),
                ("bce".to_string(), pick(|e| e.mean_bce)),
            ],
            "Mean training loss by epoch",
            "loss",
            &dir.join("loss_curve.svg"),
        )?;
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!(
        "auroc {:.4}  msp_auroc {:.4}  accuracy {:.4}  seen {}  unseen {}",
        report.auroc, report.msp_auroc, report.closed_set_accuracy, report.counts.seen, report.counts.unseen
    );
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.source)?;
    let exp = Experiment::prepare(cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let resume_from = match &a.resume {
        None => None,
        Some(Some(p)) => {
            require_file(p, "checkpoint")?;
            Some(p.clone())
        }
        Some(None) => {
            if !a.out.join(CHECKPOINT_DIR).join(LATEST_POINTER).exists() {
                return Err(usage(format!("no checkpoint to resume from in {}", a.out.display())));
            }
            Some(latest_checkpoint(&a.out)?)
        }
    };

    let snapshot = a.out.join(CONFIG_SNAPSHOT);
    let text = exp.config.to_toml()?;
    if resume_from.is_some() && snapshot.exists() {
        let previous = fs::read_to_string(&snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
        if previous != text {
            return Err(usage(format!(
                "config differs from the snapshot in {}; resume with the same config",
                a.out.display()
            )));
        }
    }
    write_text(&snapshot, &text)?;
    fs::copy(&exp.config.split.path, a.out.join("split.toml"))
        .with_context(|| format!("copying {}", exp.config.split.path.display()))?;

    let opts = exp.config.train_options(Some(a.out.clone()));
    let train = &exp.sets.seen_train;
    let mut trainer = match &resume_from {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.spec != exp.model_spec {
                return Err(OpgError::validation(format!(
                    "checkpoint {} has a different model layout than the config",
                    path.display()
                ))
                .into());
            }
            log::info!("resuming from {}", path.display());
            Trainer::resume(&ck, train, Some(&exp.probe), opts)?
        }
        None => {
            let model = ModelState::new(exp.model_spec.clone(), exp.config.schedule.seed)?;
            Trainer::new(model, train, Some(&exp.probe), opts)?
        }
    };
    trainer.run()?;

    let (report, scored) = evaluate(trainer.model(), &exp.probe, exp.config.eval.histogram_bins)?;
    write_eval_outputs(&a.out, &report, &scored)?;
    plot_run(trainer.record(), &a.out)?;
    if exp.config.eval.export_features {
        dump_features(
            trainer.model(),
            &exp.sets.seen_test,
            &exp.sets.unseen_test,
            Some(&exp.config),
            &a.out.join("features.tsv"),
        )?;
    }
    print_report(&report);
    Ok(())
}

/// The config snapshot of the run a checkpoint belongs to, if any.
fn find_snapshot(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(3)
        .map(|d| d.join(CONFIG_SNAPSHOT))
        .find(|p| p.exists())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.split, "split file")?;
    let cfg = match (&a.config, find_snapshot(&a.checkpoint)) {
        (Some(p), _) => {
            require_file(p, "config file")?;
            Some(RunConfig::load(p)?)
        }
        (None, Some(p)) => Some(RunConfig::load(&p).with_context(|| format!("reading snapshot {}", p.display()))?),
        (None, None) => None,
    };
    let model = ModelState::load(&a.checkpoint)?;
    let split = SplitSpec::load(&a.split)?;
    if split.r() != model.spec.r {
        return Err(OpgError::validation(format!(
            "checkpoint {} was trained with r = {} but split {} has r = {}",
            a.checkpoint.display(),
            model.spec.r,
            a.split.display(),
            split.r()
        ))
        .into());
    }
    let root = a
        .data
        .clone()
        .or_else(env_data_root)
        .or_else(|| cfg.as_ref().map(|c| c.data.root.clone()))
        .ok_or_else(|| usage(format!("no data root: pass --data, --config or set {DATA_ROOT_ENV}")))?;
    require_file(&root, "data root")?;
    let holdout = cfg.as_ref().map_or_else(Holdout::default, |c| c.data.holdout);
    let bins = cfg.as_ref().map_or(DEFAULT_BINS, |c| c.eval.histogram_bins);

    let dataset = load_manifest(&root)?;
    let sets = make_split(&dataset, &split, holdout)?;
    let probe = Probe::new(&sets.seen_test, &sets.unseen_test)?;
    let (report, scored) = evaluate(&model, &probe, bins)?;
    write_eval_outputs(&a.out, &report, &scored)?;
    if a.features || cfg.as_ref().is_some_and(|c| c.eval.export_features) {
        dump_features(
            &model,
            &sets.seen_test,
            &sets.unseen_test,
            cfg.as_ref(),
            &a.out.join("features.tsv"),
        )?;
    }
    print_report(&report);
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    require_file(&a.config, "config file")?;
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.schedule.seed = seed;
    }
    let report = run_ablation(&cfg, a.axis, &a.out)?;
    print!("{}", report.to_table());
    if report.all_failed() {
        bail!("every ablation cell failed");
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let path = a.run.join(RUN_RECORD_FILE);
    require_file(&path, "run record")?;
    let record = RunRecord::load(&path)?;
    let last = record
        .epochs
        .last()
        .ok_or_else(|| usage(format!("run record {} is empty", path.display())))?;
    let out = a.out.unwrap_or_else(|| a.run.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let steps = accuracy_after_steps(&record).ok();
    let eval_path = a.run.join("report.json");
    let eval = eval_path
        .exists()
        .then(|| EvalReport::read_json(&eval_path))
        .transpose()?;
    let summary = json!({
        "epochs": record.epochs.len(),
        "step_transitions": record.step_transitions(),
        "decay_events": record.decay_events(),
        "final_epoch": last,
        "accuracy_after_step_one": steps.map(|s| s.0),
        "accuracy_after_step_two": steps.map(|s| s.1),
        "eval": eval.as_ref().map(|r| json!({
            "auroc": r.auroc,
            "msp_auroc": r.msp_auroc,
            "closed_set_accuracy": r.closed_set_accuracy,
        })),
    });
    write_text(
        &out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    plot_run(&record, &out)?;

    println!(
        "epochs {}  final phase {:?}  final loss {:.4}",
        record.epochs.len(),
        last.phase,
        last.mean_total
    );
    if let Some((s1, s2)) = steps {
        println!("accuracy after step one {s1:.4}  after step two {s2:.4}");
    }
    for (epoch, lr) in record.decay_events() {
        println!("lr decay at epoch {epoch} -> {lr}");
    }
    if let Some(r) = &eval {
        print_report(r);
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = BenchSpec {
        size: a.size,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        seed: a.seed,
        ..BenchSpec::default()
    };
    for p in write_benchmark(&a.out, &spec)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn init(a: InitArgs) -> Result<()> {
    let cfg = RunConfig::preset(a.preset, absolute(&a.data)?, absolute(&a.split)?, a.seed);
    let text = cfg.to_toml()?;
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
