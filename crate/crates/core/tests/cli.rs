use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn opg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opg"))
        .args(args)
        .env("RUST_LOG", "info")
        .env_remove("OPG_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let bench = dir.path().join("bench");
        let out = opg(&[
            "synth",
            "--out",
            p(&bench),
            "--train-per-class",
            "12",
            "--test-per-class",
            "6",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let split = bench.join("splits/split0.toml");
        let out = opg(&["init", "--preset", "desk", "--data", p(&bench), "--split", p(&split)]);
        assert!(out.status.success(), "{}", stderr(&out));
        let text = String::from_utf8(out.stdout)
            .unwrap()
            .replace("epochs = 30", "epochs = 3")
            .replace("epochs = 20", "epochs = 2")
            .replace("lr_decay_epochs = [20]", "lr_decay_epochs = [2]")
            .replace("batch_size = 64", "batch_size = 16")
            .replace("auroc_every = 5", "auroc_every = 1");
        let config = dir.path().join("toy.toml");
        fs::write(&config, text).unwrap();
        Fixture { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let mut args = vec!["train", "--config", p(&self.config), "--out", p(&out)];
        args.extend_from_slice(extra);
        opg(&args)
    }

    fn write_config(&self, name: &str, edit: impl Fn(String) -> String) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, edit(fs::read_to_string(&self.config).unwrap())).unwrap();
        path
    }
}

#[test]
fn same_seed_gives_byte_identical_run_logs() {
    let f = Fixture::new();
    for run in ["a", "b"] {
        let o = f.train(run, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["run_record.jsonl", "steps.jsonl", "report.json", "config.toml"] {
        let a = fs::read(f.path("a").join(file)).unwrap();
        let b = fs::read(f.path("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let c = f.train("c", &["--seed", "7"]);
    assert!(c.status.success());
    assert_ne!(
        fs::read(f.path("a/run_record.jsonl")).unwrap(),
        fs::read(f.path("c/run_record.jsonl")).unwrap()
    );
}

#[test]
fn run_directory_is_self_contained() {
    let f = Fixture::new();
    assert!(f.train("a", &[]).status.success());
    for file in [
        "config.toml",
        "split.toml",
        "run_record.jsonl",
        "steps.jsonl",
        "report.json",
        "scores.tsv",
        "histogram.svg",
        "msp_histogram.svg",
        "auroc_curve.svg",
        "checkpoints/step1_end.json",
        "checkpoints/step2_end.json",
        "checkpoints/latest",
    ] {
        assert!(f.path("a").join(file).exists(), "missing {file}");
    }
}

#[test]
fn resume_from_step_one_checkpoint_skips_step_one() {
    let f = Fixture::new();
    assert!(f.train("a", &[]).status.success());
    let ck = f.path("a/checkpoints/step1_end.json");
    let o = f.train("b", &["--resume", p(&ck)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(!log.contains("StepOne"), "step one re-ran:\n{log}");
    assert!(log.contains("StepTwo"));
    assert_eq!(
        fs::read(f.path("a/run_record.jsonl")).unwrap(),
        fs::read(f.path("b/run_record.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(f.path("a/report.json")).unwrap(),
        fs::read(f.path("b/report.json")).unwrap()
    );
}

#[test]
fn resume_without_checkpoint_is_a_usage_error() {
    let f = Fixture::new();
    let o = f.train("fresh", &["--resume"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no checkpoint"));
}

#[test]
fn missing_split_exits_2_and_names_the_path() {
    let f = Fixture::new();
    let cfg = f.write_config("bad.toml", |t| {
        t.lines()
            .map(|l| {
                if l.starts_with("path = ") {
                    "path = \"nowhere/split9.toml\""
                } else {
                    l
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    });
    let out = f.path("run");
    let o = opg(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/split9.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2_with_field_name() {
    let f = Fixture::new();
    let cfg = f.write_config("bad.toml", |t| {
        t.replace("momentum = 0.9", "momentum = 0.9\nnesterov = true")
    });
    let out = f.path("run");
    let o = opg(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nesterov"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_1_and_keeps_diagnostic_checkpoint() {
    let f = Fixture::new();
    let cfg = f.write_config("hot.toml", |t| t.replace("lr = 0.05", "lr = 1e30"));
    let out = f.path("run");
    let o = opg(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(out.join("checkpoints/diagnostic.json").exists());
}

#[test]
fn eval_reports_and_is_repeatable() {
    let f = Fixture::new();
    assert!(f.train("a", &[]).status.success());
    let ck = f.path("a/checkpoints/step2_end.json");
    let split = f.path("bench/splits/split0.toml");
    for dir in ["e1", "e2"] {
        let out = f.path(dir);
        let o = opg(&[
            "eval",
            "--checkpoint",
            p(&ck),
            "--split",
            p(&split),
            "--out",
            p(&out),
            "--features",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("e1/report.json")).unwrap()).unwrap();
    for key in ["auroc", "msp_auroc", "closed_set_accuracy", "counts"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(
        fs::read(f.path("e1/report.json")).unwrap(),
        fs::read(f.path("e2/report.json")).unwrap()
    );
    assert_eq!(
        fs::read(f.path("e1/report.json")).unwrap(),
        fs::read(f.path("a/report.json")).unwrap()
    );
    let features = fs::read_to_string(f.path("e1/features.tsv")).unwrap();
    assert!(features.starts_with("id\torigin\tlabel\tf0"));
    assert!(features.contains("\tpseudo_unseen\t"));
}

#[test]
fn eval_rejects_split_with_different_r() {
    let f = Fixture::new();
    assert!(f.train("a", &[]).status.success());
    let split = f.path("split_r4.toml");
    fs::write(
        &split,
        "dataset_name = \"shapes16\"\nsplit_index = 9\nseen_classes = [0, 1, 2, 5]\nunseen_classes = [3, 4]\n",
    )
    .unwrap();
    let ck = f.path("a/checkpoints/step2_end.json");
    let out = f.path("e");
    let o = opg(&["eval", "--checkpoint", p(&ck), "--split", p(&split), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("r = 3"));
}

#[test]
fn ablate_total_classes_writes_one_row_per_width() {
    let f = Fixture::new();
    let out = f.path("ab");
    let o = opg(&[
        "ablate",
        "--config",
        p(&f.config),
        "--axis",
        "total_classes",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let rows: Vec<_> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(rows, ["total_5", "total_10", "total_20"]);
    assert!(out.join("ablation.svg").exists());
    assert!(out.join("total_10/report.json").exists());
}

#[test]
fn unknown_axis_is_a_usage_error() {
    let f = Fixture::new();
    let out = f.path("ab");
    let o = opg(&["ablate", "--config", p(&f.config), "--axis", "depth", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("depth"));
    assert!(!out.exists());
}

#[test]
fn report_summarizes_a_run() {
    let f = Fixture::new();
    assert!(f.train("a", &[]).status.success());
    let run = f.path("a");
    let o = opg(&["report", "--run", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs"], 5);
    assert_eq!(summary["step_transitions"], 1);
    assert!(summary["accuracy_after_step_two"].is_f64());
    assert!(run.join("loss_curve.svg").exists());
}
