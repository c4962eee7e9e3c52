use std::path::Path;
use std::process::{Command, Output};

use morphnet::checkpoint::Checkpoint;
use morphnet::report::{read_sweep_csv, RunReport};

fn morphnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const TINY: [&str; 10] = [
    "--set",
    "data.n=600",
    "--set",
    "head.d_hidden=12",
    "--set",
    "train.phases.0.epochs=2",
    "--set",
    "train.phases.1.epochs=1",
    "--quiet",
    "--preset=synthetic",
];

fn train_tiny(dir: &Path, out: &str, head: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--head", head, "--out", out];
    args.extend(TINY);
    args.extend(extra);
    morphnet(&args, dir)
}

#[test]
fn train_evaluate_sweep_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = train_tiny(dir, "run", "sparse-morph", &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.json", "curves.csv", "config.json", "report.json"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let report = RunReport::load(&dir.join("run/report.json")).unwrap();
    assert_eq!(report.curves.len(), 3);
    let ck = Checkpoint::load(&dir.join("run/checkpoint.json")).unwrap();
    assert_eq!(ck.model.census(), report.params);

    let eval = morphnet(&["evaluate", "run"], dir);
    assert_eq!(code(&eval), 0);
    let metrics: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(metrics["roc_auc"].as_f64(), report.metrics.get("roc_auc").copied());

    let sweep = morphnet(&["prune-sweep", "run", "--r1", "0,0.9", "--r2", "0,0.9"], dir);
    assert_eq!(code(&sweep), 0, "{}", String::from_utf8_lossy(&sweep.stderr));
    let rows = read_sweep_csv(&dir.join("run/sweep.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let unpruned = rows.iter().find(|r| r.r1 == 0.0 && r.r2 == 0.0).unwrap();
    assert_eq!(unpruned.remaining_params, report.params);
    assert_eq!(unpruned.roc_auc, report.metrics.get("roc_auc").copied());
    assert!(rows.iter().all(|r| r.remaining_params <= report.params));

    let rep = morphnet(&["report", "run", "--out", "tables"], dir);
    assert_eq!(code(&rep), 0, "{}", String::from_utf8_lossy(&rep.stderr));
    for f in [
        "summary.md",
        "summary.csv",
        "convergence.csv",
        "pruning.md",
        "pruning.csv",
    ] {
        assert!(dir.join("tables").join(f).exists(), "{f}");
    }
    let stdout = String::from_utf8_lossy(&rep.stdout);
    assert!(stdout.contains("sparse-morph"), "{stdout}");
}

#[test]
fn run_directories_are_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_tiny(tmp.path(), "run", "relu", &[])), 0);
    let again = train_tiny(tmp.path(), "run", "relu", &[]);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&train_tiny(tmp.path(), "run", "relu", &["--force"])), 0);
}

#[test]
fn multi_seed_runs_match_single_seed_runs() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&train_tiny(
            tmp.path(),
            "many",
            "maxout",
            &["--seed", "3,4", "--jobs", "2"]
        )),
        0
    );
    assert_eq!(code(&train_tiny(tmp.path(), "one", "maxout", &["--seed", "4"])), 0);
    let a = std::fs::read(tmp.path().join("many/seed-4/report.json")).unwrap();
    let b = std::fs::read(tmp.path().join("one/report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_tiny(tmp.path(), "run", "relu", &["--set", "train.batch_size=0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
    let out = morphnet(&["train", "--out", "run"], tmp.path());
    assert_eq!(code(&out), 1);
    assert_eq!(code(&morphnet(&["no-such-command"], tmp.path())), 1);
    assert_eq!(code(&morphnet(&["--help"], tmp.path())), 0);
}

#[test]
fn missing_checkpoint_is_a_runtime_abort() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = morphnet(&["evaluate", "empty"], tmp.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn equiv_check_passes_and_catches_a_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = morphnet(&["equiv-check", "--trials", "100"], tmp.path());
    assert_eq!(code(&ok), 0);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    let bad = morphnet(&["equiv-check", "--trials", "20", "--inject-fault"], tmp.path());
    assert_eq!(code(&bad), 2);
}

#[test]
fn gradcheck_command() {
    let tmp = tempfile::tempdir().unwrap();
    for head in ["relu", "maxout", "zhang", "dense-morph", "sparse-morph"] {
        let out = morphnet(&["gradcheck", "--head", head, "--dims", "5", "4", "3"], tmp.path());
        assert_eq!(code(&out), 0, "{head}: {}", String::from_utf8_lossy(&out.stdout));
    }
}

#[test]
fn generated_csv_trains_through_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let gen = morphnet(
        &["gen-data", "--out", "d.csv", "--n", "400", "--d", "6", "--tags", "4"],
        dir,
    );
    assert_eq!(code(&gen), 0);
    assert_eq!(code(&morphnet(&["gen-data", "--out", "d.csv"], dir)), 1);

    let cfg = r#"{
      "seed": 0,
      "head": {"variant": "sparse-morph", "d_hidden": 8, "pooling": 2, "batchnorm": true, "ensure_row_active": false},
      "data": {"kind": "features-csv", "path": "d.csv", "seed": 0},
      "train": {"phases": [{"optimizer": "adam", "lr": 0.01, "epochs": 2}], "batch_size": 64}
    }"#;
    std::fs::write(dir.join("cfg.json"), cfg).unwrap();
    let out = morphnet(&["train", "--config", "cfg.json", "--out", "run", "--quiet"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = RunReport::load(&dir.join("run/report.json")).unwrap();
    assert_eq!(report.curves.len(), 2);
}
