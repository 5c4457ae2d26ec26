use std::path::Path;
use std::process::{Command, Output};

fn oat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oat"))
        .current_dir(dir)
        .env_remove("OAT_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = oat(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("generate"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&oat(dir.path(), &["train", "--out", "x"])), 1);

    let o = oat(dir.path(), &["--set", "model.width=3", "pe", "tables", "--out", "pe"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("model.width"));

    let o = oat(dir.path(), &["--set", "model.h=100", "pe", "tables", "--out", "pe"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("model.h"));

    std::fs::write(dir.path().join("run.toml"), "train.lr = -1.0\n").unwrap();
    let o = oat(dir.path(), &["--config", "run.toml", "pe", "tables", "--out", "pe"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("train.lr"));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = oat(dir.path(), &["train", "--data", "missing", "--out", "run"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = oat(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    let desk = ["--preset", "desk", "--seed", "3"];
    let with =
        |rest: &[&'static str]| -> Vec<&'static str> { desk.iter().copied().chain(rest.iter().copied()).collect() };

    run(&with(&[
        "data",
        "synth",
        "--rows",
        "3",
        "--cols",
        "3",
        "--items",
        "6",
        "--trials",
        "20",
        "--paths-per-trial",
        "3",
        "--out",
        "data",
    ]));
    assert!(d.join("data/layout.json").exists());
    assert!(d.join("data/run_manifest.json").exists());

    let o = run(&with(&[
        "pe", "train", "--L", "11", "--iters", "300", "--out", "axis.pe",
    ]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rmse"));
    assert!(d.join("axis.pe.manifest.json").exists());
    run(&with(&["--set", "pe.iters=100", "pe", "tables", "--out", "pe"]));
    assert!(d.join("pe/pe_x.pe").exists());

    run(&with(&[
        "--set",
        "train.epochs=2",
        "train",
        "--data",
        "data",
        "--pe",
        "pe",
        "--out",
        "run",
    ]));
    assert_eq!(
        std::fs::read_to_string(d.join("run/loss.csv")).unwrap().lines().count(),
        3
    );

    run(&with(&[
        "generate", "--model", "run", "--data", "data", "--n", "4", "--out", "gen.tsv",
    ]));
    let first = std::fs::read_to_string(d.join("gen.tsv")).unwrap();
    assert_eq!(first.lines().count(), 8, "two held-out trials, four samples each");
    run(&with(&[
        "generate", "--model", "run", "--data", "data", "--n", "4", "--out", "gen2.tsv",
    ]));
    assert_eq!(first, std::fs::read_to_string(d.join("gen2.tsv")).unwrap());
    assert!(d.join("gen.tsv.manifest.json").exists());

    run(&[
        "baseline",
        "--kind",
        "center",
        "--data",
        "data",
        "--model",
        "run",
        "--n",
        "4",
        "--out",
        "center.tsv",
    ]);
    let o = run(&[
        "eval",
        "--pred",
        "gen.tsv",
        "--pred",
        "center.tsv",
        "--ref",
        "data",
        "--out",
        "eval.csv",
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("human"));
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    run(&["heatmap", "--pred", "gen.tsv", "--layout", "data", "--out", "heat"]);
    let pgm = std::fs::read(d.join("heat.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["train"]["epochs"], 2);

    // Replaying a run from its manifest reproduces the outputs.
    run(&[
        "--config",
        "run/run_manifest.json",
        "train",
        "--data",
        "data",
        "--pe",
        "pe",
        "--out",
        "replay",
    ]);
    assert_eq!(
        std::fs::read(d.join("run/model.ckpt")).unwrap(),
        std::fs::read(d.join("replay/model.ckpt")).unwrap()
    );
    run(&[
        "--config",
        "gen.tsv.manifest.json",
        "generate",
        "--model",
        "run",
        "--data",
        "data",
        "--out",
        "gen3.tsv",
    ]);
    assert_eq!(first, std::fs::read_to_string(d.join("gen3.tsv")).unwrap());
}
