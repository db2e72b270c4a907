use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn magcn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magcn"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const RUN: &str =
    "seed = 2\nd = 8\nheads = 2\nblocks = 1\nsentiment_dim = 2\nlanguage_dim = 3\nvision_dim = 2\nacoustic_dim = 2\n\
epochs = 2\nbatch_size = 4\ndata = \"data.jsonl\"\n";

const SPEC: &str = "n_samples = 30\nseq_len = 4\nlanguage_dim = 3\nvision_dim = 2\nacoustic_dim = 2\nseed = 5\n";

#[test]
fn generate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("spec.toml"), SPEC).unwrap();
    fs::write(p.join("run.toml"), RUN).unwrap();

    let o = magcn(&["gen-data", "--spec", "spec.toml", "--out", "data.jsonl"], p);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(fs::read_to_string(p.join("data.jsonl")).unwrap().lines().count(), 31);

    let o = magcn(&["train", "--config", "run.toml", "--seed", "3", "--out", "run"], p);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("acc"));
    for f in [
        "checkpoint.bin",
        "metrics.json",
        "history.jsonl",
        "history.csv",
        "config.toml",
    ] {
        assert!(p.join("run").join(f).is_file(), "{f} missing");
    }
    assert!(fs::read_to_string(p.join("run/config.toml"))
        .unwrap()
        .contains("seed = 3"));

    let o = magcn(
        &["eval", "--checkpoint", "run/checkpoint.bin", "--data", "data.jsonl"],
        p,
    );
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["samples"], 30);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn gradcheck_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("spec.toml"), SPEC).unwrap();
    fs::write(p.join("run.toml"), RUN).unwrap();
    assert!(magcn(&["gen-data", "--spec", "spec.toml", "--out", "data.jsonl"], p)
        .status
        .success());

    let o = magcn(&["gradcheck", "--config", "run.toml"], p);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("max relative error"));

    let o = magcn(&["ablate", "--config", "run.toml", "--grid", "cl", "--out", "abl"], p);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("w/o CL"));
    let rows = fs::read_to_string(p.join("abl/ablation-cl.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2);

    let o = magcn(&["ablate", "--config", "run.toml", "--grid", "nope"], p);
    assert!(!o.status.success());
}

#[test]
fn malformed_data_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.toml"), RUN).unwrap();
    fs::write(p.join("data.jsonl"), "{\"manifest\":{\"samples\":1,\"language_dim\":3,\"vision_dim\":2,\"acoustic_dim\":2,\"num_classes\":2}}\n{oops\n").unwrap();
    let o = magcn(&["train", "--config", "run.toml"], p);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"), "{o:?}");
}
