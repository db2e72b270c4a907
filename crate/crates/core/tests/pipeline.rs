use std::fs;

use magcn_core::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use magcn_core::experiment::{evaluate_checkpoint, run, write_run_outputs, RunConfig};
use magcn_core::model::{init_params, load_checkpoint};
use magcn_core::par::Execution;
use magcn_core::Error;

fn small_run(seed: u64) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        "seed = {seed}\nd = 16\nheads = 2\nblocks = 1\nsentiment_dim = 4\nepochs = 3\nbatch_size = 4\nlearning_rate = 0.005\n\
         [synthetic]\nn_samples = 40\nseq_len = 4\nseed = {seed}\n"
    ))
    .unwrap()
}

#[test]
fn checkpoint_reproduces_reported_metrics() {
    let rc = small_run(3);
    let outcome = run(&rc, "t").unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &rc, &outcome).unwrap();
    for f in ["config.toml", "checkpoint.bin", "metrics.json", "history.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let reloaded = RunConfig::load(dir.path().join("config.toml")).unwrap();
    assert_eq!(reloaded, rc);

    let ckp = load_checkpoint(dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(ckp, outcome.checkpoint);
    let data = magcn_core::experiment::prepare_data(&rc).unwrap();
    let data_path = dir.path().join("test.jsonl");
    save_dataset(&data.test, &data_path).unwrap();
    let report = evaluate_checkpoint(&ckp, &load_dataset(&data_path).unwrap(), Execution::Sequential).unwrap();
    assert_eq!(report.accuracy, outcome.report.accuracy);
    assert_eq!(report.mean_loss.to_bits(), outcome.report.mean_loss.to_bits());
}

#[test]
fn zero_epochs_reports_the_untrained_model() {
    let mut rc = small_run(5);
    rc.run.epochs = 0;
    let outcome = run(&rc, "untrained").unwrap();
    assert!(outcome.report.history.is_empty());
    assert_eq!(outcome.checkpoint.params, init_params(&rc.model, 5).unwrap());
    assert!((0.0..=1.0).contains(&outcome.report.accuracy));
}

#[test]
fn evaluation_rejects_mismatched_widths() {
    let rc = small_run(6);
    let mut rc0 = rc.clone();
    rc0.run.epochs = 0;
    let ckp = run(&rc0, "x").unwrap().checkpoint;
    let other = generate_synthetic(&SyntheticSpec {
        n_samples: 4,
        acoustic_dim: 3,
        ..Default::default()
    })
    .unwrap();
    assert!(matches!(
        evaluate_checkpoint(&ckp, &other, Execution::Parallel),
        Err(Error::Validation(_))
    ));
}

#[test]
fn relative_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 10,
        ..Default::default()
    })
    .unwrap();
    save_dataset(&ds, dir.path().join("d.jsonl")).unwrap();
    fs::write(dir.path().join("pos.txt"), "good\ngreat\n").unwrap();
    fs::write(dir.path().join("neg.txt"), "bad\n").unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "seed = 1\ndata = \"d.jsonl\"\npositive_lexicon = \"pos.txt\"\nnegative_lexicon = \"neg.txt\"\n",
    )
    .unwrap();
    let rc = RunConfig::load(dir.path().join("run.toml")).unwrap();
    let data = magcn_core::experiment::prepare_data(&rc).unwrap();
    assert_eq!(data.train.len() + data.val.len() + data.test.len(), 10);
    assert_eq!(data.lexicon.positive_count(), 2);
}
