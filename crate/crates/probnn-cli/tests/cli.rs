//! End-to-end checks of the command-line surface and the checkpoint
//! round-trip guarantees.

use std::path::Path;
use std::process::Command;

use nalgebra::DVector;
use probnn_cli::checkpoint;
use probnn_cli::config::ExperimentConfig;
use probnn_cli::experiment::run_experiment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_probnn"))
}

#[test]
fn gen_data_is_reproducible_across_invocations() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let status = bin()
            .args(["gen-data", "--out"])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir_a.path().join("dataset.csv")).unwrap();
    let b = std::fs::read(dir_b.path().join("dataset.csv")).unwrap();
    assert_eq!(a, b);

    // a different seed changes the data
    let dir_c = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["gen-data", "--seed", "7", "--out"])
        .arg(dir_c.path())
        .status()
        .unwrap();
    assert!(status.success());
    let c = std::fs::read(dir_c.path().join("dataset.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["experiment", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for name in [
        "dataset.csv",
        "grid_step_0000.csv",
        "grid_step_0012.csv",
        "grid_step_0025.csv",
        "checkpoint.json",
        "report.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    // train from the exported dataset reproduces a valid checkpoint
    let train_dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["train", "--data"])
        .arg(dir.path().join("dataset.csv"))
        .args(["--out"])
        .arg(train_dir.path())
        .status()
        .unwrap();
    assert!(status.success());

    // predict on the trained checkpoint: deep inside the first wedge the
    // first class must win
    let output = bin()
        .args(["predict", "--checkpoint"])
        .arg(train_dir.path().join("checkpoint.json"))
        .args(["--input", "0,1.5"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(parsed["label"], 1);

    // grid export from a checkpoint
    let grid_dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["grid", "--checkpoint"])
        .arg(train_dir.path().join("checkpoint.json"))
        .args(["--out"])
        .arg(grid_dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(grid_dir.path().join("grid.csv")).unwrap();
    assert_eq!(text.lines().count(), 41 * 41 + 1);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    let restored = checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(restored, outcome.state);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let x = DVector::from_vec(vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ]);
        let a = outcome.state.predict(&x).unwrap();
        let b = restored.predict(&x).unwrap();
        assert_eq!(a.label, b.label);
        for j in 0..3 {
            assert_eq!(
                a.probabilities[j].to_bits(),
                b.probabilities[j].to_bits(),
                "probability {j} differs after reload"
            );
        }
    }
}

#[test]
fn error_exit_codes_are_categorized() {
    // config category: malformed config file
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let status = bin()
        .args(["experiment", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // io category: missing checkpoint file
    let status = bin()
        .args(["predict", "--checkpoint"])
        .arg(dir.path().join("missing.json"))
        .args(["--input", "0,0"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    // data category: malformed input vector
    run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    let status = bin()
        .args(["predict", "--checkpoint"])
        .arg(dir.path().join("checkpoint.json"))
        .args(["--input", "zero,one"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn checkpoint_version_mismatch_fails_with_data_category() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    let path = dir.path().join("checkpoint.json");
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"schema_version\": 1", "\"schema_version\": 9");
    std::fs::write(&path, text).unwrap();
    let status = bin()
        .args(["predict", "--checkpoint"])
        .arg(&path)
        .args(["--input", "0,0"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn config_documents_itself() {
    // The default config serializes to a self-contained JSON document that
    // round-trips through the CLI.
    let dir = tempfile::tempdir().unwrap();
    let path: &Path = &dir.path().join("config.json");
    std::fs::write(
        path,
        serde_json::to_string_pretty(&ExperimentConfig::default()).unwrap(),
    )
    .unwrap();
    let status = bin()
        .args(["gen-data", "--config"])
        .arg(path)
        .args(["--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("dataset.csv").exists());
}
