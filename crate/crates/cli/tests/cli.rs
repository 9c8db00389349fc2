//! End-to-end CLI behavior: artifact determinism, exit codes, and the
//! chained subcommand pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn scope_bin() -> &'static str {
    env!("CARGO_BIN_EXE_scope")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(scope_bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn scope")
}

const TINY_CONFIG: &str = r#"
[data.generate]
classes = 3
modes_per_class = 1
labeled_subjects = 2
unlabeled_subjects = 3
validation_subjects = 1
test_subjects = 1
samples_per_subject = 10
channels = 2
time_points = 8
class_separation = 1.0
subject_shift = 0.4
class_weights = [0.4, 0.35, 0.25]
seed = 5

[tpn.train]
epochs = 4

[prototypes]
per_class = 2

[prototypes.refine]
epochs = 4

[backbone]
width = 8
hidden = 16
layers = 6

[stage2]
total_epochs = 4
warmup_epochs = 1
batch_size = 8
"#;

fn write_config(dir: &Path) {
    std::fs::write(dir.join("config.toml"), TINY_CONFIG).unwrap();
}

#[test]
fn gen_data_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path());
    for out in ["a", "b"] {
        let status = run_in(
            tmp.path(),
            &[
                "gen-data",
                "--config",
                "config.toml",
                "--out",
                out,
                "--seed",
                "1",
            ],
        );
        assert!(status.status.success(), "{:?}", status);
    }
    let a = std::fs::read(tmp.path().join("a/cohort.bin")).unwrap();
    let b = std::fs::read(tmp.path().join("b/cohort.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_pipeline_chain_produces_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path());
    for out in ["r1", "r2"] {
        for step in [
            "gen-data",
            "train-tpn",
            "build-prototypes",
            "pseudo-label",
            "adapt",
        ] {
            let output = run_in(
                tmp.path(),
                &[step, "--config", "config.toml", "--out", out],
            );
            assert!(
                output.status.success(),
                "{step} failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
        }
    }
    for artifact in [
        "cohort.bin",
        "tpn.bin",
        "prototypes.bin",
        "manifest.jsonl",
        "adapter.bin",
    ] {
        let a = std::fs::read(tmp.path().join("r1").join(artifact)).unwrap();
        let b = std::fs::read(tmp.path().join("r2").join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
    // Evaluate the checkpoint and confirm the metrics file parses.
    let output = run_in(
        tmp.path(),
        &[
            "evaluate",
            "--config",
            "config.toml",
            "--out",
            "r1",
            "--split",
            "test",
        ],
    );
    assert!(output.status.success());
    let metrics: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("metrics JSON on stdout");
    assert!(metrics.get("kappa").is_some());
    // Effective config is echoed into the output directory.
    assert!(tmp.path().join("r1/effective_config.toml").exists());
}

#[test]
fn quality_report_has_monotone_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path());
    for step in ["gen-data", "train-tpn", "build-prototypes", "pseudo-label"] {
        let output = run_in(tmp.path(), &[step, "--config", "config.toml", "--out", "q"]);
        assert!(output.status.success());
    }
    let output = run_in(
        tmp.path(),
        &["report", "--config", "config.toml", "--out", "q"],
    );
    assert!(output.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("q/quality.csv")).unwrap();
    let coverages: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(coverages.len(), 20);
    for pair in coverages.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12);
    }
}

#[test]
fn unknown_config_key_is_usage_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[stage2]\nnot_a_knob = 1\n").unwrap();
    let output = run_in(
        tmp.path(),
        &["gen-data", "--config", "bad.toml", "--out", "x"],
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("not_a_knob"), "{stderr}");
}

#[test]
fn missing_config_file_is_usage_error_with_schema_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let output = run_in(
        tmp.path(),
        &["gen-data", "--config", "absent.toml", "--out", "x"],
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("[stage2]") || stderr.contains("sections"), "{stderr}");
}

#[test]
fn bad_subcommand_and_bad_checkpoint_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let output = run_in(tmp.path(), &["frobnicate"]);
    assert_eq!(output.status.code(), Some(1));

    // A corrupt checkpoint is a runtime failure, exit 2.
    write_config(tmp.path());
    let output = run_in(
        tmp.path(),
        &["gen-data", "--config", "config.toml", "--out", "z"],
    );
    assert!(output.status.success());
    std::fs::write(tmp.path().join("z/tpn.bin"), b"garbage").unwrap();
    let output = run_in(
        tmp.path(),
        &["build-prototypes", "--config", "config.toml", "--out", "z"],
    );
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let output = run_in(tmp.path(), &["selfcheck"]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("10/10 checks passed"), "{stdout}");
}

#[test]
fn config_overrides_flow_into_effective_echo() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path());
    let output = run_in(
        tmp.path(),
        &[
            "gen-data",
            "--config",
            "config.toml",
            "--out",
            "o",
            "--set",
            "data.generate.classes=4",
            "--set",
            "data.generate.class_weights=0.4,0.3,0.2,0.1",
        ],
    );
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let echo = std::fs::read_to_string(tmp.path().join("o/effective_config.toml")).unwrap();
    assert!(echo.contains("classes = 4"), "{echo}");
}
