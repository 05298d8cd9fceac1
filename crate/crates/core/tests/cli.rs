use losscape::io::format_dataset;
use losscape::linalg::Matrix;
use losscape::losses::LabeledDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::{Command, Output};

fn losscape(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_losscape"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LOSSCAPE_SEED")
        .output()
        .unwrap()
}

fn write_regression(dir: &Path, n: usize, d: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix::from_fn(n, 1, |_, _| rng.random_range(0.2..0.8));
    let path = dir.join("data.csv");
    std::fs::write(&path, format_dataset(&LabeledDataset::regression(x, y).unwrap())).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(losscape(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(losscape(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn probe_rank_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut summaries = Vec::new();
    for run in ["a", "b"] {
        let out = losscape(&["probe-rank", "--trials", "100", "--seed", "7", "--out", run], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        summaries.push(std::fs::read(dir.path().join(run).join("probe_summary.json")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    let text = String::from_utf8(summaries.remove(0)).unwrap();
    assert!(text.contains("\"deficient\": 0"), "{text}");
}

#[test]
fn train_then_certify_main() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression(dir.path(), 6, 2, 13);
    let out = losscape(
        &["train", "--data", &data, "--widths", "2,5,1", "--activation", "sigmoid", "--seed", "1", "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("run/history_seed1.csv").exists());
    let params = dir.path().join("run/params_seed1.json");
    let report = dir.path().join("run/report.json");
    let out = losscape(
        &[
            "certify",
            "--theorem",
            "main",
            "--params",
            params.to_str().unwrap(),
            "--data",
            &data,
            "--k",
            "1",
            "--subset",
            "2",
            "--out",
            report.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["verdict"], "certified_global_minimum");
    assert_eq!(json["theorem"], "main");
}

#[test]
fn negative_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression(dir.path(), 6, 2, 22);
    let out = losscape(
        &["train", "--data", &data, "--widths", "2,5,1", "--seed", "3", "--max-iters", "5", "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = losscape(
        &["certify", "--theorem", "main", "--params", "run/params_seed3.json", "--data", &data, "--k", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"not_critical\""));
}

#[test]
fn malformed_dataset_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "# d=2 m=1 mode=regression\n0.1,0.2,0.3\n0.4,oops,0.6\n").unwrap();
    let out = losscape(&["train", "--data", "bad.csv", "--widths", "2,3,1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression(dir.path(), 4, 2, 23);
    let out = Command::new(env!("CARGO_BIN_EXE_losscape"))
        .args(["train", "--data", &data, "--widths", "2,3,1", "--max-iters", "10", "--out", "run"])
        .current_dir(dir.path())
        .env("LOSSCAPE_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.code() == Some(0) || out.status.code() == Some(2), "{}", stderr(&out));
    assert!(dir.path().join("run/params_seed42.json").exists());
}
