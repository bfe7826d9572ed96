//! End-to-end tests of the `uqbench` binary: one full run/replay/report
//! journey, grid rendering, and the documented failure exit codes.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn uqbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqbench"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out),
    );
}

/// All regular files under `root`, keyed by relative path.
fn tree_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(&path, root, files);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                files.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    files
}

fn assert_identical_trees(a: &Path, b: &Path) {
    let ta = tree_files(a);
    let tb = tree_files(b);
    let names_a: Vec<&String> = ta.keys().collect();
    let names_b: Vec<&String> = tb.keys().collect();
    assert_eq!(names_a, names_b, "file sets differ");
    for (name, bytes) in &ta {
        assert_eq!(bytes, &tb[name], "{name} differs between runs");
    }
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .count()
}

fn tiny_run_args<'a>(out_dir: &'a str) -> Vec<&'a str> {
    vec![
        "run",
        "all",
        "--dataset",
        "two_moons",
        "--model",
        "mc_dropout",
        "--estimator",
        "both",
        "--fractions",
        "0.02,0.1,1.0",
        "--noise-levels",
        "0.0,0.4,0.8",
        "--reps",
        "1",
        "--epochs",
        "5",
        "--t-passes",
        "4",
        "--n-eval",
        "60",
        "--seed",
        "7",
        "--jobs",
        "2",
        "--dump-per-sample",
        "--out",
        out_dir,
        "--overwrite",
    ]
}

#[test]
fn run_replay_and_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();

    // First run: full sweep on a binary dataset, so ood is skipped.
    let (a, b, c) = (dir("a"), dir("b"), dir("c"));
    let out = uqbench(&tiny_run_args(&a));
    assert_exit(&out, 0, "first run");
    let text = stdout(&out);
    assert!(text.contains("skipping ood"), "no skip note in:\n{text}");

    let root = tmp.path().join("a");
    assert!(root.join("manifest.txt").is_file());
    assert!(!root.join("ood").exists(), "ood must be skipped");
    // 3 fractions x 1 rep, plus a header.
    let runs = root.join("dataset_size/mc_dropout/runs.csv");
    assert_eq!(line_count(&runs), 4);
    assert_eq!(line_count(&root.join("label_noise/mc_dropout/runs.csv")), 4);
    // Per-sample dumps: one row per test point per cell.
    assert_eq!(
        line_count(&root.join("dataset_size/mc_dropout/per_sample.csv")),
        1 + 3 * 1000
    );
    let pcc = std::fs::read_to_string(root.join("dataset_size/pcc.csv")).unwrap();
    assert!(pcc.starts_with("dataset,model,estimator,experiment,rep,pcc_au,pcc_eu\n"));
    assert_eq!(pcc.lines().count(), 3, "one row per estimator:\n{pcc}");

    // Same flags again: every byte identical.
    assert_exit(&uqbench(&tiny_run_args(&b)), 0, "second run");
    assert_identical_trees(tmp.path().join("a").as_path(), tmp.path().join("b").as_path());

    // Replaying the manifest reproduces the run without repeating flags.
    let manifest = root.join("manifest.txt");
    let out = uqbench(&[
        "run",
        "all",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        &c,
        "--overwrite",
    ]);
    assert_exit(&out, 0, "manifest replay");
    assert_identical_trees(tmp.path().join("a").as_path(), tmp.path().join("c").as_path());

    // The report joins both sweeps into a leaderboard.
    let out = uqbench(&["report", root.to_str().unwrap()]);
    assert_exit(&out, 0, "report");
    let text = stdout(&out);
    assert!(text.contains("de_mean"), "summary missing scores:\n{text}");
    assert!(text.lines().any(|l| l.trim_start().starts_with('*')));
    assert!(text.lines().any(|l| l.trim_start().starts_with('+')));
    assert!(
        stderr(&out).contains("single repetition"),
        "one rep should warn about missing intervals"
    );
    let leaderboard = std::fs::read_to_string(root.join("de_leaderboard.csv")).unwrap();
    let mut lines = leaderboard.lines();
    assert_eq!(
        lines.next(),
        Some("dataset,model,estimator,de_mean,de_sum,ci95")
    );
    // it and gl rows for the single model; single rep leaves ci95 empty.
    assert_eq!(lines.clone().count(), 2);
    assert!(lines.all(|l| l.starts_with("two_moons,mc_dropout,") && l.ends_with(',')));
}

#[test]
fn grid_writes_deterministic_rasters() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = tmp.path().join(name);
        let out = uqbench(&[
            "grid",
            "--dataset",
            "two_moons",
            "--model",
            "mc_dropout",
            "--estimator",
            "it",
            "--epochs",
            "3",
            "--t-passes",
            "4",
            "--n-eval",
            "50",
            "--seed",
            "11",
            "--resolution",
            "8",
            "--out",
            out_dir.to_str().unwrap(),
            "--overwrite",
        ]);
        assert_exit(&out, 0, "grid run");
        out_dir
    };
    let g1 = run("g1");
    assert!(g1.join("manifest.txt").is_file());
    assert!(!g1.join("grid_gl.csv").exists(), "estimator was it only");
    assert_eq!(line_count(&g1.join("grid_it.csv")), 1 + 8 * 8);

    let pgm = std::fs::read_to_string(g1.join("grid_it_eu.pgm")).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    let comment = lines.next().unwrap();
    assert!(comment.starts_with("# eu raster, row 0 = min y"), "{comment}");
    assert_eq!(lines.next(), Some("8 8"));
    assert_eq!(lines.next(), Some("255"));
    assert_eq!(lines.count(), 8);
    assert!(g1.join("grid_it_au.pgm").is_file());

    let g2 = run("g2");
    assert_identical_trees(&g1, &g2);
}

#[test]
fn failure_modes_use_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out_str = out_dir.to_str().unwrap();

    // Explicitly requesting leave-one-class-out on binary data.
    let out = uqbench(&[
        "run", "ood", "--dataset", "two_moons", "--out", out_str, "--overwrite",
    ]);
    assert_exit(&out, 2, "ood on binary data");
    assert!(stderr(&out).contains("at least 3 classes"));

    // Wine dataset with a missing CSV fails before any training.
    let out = uqbench(&[
        "run",
        "dataset-size",
        "--dataset",
        "wine",
        "--wine-path",
        "/nonexistent/wine.csv",
        "--out",
        out_str,
        "--overwrite",
    ]);
    assert_exit(&out, 2, "missing wine csv");
    assert!(stderr(&out).contains("/nonexistent/wine.csv"));

    // Reports need a finished run.
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = uqbench(&["report", empty.to_str().unwrap()]);
    assert_exit(&out, 2, "report on empty dir");
    assert!(stderr(&out).contains("dataset_size"));
    let out = uqbench(&["report", tmp.path().join("gone").to_str().unwrap()]);
    assert_exit(&out, 2, "report on missing dir");

    // Config problems: unknown flag (clap) and unknown config key (ours).
    assert_exit(&uqbench(&["run", "all", "--bogus"]), 2, "unknown flag");
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "[run]\nbogus = 1\n").unwrap();
    let out = uqbench(&[
        "run", "all", "--config", cfg.to_str().unwrap(), "--out", out_str, "--overwrite",
    ]);
    assert_exit(&out, 2, "unknown config key");
    assert!(stderr(&out).contains("bogus"));

    // Grid constraints: exactly one model, planar data only.
    let out = uqbench(&[
        "grid", "--model", "mc_dropout,flipout", "--out", out_str, "--overwrite",
    ]);
    assert_exit(&out, 2, "grid with two models");
    let out = uqbench(&[
        "grid", "--dataset", "wine", "--out", out_str, "--overwrite",
    ]);
    assert_exit(&out, 2, "grid on tabular data");
    assert!(stderr(&out).contains("2-D"));
}
