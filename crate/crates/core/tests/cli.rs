use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn seqgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqgp")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A copy of a shipped config with some lines replaced.
fn edited_config(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(configs().join(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{name} has no line {from:?}");
        text = text.replace(from, to);
    }
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn short_campaign(dir: &Path) -> PathBuf {
    edited_config(dir, "grav_scaled.toml", &[("n_steps = 30", "n_steps = 8")])
}

#[test]
fn fourier_demo_writes_fields_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fd");
    let res = seqgp(&["fourier-demo", "--config", path(&configs().join("fourier_demo.toml")), "--out", path(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let fields = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name().to_string_lossy().into_owned();
            n.ends_with("_mean.csv") || n.ends_with("_std.csv")
        })
        .count();
    assert_eq!(fields, 12);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn budget_violation_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let res = seqgp(&[
        "fourier-demo",
        "--config",
        path(&configs().join("fourier_400.toml")),
        "--out",
        path(dir.path()),
        "--memory-budget",
        "1MB",
    ]);
    assert_eq!(code(&res), 4, "{}", stderr(&res));
    assert!(stderr(&res).contains("memory budget"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());

    let empty = edited_config(dir.path(), "sample.toml", &[("n_samples = 500", "n_samples = 0")]);
    let res = seqgp(&["sample", "--config", path(&empty), "--out", out]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("ensemble size must be positive"));

    let unknown = edited_config(dir.path(), "fit_synthetic.toml", &[("seed = 3", "seed = 3\ncolour = \"red\"")]);
    let res = seqgp(&["fit", "--config", path(&unknown), "--out", out]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("colour"));

    assert_eq!(code(&seqgp(&["fit", "--out", out])), 2);
    assert_eq!(code(&seqgp(&["sample", "--config", "no/such/file.toml", "--out", out])), 2);
    assert_eq!(code(&seqgp(&["fourier-demo", "--out", out, "--memory-budget", "lots"])), 2);
    assert_eq!(code(&seqgp(&["fourier-demo", "--out", out, "--threads", "0"])), 2);
}

#[test]
fn fit_with_one_length_scale_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(
        dir.path(),
        "fit_synthetic.toml",
        &[("lambda_grid = [0.25, 0.5, 1.0, 2.0]", "lambda_grid = [0.5]")],
    );
    let out = dir.path().join("fit");
    let res = seqgp(&["fit", "--config", path(&cfg), "--out", path(&out), "--threads", "2"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let table = fs::read_to_string(out.join("fit_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("5"));
}

#[test]
fn sample_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), "sample.toml", &[("n_samples = 500", "n_samples = 50")]);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let res = seqgp(&["sample", "--config", path(&cfg), "--out", path(out), "--seed", seed]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    let read = |d: &Path| fs::read(d.join("posterior.bin")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn campaign_is_quick_and_variance_never_grows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let start = Instant::now();
    let res = seqgp(&["grav-campaign", "--config", path(&configs().join("grav_scaled.toml")), "--out", path(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(start.elapsed() < Duration::from_secs(60));
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let var: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(var.len(), 31);
    assert!(var.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn paused_campaign_resumes_to_the_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_campaign(dir.path());
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));

    let res = seqgp(&["grav-campaign", "--config", path(&cfg), "--out", path(&full)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let res = seqgp(&["grav-campaign", "--config", path(&cfg), "--out", path(&split), "--stop-after", "3"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(String::from_utf8_lossy(&res.stdout).contains("paused after 3 steps"));
    assert!(!split.join("limiting.csv").exists());

    let other_seed = seqgp(&["grav-campaign", "--config", path(&cfg), "--out", path(&split), "--resume", "--seed", "9"]);
    assert_eq!(code(&other_seed), 2);

    let res = seqgp(&["grav-campaign", "--config", path(&cfg), "--out", path(&split), "--resume"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for f in ["trajectory.csv", "detection.csv", "limiting.csv", "volumes.csv", "posterior/mean.bin"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f} differs");
    }
}
