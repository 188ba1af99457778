//! End-to-end tests of the `coap` binary.

use std::path::Path;
use std::process::{Command, Output};

fn coap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coap"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn simulate_small(dir: &Path, out_name: &str, seed: u64) {
    let seed = seed.to_string();
    let out = coap(
        &[
            "simulate", "--n", "60", "--p", "40", "--d", "10", "--q0", "3", "--r0", "3",
            "--seed", &seed, "--out", out_name,
        ],
        dir,
    );
    assert_success(&out);
}

#[test]
fn simulate_is_deterministic_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "a", 7);
    simulate_small(tmp.path(), "b", 7);
    for name in ["X.csv", "Z.csv", "a.csv", "beta0.csv", "H0.csv", "B0.csv"] {
        let fa = std::fs::read(tmp.path().join("a").join(name)).unwrap();
        let fb = std::fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }
    let manifest = std::fs::read_to_string(tmp.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("command = simulate"));
    assert!(manifest.contains("config.seed = 7"));
    assert!(manifest.contains("output = a/X.csv"));
}

#[test]
fn invalid_spec_exits_2_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = coap(
        &["simulate", "--n", "0", "--p", "40", "--out", "bad"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("bad/X.csv").exists());
}

#[test]
fn missing_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = coap(
        &["select", "--x", "nope.csv", "--z", "nope.csv", "--out", "sel"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_select_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "sim", 1);
    let out = coap(
        &[
            "fit", "--x", "sim/X.csv", "--z", "sim/Z.csv", "--a", "sim/a.csv",
            "--q", "3", "--r", "3", "--out", "fit",
        ],
        tmp.path(),
    );
    assert_success(&out);
    for name in [
        "beta_hat.csv",
        "B_hat.csv",
        "H_hat.csv",
        "varsigma_hat.csv",
        "elbo_trace.csv",
        "manifest.txt",
    ] {
        assert!(tmp.path().join("fit").join(name).exists(), "missing {name}");
    }

    // ELBO trace is nondecreasing within the monotonicity slack
    let trace: Vec<f64> = std::fs::read_to_string(tmp.path().join("fit/elbo_trace.csv"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs());
    }

    let out = coap(
        &[
            "select", "--x", "sim/X.csv", "--z", "sim/Z.csv", "--a", "sim/a.csv",
            "--q-max", "6", "--r-max", "6", "--out", "sel",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let report = std::fs::read_to_string(tmp.path().join("sel/svr_report.txt")).unwrap();
    assert!(report.contains("q_hat = 3"), "report:\n{report}");
    assert!(report.contains("r_hat = 3"), "report:\n{report}");

    let out = coap(
        &[
            "eval", "--fit-dir", "fit", "--truth-dir", "sim", "--out", "ev",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let table = std::fs::read_to_string(tmp.path().join("ev/eval.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "replicate,tr_h,tr_b,ea_beta,ea_beta_col1");
    assert_eq!(lines.len(), 4); // header + 1 replicate + mean + sd
    let sd_row: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(sd_row[0], "sd");
    for v in &sd_row[1..] {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0); // single replicate
    }
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "sim", 4);
    // present the ground truth under estimate file names
    let fit = tmp.path().join("fakefit");
    std::fs::create_dir(&fit).unwrap();
    for (src, dst) in [
        ("beta0.csv", "beta_hat.csv"),
        ("H0.csv", "H_hat.csv"),
        ("B0.csv", "B_hat.csv"),
    ] {
        std::fs::copy(tmp.path().join("sim").join(src), fit.join(dst)).unwrap();
    }
    let out = coap(
        &["eval", "--fit-dir", "fakefit", "--truth-dir", "sim", "--out", "ev"],
        tmp.path(),
    );
    assert_success(&out);
    let table = std::fs::read_to_string(tmp.path().join("ev/eval.csv")).unwrap();
    let row: Vec<f64> = table
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[0] - 1.0).abs() < 1e-10, "tr_h {}", row[0]);
    assert!((row[1] - 1.0).abs() < 1e-10, "tr_b {}", row[1]);
    assert_eq!(row[2], 0.0);
    assert_eq!(row[3], 0.0);
}

#[test]
fn fit_accepts_matrix_market_counts() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "sim", 2);
    // convert X.csv to MatrixMarket coordinate format
    let x = std::fs::read_to_string(tmp.path().join("sim/X.csv")).unwrap();
    let rows: Vec<Vec<f64>> = x
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let mut entries = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if *v != 0.0 {
                entries.push(format!("{} {} {}", i + 1, j + 1, v));
            }
        }
    }
    let mtx = format!(
        "%%MatrixMarket matrix coordinate real general\n{} {} {}\n{}\n",
        rows.len(),
        rows[0].len(),
        entries.len(),
        entries.join("\n")
    );
    std::fs::write(tmp.path().join("X.mtx"), mtx).unwrap();

    for (xfile, outdir) in [("sim/X.csv", "fit_csv"), ("X.mtx", "fit_mtx")] {
        let out = coap(
            &[
                "fit", "--x", xfile, "--z", "sim/Z.csv", "--a", "sim/a.csv",
                "--q", "3", "--r", "3", "--out", outdir,
            ],
            tmp.path(),
        );
        assert_success(&out);
    }
    let a = std::fs::read(tmp.path().join("fit_csv/beta_hat.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("fit_mtx/beta_hat.csv")).unwrap();
    assert_eq!(a, b, "MatrixMarket input must give identical estimates");
}

#[test]
fn bad_thread_count_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_coap"))
        .args(["simulate", "--n", "10", "--p", "10", "--d", "2", "--q0", "1", "--r0", "1", "--out", "s"])
        .env("COAP_NUM_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_env_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_coap"))
        .args(["simulate", "--n", "30", "--p", "20", "--d", "4", "--q0", "2", "--r0", "2", "--out", "s"])
        .env("COAP_NUM_THREADS", "1")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("s/X.csv").exists());
}
