//! End-to-end tests of the command-line interface, exercising the stable
//! exit-code contract and the emitted file formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn msplit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msplit"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn quad_config(dir: &Path, extra_solver: &str, mismatch: &str) -> PathBuf {
    let path = dir.join("quad.toml");
    write(
        &path,
        &format!(
            r#"
[problem]
kind = "quadratic_synthetic"
seed = 11

[quadratic]
dim = 10
data_dim = 14
mismatch_strength = 0.06
rho_margin = 0.2

[mismatch]
{mismatch}

[solver]
max_iter = 2000
record_every = 20
{extra_solver}

[output]
dir = "{}"
"#,
            dir.join("out").display()
        ),
    );
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn estimate_emits_full_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let config = quad_config(dir.path(), "algorithm = \"mmfbhf\"", "schedule = \"constant\"");
    let out = run_ok(msplit().args(["estimate", "--config"]).arg(&config));
    let ledger: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout is the ledger JSON");
    for field in [
        "alpha", "beta", "zeta", "rho", "lambda_min", "kappa_K", "zeta_tilde_mismatch",
        "rho_hat", "chi", "gamma_fbhf", "gamma_hat", "gamma_fdrf", "eps1", "eps2", "theta1",
    ] {
        assert!(ledger.get(field).is_some(), "missing {field}");
    }
    assert!((ledger["rho_hat"].as_f64().unwrap() - 0.2).abs() < 1e-9);
    assert!(dir.path().join("out/ledger.json").exists());
}

#[test]
fn estimate_matched_problem_has_zero_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("matched.toml");
    write(
        &path,
        &format!(
            r#"
[problem]
kind = "quadratic_synthetic"

[quadratic]
mismatch_strength = 0.0

[output]
dir = "{}"
"#,
            dir.path().join("out").display()
        ),
    );
    let out = run_ok(msplit().args(["estimate", "--config"]).arg(&path));
    let ledger: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ledger["norm_mismatch"].as_f64().unwrap(), 0.0);
}

#[test]
fn invalid_eta_bar_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = quad_config(
        dir.path(),
        "algorithm = \"mmfbhf\"",
        "schedule = \"geometric\"\nomega0 = 0.1\neta_bar = 1.5",
    );
    let out = msplit()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists(), "no partial output on config error");
}

#[test]
fn unknown_key_is_a_config_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    write(
        &path,
        "[problem]\nkind = \"quadratic_synthetic\"\n\n[solver]\nmax_iters = 10\n",
    );
    let out = msplit()
        .args(["run", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("max_iters"), "error names the bad key: {stderr}");
}

#[test]
fn run_emits_exact_columns_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    // tol = 0 forces the run to the iteration cap: 2000/20 + 1 rows.
    let config = quad_config(
        dir.path(),
        "algorithm = \"both\"\ntol = 0.0",
        "schedule = \"constant\"",
    );
    run_ok(msplit().args(["run", "--config"]).arg(&config));
    for alg in ["mmfbhf", "mmfdrf"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("out/trace_{alg}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,wall_ns,residual,snr_db,nmse,mae,dist_to_ref"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 2000 / 20 + 1, "{alg} row count");
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("out/summary_{alg}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(summary["algorithm"], alg);
        assert!(summary["ledger"]["rho_hat"].is_number());
        assert!(summary["final_metrics"]["snr_db"].is_number());
        assert!(summary["gap_report"]["holds"].as_bool().unwrap());
    }
}

fn csv_without_wall(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != 1)
                .map(|(_, c)| c.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn fixed_seed_reruns_are_identical_up_to_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let config = quad_config(dir.path(), "algorithm = \"mmfbhf\"", "schedule = \"constant\"");
    let out1 = dir.path().join("o1");
    let out2 = dir.path().join("o2");
    run_ok(msplit().args(["run", "--seed", "123", "--config"]).arg(&config).arg("--out").arg(&out1));
    run_ok(msplit().args(["run", "--seed", "123", "--config"]).arg(&config).arg("--out").arg(&out2));
    // Every column except the wall-clock one is byte-identical.
    assert_eq!(
        csv_without_wall(&out1.join("trace_mmfbhf.csv")),
        csv_without_wall(&out2.join("trace_mmfbhf.csv"))
    );
}

#[test]
fn compare_merges_runs_and_guards_problem_identity() {
    let dir = tempfile::tempdir().unwrap();
    let config = quad_config(dir.path(), "algorithm = \"both\"", "schedule = \"constant\"");
    run_ok(
        msplit()
            .env("MSPLIT_THREADS", "2")
            .args(["compare", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join("cmp")),
    );
    let merged = std::fs::read_to_string(dir.path().join("cmp/compare.csv")).unwrap();
    let mut lines = merged.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,n,wall_ns,residual,snr_db,nmse,mae,dist_to_ref"
    );
    let ids: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 2, "two runs present: {ids:?}");
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("cmp/compare_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);

    // A config with a different data seed is a different problem.
    let other = quad_config(&dir.path().join("."), "algorithm = \"mmfbhf\"", "schedule = \"constant\"");
    let text = std::fs::read_to_string(&other).unwrap().replace("seed = 11", "seed = 12");
    let other_path = dir.path().join("other.toml");
    write(&other_path, &text);
    let out = msplit()
        .args(["compare", "--config"])
        .arg(&config)
        .arg("--config")
        .arg(&other_path)
        .arg("--out")
        .arg(dir.path().join("cmp2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "hash guard rejects mixed problems");
}

#[test]
fn compare_identical_configs_produce_identical_metric_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = quad_config(dir.path(), "algorithm = \"mmfbhf\"", "schedule = \"constant\"");
    run_ok(
        msplit()
            .args(["compare", "--config"])
            .arg(&config)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join("cmp")),
    );
    let a = csv_without_wall(&dir.path().join("cmp/run_0_mmfbhf/trace_mmfbhf.csv"));
    let b = csv_without_wall(&dir.path().join("cmp/run_1_mmfbhf/trace_mmfbhf.csv"));
    assert_eq!(a, b);
}

#[test]
fn compare_mismatch_sweep_has_monotone_gap_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, strength) in [0.0, 0.05, 0.1].iter().enumerate() {
        let path = dir.path().join(format!("sweep{i}.toml"));
        write(
            &path,
            &format!(
                r#"
[problem]
kind = "quadratic_synthetic"
seed = 7

[quadratic]
dim = 10
data_dim = 14
mismatch_strength = {strength}
rho_margin = 0.2

[solver]
algorithm = "mmfbhf"
max_iter = 3000
tol = 1e-11
record_every = 25

[output]
dir = "{}"
"#,
                dir.path().join("out").display()
            ),
        );
        paths.push(path);
    }
    let mut cmd = msplit();
    cmd.args(["compare"]);
    for p in &paths {
        cmd.arg("--config").arg(p);
    }
    run_ok(&mut cmd);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/compare_summary.json")).unwrap(),
    )
    .unwrap();
    let bounds: Vec<f64> = summary["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["gap_report"]["bound"].as_f64().unwrap())
        .collect();
    assert_eq!(bounds.len(), 3);
    assert!(bounds[0] < 1e-12, "matched run has a zero bound");
    assert!(bounds[0] <= bounds[1] && bounds[1] <= bounds[2], "{bounds:?}");
    for r in summary["runs"].as_array().unwrap() {
        assert!(r["gap_report"]["holds"].as_bool().unwrap());
    }
}

#[test]
fn phantom_subcommand_exports_binary_header_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ct.toml");
    write(
        &path,
        &format!(
            r#"
[problem]
kind = "ct_desk"
seed = 5

[geometry]
n_pixels_side = 16
n_angles = 8
n_bins = 24

[output]
dir = "{}"
"#,
            dir.path().join("out").display()
        ),
    );
    run_ok(msplit().args(["phantom", "--config"]).arg(&path));
    for stem in ["phantom", "sinogram"] {
        for ext in ["bin", "json", "csv"] {
            assert!(
                dir.path().join(format!("out/{stem}.{ext}")).exists(),
                "{stem}.{ext} missing"
            );
        }
    }
    let bin = std::fs::read(dir.path().join("out/phantom.bin")).unwrap();
    assert_eq!(bin.len(), 16 * 16 * 8, "f64le image payload");
    let header: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/phantom.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(header["dtype"], "f64le");
    assert_eq!(header["len"], 256);
    let csv = std::fs::read_to_string(dir.path().join("out/phantom.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 16);
}

#[test]
fn ct_run_with_both_algorithms_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ct.toml");
    write(
        &path,
        &format!(
            r#"
[problem]
kind = "ct_desk"
seed = 42

[geometry]
n_pixels_side = 16
n_angles = 12
n_bins = 24

[solver]
algorithm = "both"
max_iter = 4000
tol = 1e-6
record_every = 20

[output]
dir = "{}"
"#,
            dir.path().join("out").display()
        ),
    );
    run_ok(msplit().args(["run", "--config"]).arg(&path));
    let mut snrs = Vec::new();
    for alg in ["mmfbhf", "mmfdrf"] {
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("out/summary_{alg}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(summary["converged"], true, "{alg} converged");
        snrs.push(summary["final_metrics"]["snr_db"].as_f64().unwrap());
        assert!(summary["final_metrics"]["roi_snr_db"].is_number());
        assert!(summary["input_snr_db"].is_number());
    }
    assert!((snrs[0] - snrs[1]).abs() < 0.2, "final SNRs {snrs:?}");
}

#[test]
fn diverging_instance_exits_three_with_partial_trace() {
    // A weakly monotone ridge (rho < 0) with a huge box: the step passes
    // the gamma*rho > -1 admissibility gate, but the standing assumption
    // rho_hat >= 0 fails and the expanding resolvent drives the iterates
    // to overflow. The run must fail fast with the partial trace flushed.
    let dir = tempfile::tempdir().unwrap();
    let n = 4;
    let m = 5;
    let l = vec![vec![0.01f64; n]; m];
    let c: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.05 } else { 0.0 }).collect())
        .collect();
    let problem = serde_json::json!({
        "l": l,
        "c": c,
        "offset": vec![1.0; m],
        "alpha": 0.01,
        "x_max": 1e308,
        "rho": -0.45,
    });
    let problem_path = dir.path().join("problem.json");
    write(&problem_path, &serde_json::to_string(&problem).unwrap());
    let config_path = dir.path().join("diverge.toml");
    write(
        &config_path,
        &format!(
            r#"
[problem]
kind = "custom_file"
path = "{}"

[solver]
algorithm = "mmfbhf"
max_iter = 20000
tol = 0.0
record_every = 50

[output]
dir = "{}"
"#,
            problem_path.display(),
            dir.path().join("out").display()
        ),
    );
    let out = msplit()
        .args(["run", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = dir.path().join("out/trace_mmfbhf.csv");
    assert!(trace.exists(), "partial trace flushed");
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() > 1, "partial trace has rows");
}
