//! The four subcommands: estimate, run, compare, phantom.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array1;

use msplit::diagnostics::gap_bound_report;
use msplit::solvers::{run, Algorithm, SolverConfig, SolverError};

use crate::config::{ProblemKind, RunConfig, ScheduleKind};
use crate::output::{
    run_summary, snapshot_diagnostics, trace_rows, write_json, write_trace_csv, TraceRow,
    CSV_HEADER,
};
use crate::problem::{assemble, Assembled};
use crate::CliError;

pub struct RunArtifacts {
    pub run_id: String,
    pub rows: Vec<TraceRow>,
    pub summary: serde_json::Value,
}

/// Assembles the problem and writes the constants ledger as JSON.
pub fn cmd_estimate(config: &RunConfig) -> Result<(), CliError> {
    let assembled = assemble(config)?;
    let text = serde_json::to_string_pretty(&assembled.ledger)
        .map_err(|e| CliError::Io(format!("serialization failed: {e}")))?;
    std::fs::create_dir_all(&config.output.dir)
        .map_err(|e| CliError::Io(format!("cannot create output dir: {e}")))?;
    let path = config.output.dir.join("ledger.json");
    std::fs::write(&path, &text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    println!("{text}");
    Ok(())
}

fn eta_bar_of(config: &RunConfig) -> f64 {
    match config.mismatch.schedule {
        ScheduleKind::Geometric => config.mismatch.eta_bar,
        ScheduleKind::Constant => 0.0,
    }
}

/// Runs one algorithm of an assembled problem and writes its artifacts
/// into `dir`. A non-finite iterate flushes the partial trace before the
/// numerical-failure exit.
fn execute_single(
    config: &RunConfig,
    assembled: &Assembled,
    algorithm: Algorithm,
    solver_config: &SolverConfig,
    dir: &Path,
    run_id: &str,
    problem_hash: &str,
) -> Result<RunArtifacts, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let z0 = Array1::zeros(assembled.spec.dim());
    let trace_path = dir.join(format!("trace_{}.csv", algorithm.name()));
    let trace = match run(&assembled.spec, solver_config, &assembled.ledger, &z0) {
        Ok(trace) => trace,
        Err(SolverError::NonFinite { iteration, trace }) => {
            let rows = trace_rows(&trace, assembled.truth.as_ref());
            write_trace_csv(&trace_path, &rows)?;
            return Err(CliError::Numerical(format!(
                "{algorithm}: non-finite iterate at iteration {iteration} \
                 (partial trace flushed to {})",
                trace_path.display()
            )));
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };

    let rows = trace_rows(&trace, assembled.truth.as_ref());
    write_trace_csv(&trace_path, &rows)?;

    let roi = assembled.ct.as_ref().map(|ct| ct.fov_mask.as_slice());
    let final_metrics = assembled
        .truth
        .as_ref()
        .and_then(|t| msplit::diagnostics::quality(&trace.final_x, t, roi).ok());
    let diag = snapshot_diagnostics(&trace, &assembled.spec, &assembled.ledger, eta_bar_of(config));
    // Solution-gap report against the matched dense reference, when the
    // problem carries one and the bound applies.
    let gap = match (&assembled.quadratic, &assembled.truth) {
        (Some(_), Some(matched)) => {
            gap_bound_report(&trace.final_x, matched, &assembled.spec, &assembled.estimates).ok()
        }
        _ => None,
    };
    let summary = run_summary(
        &trace,
        &assembled.ledger,
        problem_hash,
        final_metrics.as_ref(),
        &diag,
        gap.as_ref(),
        assembled.ct.as_ref().map(|ct| ct.input_snr_db),
        assembled.ct.as_ref().map(|ct| ct.mismatch_severity),
    );
    write_json(&dir.join(format!("summary_{}.json", algorithm.name())), &summary)?;

    if config.output.write_iterates {
        let cols = assembled
            .ct
            .as_ref()
            .map_or(1, |ct| ct.geometry.n_pixels_side);
        msplit::tomo::export_vector(
            dir,
            &format!("x_final_{}", algorithm.name()),
            &trace.final_x,
            cols,
            serde_json::json!({"run_id": run_id, "algorithm": algorithm.name()}),
        )
        .map_err(|e| CliError::Io(e.to_string()))?;
    }

    Ok(RunArtifacts {
        run_id: run_id.to_string(),
        rows,
        summary,
    })
}

/// Validates every requested algorithm against the ledger before any run
/// starts, then executes them in order.
pub fn cmd_run(config: &RunConfig) -> Result<(), CliError> {
    let assembled = assemble(config)?;
    let problem_hash = config.problem_hash()?;
    let algorithms = config.solver.algorithm.algorithms();
    let mut solver_configs = Vec::new();
    for &alg in &algorithms {
        let sc = SolverConfig::from_ledger(
            alg,
            &assembled.ledger,
            config.solver.max_iter,
            config.solver.tol,
            config.solver.record_every,
        );
        sc.validate(&assembled.ledger)
            .map_err(|e| CliError::Config(format!("{alg}: {e}")))?;
        solver_configs.push(sc);
    }
    for (alg, sc) in algorithms.iter().zip(&solver_configs) {
        execute_single(
            config,
            &assembled,
            *alg,
            sc,
            &config.output.dir,
            alg.name(),
            &problem_hash,
        )?;
    }
    Ok(())
}

fn worker_count(runs: usize) -> usize {
    let cap = std::env::var("MSPLIT_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(4);
    cap.min(runs).max(1)
}

/// Runs every (config, algorithm) pair (at least two) over the same
/// underlying problem and merges the traces into one long-format CSV.
pub fn cmd_compare(configs: &[RunConfig]) -> Result<(), CliError> {
    let mut runs: Vec<(usize, Algorithm)> = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        for alg in c.solver.algorithm.algorithms() {
            runs.push((i, alg));
        }
    }
    if runs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two runs (several --config flags or algorithm = \"both\")"
                .into(),
        ));
    }
    let hashes: Vec<String> = configs
        .iter()
        .map(|c| c.problem_hash())
        .collect::<Result<_, _>>()?;
    if hashes.windows(2).any(|w| w[0] != w[1]) {
        return Err(CliError::Config(format!(
            "configs describe different problems (hashes {})",
            hashes.join(", ")
        )));
    }
    let out_dir = configs[0].output.dir.clone();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("cannot create output dir: {e}")))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunArtifacts, CliError>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    let workers = worker_count(runs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= runs.len() {
                    break;
                }
                let (cfg_idx, algorithm) = runs[idx];
                let config = &configs[cfg_idx];
                let run_id = format!("{idx}_{}", algorithm.name());
                let dir: PathBuf = out_dir.join(format!("run_{run_id}"));
                let outcome = (|| {
                    let assembled = assemble(config)?;
                    let sc = SolverConfig::from_ledger(
                        algorithm,
                        &assembled.ledger,
                        config.solver.max_iter,
                        config.solver.tol,
                        config.solver.record_every,
                    );
                    sc.validate(&assembled.ledger)
                        .map_err(|e| CliError::Config(format!("{algorithm}: {e}")))?;
                    execute_single(
                        config,
                        &assembled,
                        algorithm,
                        &sc,
                        &dir,
                        &run_id,
                        &hashes[cfg_idx],
                    )
                })();
                results.lock().expect("worker poisoned the lock")[idx] = Some(outcome);
            });
        }
    });

    let collected = results.into_inner().expect("scope joined all workers");
    let mut artifacts = Vec::with_capacity(collected.len());
    for slot in collected {
        artifacts.push(slot.expect("every run was claimed by a worker")?);
    }

    // Long-format merge for external plotting.
    let mut merged = String::from("run_id,");
    merged.push_str(CSV_HEADER);
    merged.push('\n');
    for art in &artifacts {
        for r in &art.rows {
            let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            merged.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                art.run_id,
                r.n,
                r.wall_ns,
                cell(r.residual),
                cell(r.snr_db),
                cell(r.nmse),
                cell(r.mae),
                cell(r.dist_to_ref),
            ));
        }
    }
    std::fs::write(out_dir.join("compare.csv"), merged)
        .map_err(|e| CliError::Io(format!("cannot write compare.csv: {e}")))?;

    let summaries: Vec<&serde_json::Value> = artifacts.iter().map(|a| &a.summary).collect();
    write_json(
        &out_dir.join("compare_summary.json"),
        &serde_json::json!({
            "problem_hash": hashes[0],
            "runs": summaries,
        }),
    )?;
    Ok(())
}

/// Generates and exports the phantom and its noisy sinogram.
pub fn cmd_phantom(config: &RunConfig) -> Result<(), CliError> {
    if config.problem.kind != ProblemKind::CtDesk {
        return Err(CliError::Config(
            "phantom generation requires problem.kind = \"ct_desk\"".into(),
        ));
    }
    let geometry = config.geometry.geometry();
    let phantom = msplit::tomo::make_phantom(&geometry, config.geometry.phantom, config.problem.seed);
    let l = msplit::tomo::ray_driven_projector(&geometry)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let clean = l
        .apply(&phantom)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sinogram = msplit::tomo::synthesize_data(
        &l,
        &phantom,
        config.penalties.sigma,
        config.problem.seed.wrapping_add(1),
        &geometry,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = &config.output.dir;
    let geo_json = serde_json::to_value(geometry)
        .map_err(|e| CliError::Io(format!("serialization failed: {e}")))?;
    msplit::tomo::export_vector(
        dir,
        "phantom",
        &phantom,
        geometry.n_pixels_side,
        serde_json::json!({"kind": "image", "geometry": geo_json}),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    msplit::tomo::export_vector(
        dir,
        "sinogram",
        &sinogram.values,
        geometry.n_bins,
        serde_json::json!({
            "kind": "sinogram",
            "geometry": geo_json,
            "sigma": sinogram.sigma,
            "input_snr_db": msplit::diagnostics::input_snr_db(&clean, &sinogram.values),
        }),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    println!(
        "wrote phantom and sinogram for a {}x{} image to {}",
        geometry.n_pixels_side,
        geometry.n_pixels_side,
        dir.display()
    );
    Ok(())
}
