//! Trace CSV and summary JSON emission.

use std::io::Write;
use std::path::Path;

use ndarray::Array1;

use msplit::diagnostics::{
    fejer_monitor, quality, rate_estimate_with_stride, FejerReport, GapReport, QualityMetrics,
    RateReport,
};
use msplit::solvers::IterateTrace;
use msplit::stepsize::ConstantsLedger;

use crate::CliError;

pub const CSV_HEADER: &str = "n,wall_ns,residual,snr_db,nmse,mae,dist_to_ref";

/// One emitted CSV row; `None` fields serialize as empty cells.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub n: usize,
    pub wall_ns: u64,
    pub residual: Option<f64>,
    pub snr_db: Option<f64>,
    pub nmse: Option<f64>,
    pub mae: Option<f64>,
    pub dist_to_ref: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Builds one row per recorded snapshot (start, every `record_every`-th
/// step, finish), attaching quality metrics against the ground truth when
/// one exists.
pub fn trace_rows(trace: &IterateTrace, truth: Option<&Array1<f64>>) -> Vec<TraceRow> {
    trace
        .snapshots
        .iter()
        .map(|snap| {
            let stats = if snap.n == 0 {
                None
            } else {
                trace.steps.get(snap.n - 1)
            };
            let metrics: Option<QualityMetrics> =
                truth.and_then(|t| quality(&snap.x, t, None).ok());
            TraceRow {
                n: snap.n,
                wall_ns: stats.map_or(0, |s| s.wall_ns),
                residual: stats.map(|s| s.residual),
                snr_db: metrics.as_ref().map(|m| m.snr_db),
                nmse: metrics.as_ref().map(|m| m.nmse),
                mae: metrics.as_ref().map(|m| m.mae),
                dist_to_ref: if snap.n == 0 {
                    trace.initial_dist
                } else {
                    stats.and_then(|s| s.dist_to_ref)
                },
            }
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), CliError> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            r.wall_ns,
            cell(r.residual),
            cell(r.snr_db),
            cell(r.nmse),
            cell(r.mae),
            cell(r.dist_to_ref),
        ));
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(out.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Self-referenced convergence reports: distances of the snapshot iterates
/// to the final iterate, with the perturbation budget summed over each
/// snapshot window.
pub struct SnapshotDiagnostics {
    pub rate: Option<RateReport>,
    pub fejer: Option<FejerReport>,
    pub reference_kind: &'static str,
}

pub fn snapshot_diagnostics(
    trace: &IterateTrace,
    spec: &msplit::operators::ProblemSpec,
    ledger: &ConstantsLedger,
    eta_bar: f64,
) -> SnapshotDiagnostics {
    // Prefer genuine reference distances when the run had one.
    if let Some(distances) = trace.distances() {
        let omegas: Vec<f64> = (0..distances.len())
            .map(|n| spec.mismatch.omega(n))
            .collect();
        let theta = theta_for(trace, ledger);
        let rate = theta.and_then(|t| rate_estimate_with_stride(&distances, 1, t, eta_bar).ok());
        let fejer = fejer_monitor(&distances, &omegas).ok();
        return SnapshotDiagnostics {
            rate,
            fejer,
            reference_kind: "user",
        };
    }
    let final_z = &trace.final_z;
    let distances: Vec<f64> = trace
        .snapshots
        .iter()
        .map(|s| {
            let d = &s.z - final_z;
            d.dot(&d).sqrt()
        })
        .collect();
    let mut budgets = Vec::with_capacity(distances.len());
    for w in trace.snapshots.windows(2) {
        budgets.push((w[0].n..w[1].n).map(|n| spec.mismatch.omega(n)).sum());
    }
    budgets.push(0.0);
    let stride = trace
        .snapshots
        .windows(2)
        .map(|w| w[1].n - w[0].n)
        .max()
        .unwrap_or(1)
        .max(1);
    let theta = theta_for(trace, ledger);
    let rate = theta.and_then(|t| rate_estimate_with_stride(&distances, stride, t, eta_bar).ok());
    let fejer = fejer_monitor(&distances, &budgets).ok();
    SnapshotDiagnostics {
        rate,
        fejer,
        reference_kind: "final_iterate",
    }
}

fn theta_for(trace: &IterateTrace, ledger: &ConstantsLedger) -> Option<f64> {
    match trace.algorithm {
        msplit::solvers::Algorithm::Mmfbhf => ledger.theta_fbhf,
        msplit::solvers::Algorithm::Mmfdrf => ledger.theta_fdrf,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_summary(
    trace: &IterateTrace,
    ledger: &ConstantsLedger,
    problem_hash: &str,
    final_metrics: Option<&QualityMetrics>,
    diag: &SnapshotDiagnostics,
    gap: Option<&GapReport>,
    input_snr_db: Option<f64>,
    mismatch_severity: Option<f64>,
) -> serde_json::Value {
    serde_json::json!({
        "algorithm": trace.algorithm.name(),
        "problem_hash": problem_hash,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "final_residual": trace.steps.last().map(|s| s.residual),
        "wall_ns_total": trace.steps.last().map(|s| s.wall_ns),
        "final_metrics": final_metrics,
        "rate_report": diag.rate,
        "fejer_report": diag.fejer,
        "reference_kind": diag.reference_kind,
        "gap_report": gap,
        "input_snr_db": input_snr_db,
        "mismatch_severity": mismatch_severity,
        "ledger": ledger,
    })
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serialization failed: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
