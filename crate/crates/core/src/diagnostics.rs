//! Convergence monitors and metric computation over completed traces.
//!
//! All analyses here are pure functions of recorded scalars or iterates and
//! are safe to run in parallel with anything else.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{MismatchFamily, SpectralEstimates};
use crate::operators::{d_map, solution_gap_bound, OperatorError, ProblemSpec};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least {need} entries, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("sequences must have equal length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} strictly positive distances, got {got}")]
    TooFewPositive { need: usize, got: usize },
    #[error("reference vector has zero norm")]
    ZeroReference,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Outcome of a quasi-Fejér check on a distance sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FejerReport {
    /// `Σ max(0, d_{n+1} − d_n)`.
    pub total_increase: f64,
    /// Smallest C with every increase ≤ C·ω_n; infinite if an increase
    /// occurs at a step with zero budget.
    pub fitted_c: f64,
    /// Largest single increase relative to the sequence scale (its largest
    /// distance), so machine-epsilon wobble at convergence does not count.
    pub max_relative_increase: f64,
    /// Set when a zero-budget (ω ≡ 0) sequence shows an increase beyond
    /// 1e−10 relative to the sequence scale.
    pub violation: bool,
}

/// Checks that distance increases are dominated by the mismatch budget.
///
/// `omegas[n]` is the budget active at the step from `distances[n]` to
/// `distances[n+1]`; the sequences must have the same length (the last
/// budget entry is unused).
pub fn fejer_monitor(
    distances: &[f64],
    omegas: &[f64],
) -> Result<FejerReport, DiagnosticsError> {
    if distances.len() < 2 {
        return Err(DiagnosticsError::TooShort {
            need: 2,
            got: distances.len(),
        });
    }
    if omegas.len() != distances.len() {
        return Err(DiagnosticsError::LengthMismatch(
            distances.len(),
            omegas.len(),
        ));
    }
    let scale = distances
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut total_increase = 0.0;
    let mut fitted_c = 0.0f64;
    let mut max_rel = 0.0f64;
    for n in 0..distances.len() - 1 {
        let inc = (distances[n + 1] - distances[n]).max(0.0);
        if inc == 0.0 {
            continue;
        }
        total_increase += inc;
        max_rel = max_rel.max(inc / scale);
        if omegas[n] > 0.0 {
            fitted_c = fitted_c.max(inc / omegas[n]);
        } else {
            fitted_c = f64::INFINITY;
        }
    }
    let zero_budget = omegas.iter().all(|&w| w == 0.0);
    Ok(FejerReport {
        total_increase,
        fitted_c,
        max_relative_increase: max_rel,
        violation: zero_budget && max_rel > 1e-10,
    })
}

/// Asymptotic linear-rate estimate against theory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    /// `exp(slope)` of the least-squares fit of `log d_n` over the last
    /// quartile of the positive prefix.
    pub fitted_ratio: f64,
    pub theoretical_theta: f64,
    pub eta_bar: f64,
    /// `fitted_ratio ≤ max(theta, eta_bar) + 0.02`.
    pub satisfied: bool,
}

/// Fits the per-iteration contraction ratio on the tail of a distance
/// sequence; entries after the first nonpositive one are ignored.
pub fn rate_estimate(
    distances: &[f64],
    theta: f64,
    eta_bar: f64,
) -> Result<RateReport, DiagnosticsError> {
    rate_estimate_with_stride(distances, 1, theta, eta_bar)
}

/// [`rate_estimate`] for sequences sampled every `stride` iterations: the
/// fitted slope is rescaled to a per-iteration ratio before comparison.
pub fn rate_estimate_with_stride(
    distances: &[f64],
    stride: usize,
    theta: f64,
    eta_bar: f64,
) -> Result<RateReport, DiagnosticsError> {
    let positive: Vec<f64> = distances
        .iter()
        .copied()
        .take_while(|&d| d > 0.0 && d.is_finite())
        .collect();
    if positive.len() < 8 {
        return Err(DiagnosticsError::TooFewPositive {
            need: 8,
            got: positive.len(),
        });
    }
    let start = positive.len() - (positive.len() / 4).max(2);
    let tail = &positive[start..];
    // Least-squares slope of log d against the sample index.
    let m = tail.len() as f64;
    let mean_i = (tail.len() - 1) as f64 / 2.0;
    let logs: Vec<f64> = tail.iter().map(|d| d.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, lg) in logs.iter().enumerate() {
        let di = i as f64 - mean_i;
        num += di * (lg - mean_log);
        den += di * di;
    }
    let slope = num / den;
    let fitted_ratio = (slope / stride.max(1) as f64).exp();
    Ok(RateReport {
        fitted_ratio,
        theoretical_theta: theta,
        eta_bar,
        satisfied: fitted_ratio <= theta.max(eta_bar) + 0.02,
    })
}

/// Comparison of the measured solution gap against the a-priori bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub actual_gap: f64,
    pub bound: f64,
    /// `bound − actual_gap ≥ −1e−8`.
    pub holds: bool,
}

/// Verifies the solution-perturbation bound against the measured distance
/// between a mismatched solution and the matched one.
pub fn gap_bound_report(
    z_mismatched: &Array1<f64>,
    z_matched: &Array1<f64>,
    spec: &ProblemSpec,
    estimates: &SpectralEstimates,
) -> Result<GapReport, DiagnosticsError> {
    let bound = solution_gap_bound(z_mismatched, spec, estimates)?;
    let diff = z_mismatched - z_matched;
    let actual_gap = diff.dot(&diff).sqrt();
    Ok(GapReport {
        actual_gap,
        bound,
        holds: bound - actual_gap >= -1e-8,
    })
}

/// Result of sampling the perturbation bound
/// `‖D_{K_n}z − D_K z‖ ≤ ω_n (θ₁‖z − z*‖ + ‖α(Lz* − c) + B L z*‖)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlackReport {
    /// Minimum of (rhs − lhs) over all samples.
    pub worst_slack: f64,
    /// Largest rhs encountered; the tolerance scale for the check.
    pub scale: f64,
    pub samples: usize,
}

/// Samples the perturbation bound on random `(z, z*, n)` triples. The
/// right-hand side uses the residual at `z*` including the data offset,
/// which is what the bound's derivation controls.
pub fn perturbation_bound_check(
    spec: &ProblemSpec,
    family: &MismatchFamily,
    theta1: f64,
    samples: usize,
    seed: u64,
) -> Result<SlackReport, DiagnosticsError> {
    let dim = spec.dim();
    let mut worst = f64::INFINITY;
    let mut scale = 0.0f64;
    let mut count = 0usize;
    for t in 0..samples {
        let n = t % 12;
        let omega_n = family.omega(n);
        let z = crate::linops::random_vector(dim, seed ^ (3 * t as u64 + 1));
        let z_star = crate::linops::random_vector(dim, seed ^ (3 * t as u64 + 2));
        let k_n = family.operator(n);
        let lhs_vec = d_map(&k_n, spec, &z)? - d_map(family.base(), spec, &z)?;
        let lhs = lhs_vec.dot(&lhs_vec).sqrt();
        let diff = &z - &z_star;
        let residual_star = spec.forward_residual(&z_star)?;
        let rhs = omega_n
            * (theta1 * diff.dot(&diff).sqrt() + residual_star.dot(&residual_star).sqrt());
        worst = worst.min(rhs - lhs);
        scale = scale.max(rhs);
        count += 1;
    }
    Ok(SlackReport {
        worst_slack: worst,
        scale,
        samples: count,
    })
}

/// Reconstruction quality: all quantities compare an estimate against the
/// ground truth, with optional region-of-interest variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub snr_db: f64,
    pub nmse: f64,
    pub mae: f64,
    pub roi_snr_db: Option<f64>,
    pub roi_nmse: Option<f64>,
    pub roi_mae: Option<f64>,
}

/// Cap used to keep a perfect reconstruction serializable.
pub const SNR_CAP_DB: f64 = 300.0;

fn quality_core(x_hat: &[f64], x_bar: &[f64]) -> Result<(f64, f64, f64), DiagnosticsError> {
    let mut err2 = 0.0;
    let mut ref2 = 0.0;
    let mut mae = 0.0f64;
    for (&h, &b) in x_hat.iter().zip(x_bar.iter()) {
        let d = b - h;
        err2 += d * d;
        ref2 += b * b;
        mae = mae.max(d.abs());
    }
    if ref2 <= 0.0 {
        return Err(DiagnosticsError::ZeroReference);
    }
    let nmse = err2 / ref2;
    let snr = if nmse > 0.0 {
        // + 0.0 normalizes the negative zero at nmse = 1.
        (-10.0 * nmse.log10()).min(SNR_CAP_DB) + 0.0
    } else {
        SNR_CAP_DB
    };
    Ok((snr, nmse, mae))
}

/// `NMSE = ‖x̄ − x̂‖²/‖x̄‖²`, `MAE = ‖x̄ − x̂‖_∞`, `SNR = −10 log₁₀ NMSE`
/// (positive for good fits, capped at [`SNR_CAP_DB`]).
pub fn quality(
    x_hat: &Array1<f64>,
    x_bar: &Array1<f64>,
    roi_mask: Option<&[bool]>,
) -> Result<QualityMetrics, DiagnosticsError> {
    if x_hat.len() != x_bar.len() {
        return Err(DiagnosticsError::LengthMismatch(x_hat.len(), x_bar.len()));
    }
    let hat = x_hat.as_slice().expect("contiguous");
    let bar = x_bar.as_slice().expect("contiguous");
    let (snr_db, nmse, mae) = quality_core(hat, bar)?;
    let mut metrics = QualityMetrics {
        snr_db,
        nmse,
        mae,
        roi_snr_db: None,
        roi_nmse: None,
        roi_mae: None,
    };
    if let Some(mask) = roi_mask {
        if mask.len() != x_bar.len() {
            return Err(DiagnosticsError::LengthMismatch(mask.len(), x_bar.len()));
        }
        let mut mh = Vec::new();
        let mut mb = Vec::new();
        for i in 0..mask.len() {
            if mask[i] {
                mh.push(hat[i]);
                mb.push(bar[i]);
            }
        }
        let (s, n, m) = quality_core(&mh, &mb)?;
        metrics.roi_snr_db = Some(s);
        metrics.roi_nmse = Some(n);
        metrics.roi_mae = Some(m);
    }
    Ok(metrics)
}

/// Input signal-to-noise ratio between a clean projection and its noisy
/// acquisition: `20 log₁₀(‖Lx̄‖ / ‖Lx̄ − c‖)`.
pub fn input_snr_db(clean: &Array1<f64>, noisy: &Array1<f64>) -> f64 {
    let diff = clean - noisy;
    let num = clean.dot(clean).sqrt();
    let den = diff.dot(&diff).sqrt();
    if den == 0.0 {
        SNR_CAP_DB
    } else {
        20.0 * (num / den).log10()
    }
}

/// Per-step contraction audit: largest ratio `d_{n+1}/d_n` over the portion
/// of the sequence above the rounding floor.
pub fn max_step_ratio(distances: &[f64], floor: f64) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for w in distances.windows(2) {
        if w[0] > floor && w[1].is_finite() {
            let r = w[1] / w[0];
            worst = Some(worst.map_or(r, |m: f64| m.max(r)));
        }
    }
    worst
}
