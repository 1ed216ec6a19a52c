//! The two mismatched splitting iterations with stopping logic and trace
//! capture.
//!
//! Per iteration both schemes evaluate the composite map `D_{K_n}` exactly
//! twice. The half-forward scheme additionally evaluates `C` once and the
//! resolvent of `A` once; the Douglas-Rachford-type scheme evaluates the
//! resolvents of `C` and `A` once each.
//!
//! A run is a single-threaded state machine; several runs over a shared
//! `ProblemSpec` may execute concurrently.

use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{LinearMap, LinopsError};
use crate::operators::{d_map, OperatorError, ProblemSpec};
use crate::stepsize::{in_gamma_set, ConstantsLedger};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linops(#[from] LinopsError),
    #[error("step size violates gamma*rho > -1 (gamma = {gamma}, rho = {rho})")]
    ResolventContractivity { gamma: f64, rho: f64 },
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("non-finite iterate at iteration {iteration}; last finite trace attached")]
    NonFinite {
        iteration: usize,
        trace: Box<IterateTrace>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mmfbhf,
    Mmfdrf,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mmfbhf => "mmfbhf",
            Algorithm::Mmfdrf => "mmfdrf",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Run parameters. `epsilon` is the half-width of the admissible step band
/// for the half-forward scheme and is echoed into diagnostics so bound
/// checks use the same value the run used.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub rel_residual_tol: f64,
    pub record_every: usize,
    /// Known z-space limit, for per-step distance diagnostics. For the
    /// Douglas-Rachford scheme this is the fixed point of the governing
    /// operator, `z* = x* + γ C x*`, not the solution itself.
    pub reference: Option<Array1<f64>>,
}

impl SolverConfig {
    /// Pulls the admissible step for `algorithm` out of an assembled ledger.
    pub fn from_ledger(
        algorithm: Algorithm,
        ledger: &ConstantsLedger,
        max_iter: usize,
        rel_residual_tol: f64,
        record_every: usize,
    ) -> Self {
        let (gamma, epsilon) = match algorithm {
            Algorithm::Mmfbhf => (ledger.gamma_fbhf, ledger.eps_fbhf),
            Algorithm::Mmfdrf => (ledger.gamma_fdrf, 0.0),
        };
        Self {
            algorithm,
            gamma,
            epsilon,
            max_iter,
            rel_residual_tol,
            record_every,
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: Array1<f64>) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Checks the step against the admissible set of the chosen scheme.
    pub fn validate(&self, ledger: &ConstantsLedger) -> Result<(), SolverError> {
        if self.max_iter == 0 {
            return Err(SolverError::BadConfig("max_iter must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(SolverError::BadConfig("record_every must be >= 1".into()));
        }
        if self.rel_residual_tol < 0.0 || self.rel_residual_tol.is_nan() {
            return Err(SolverError::BadConfig(format!(
                "rel_residual_tol must be nonnegative, got {}",
                self.rel_residual_tol
            )));
        }
        if self.gamma <= 0.0 || !self.gamma.is_finite() {
            return Err(SolverError::BadConfig(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if self.gamma * ledger.rho <= -1.0 {
            return Err(SolverError::ResolventContractivity {
                gamma: self.gamma,
                rho: ledger.rho,
            });
        }
        match self.algorithm {
            Algorithm::Mmfbhf => {
                if self.epsilon <= 0.0 || self.epsilon.is_nan() {
                    return Err(SolverError::BadConfig(
                        "mmfbhf requires a positive epsilon band".into(),
                    ));
                }
                if self.gamma < self.epsilon || self.gamma > ledger.chi - self.epsilon {
                    return Err(SolverError::BadConfig(format!(
                        "gamma = {} outside [eps, chi - eps] = [{}, {}]",
                        self.gamma,
                        self.epsilon,
                        ledger.chi - self.epsilon
                    )));
                }
            }
            Algorithm::Mmfdrf => {
                if !in_gamma_set(self.gamma, ledger.beta, ledger.kappa_k, ledger.rho) {
                    return Err(SolverError::BadConfig(format!(
                        "gamma = {} outside the admissible set (beta = {}, kappa = {})",
                        self.gamma, ledger.beta, ledger.kappa_k
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-step scalars, recorded at every iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub n: usize,
    /// `‖z_{n} − z_{n−1}‖ / max(‖z_{n−1}‖, 1)`.
    pub residual: f64,
    /// Cumulative wall time since the run started.
    pub wall_ns: u64,
    pub dist_to_ref: Option<f64>,
}

/// Full iterate snapshot, recorded every `record_every` steps plus start
/// and finish.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub n: usize,
    pub z: Array1<f64>,
    /// Primal estimate: `x_n` for the half-forward scheme,
    /// `J_{γC} z_n` for the Douglas-Rachford scheme.
    pub x: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub algorithm: Algorithm,
    pub steps: Vec<StepStats>,
    pub snapshots: Vec<Snapshot>,
    pub final_z: Array1<f64>,
    pub final_x: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖z_0 − reference‖` when a reference was configured.
    pub initial_dist: Option<f64>,
}

impl IterateTrace {
    pub fn residuals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.residual).collect()
    }

    /// Distance-to-reference series `d_0, d_1, …` (present when the run had
    /// a reference).
    pub fn distances(&self) -> Option<Vec<f64>> {
        let d0 = self.initial_dist?;
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(d0);
        for s in &self.steps {
            out.push(s.dist_to_ref?);
        }
        Some(out)
    }
}

fn all_finite(v: &Array1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// One step of the mismatched forward-backward-half-forward iteration:
///
/// ```text
/// u = D_{K_n} z
/// y = z − γ(Cz + u)
/// x = J_{γA}(y)
/// z⁺ = x + γ(u − D_{K_n} x)
/// ```
pub fn mmfbhf_step(
    z: &Array1<f64>,
    gamma: f64,
    k_n: &LinearMap,
    spec: &ProblemSpec,
) -> Result<(Array1<f64>, Array1<f64>), SolverError> {
    if gamma * spec.monotone.rho <= -1.0 {
        return Err(SolverError::ResolventContractivity {
            gamma,
            rho: spec.monotone.rho,
        });
    }
    let u = d_map(k_n, spec, z)?;
    let cz = spec.cocoercive.eval(z);
    let y = z - &((&cz + &u) * gamma);
    let x = spec.monotone.resolvent(gamma, &y);
    let dx = d_map(k_n, spec, &x)?;
    let z_next = &x + &((&u - &dx) * gamma);
    Ok((z_next, x))
}

/// `(z_next, x, y)` produced by one Douglas-Rachford-type step.
pub type FdrfStep = (Array1<f64>, Array1<f64>, Array1<f64>);

/// One step of the mismatched forward-Douglas-Rachford-forward iteration:
///
/// ```text
/// x = J_{γC} z
/// w = D_{K_n} x
/// y = J_{γA}(2x − z − γw)
/// z⁺ = z + y − x − γ(D_{K_n} y − w)
/// ```
pub fn mmfdrf_step(
    z: &Array1<f64>,
    gamma: f64,
    k_n: &LinearMap,
    spec: &ProblemSpec,
) -> Result<FdrfStep, SolverError> {
    if gamma * spec.monotone.rho <= -1.0 {
        return Err(SolverError::ResolventContractivity {
            gamma,
            rho: spec.monotone.rho,
        });
    }
    let x = spec.cocoercive.resolvent(gamma, z)?;
    let w = d_map(k_n, spec, &x)?;
    let arg = &(&x * 2.0) - z - &(&w * gamma);
    let y = spec.monotone.resolvent(gamma, &arg);
    let dy = d_map(k_n, spec, &y)?;
    let z_next = z + &y - &x - ((dy - &w) * gamma);
    Ok((z_next, x, y))
}

fn primal_estimate(
    algorithm: Algorithm,
    spec: &ProblemSpec,
    gamma: f64,
    z: &Array1<f64>,
) -> Result<Array1<f64>, SolverError> {
    match algorithm {
        Algorithm::Mmfbhf => Ok(z.clone()),
        Algorithm::Mmfdrf => Ok(spec.cocoercive.resolvent(gamma, z)?),
    }
}

/// Runs the configured iteration from `z0` until the relative residual
/// drops below tolerance or `max_iter` is reached.
///
/// Non-finite iterates abort the run and return the trace collected so far
/// inside the error.
pub fn run(
    spec: &ProblemSpec,
    config: &SolverConfig,
    ledger: &ConstantsLedger,
    z0: &Array1<f64>,
) -> Result<IterateTrace, SolverError> {
    spec.validate()?;
    config.validate(ledger)?;
    if config.algorithm == Algorithm::Mmfdrf && !spec.cocoercive.has_resolvent() {
        return Err(SolverError::Operator(
            OperatorError::MissingCocoerciveResolvent,
        ));
    }

    let gamma = config.gamma;
    let mut z = z0.clone();
    let mut trace = IterateTrace {
        algorithm: config.algorithm,
        steps: Vec::with_capacity(config.max_iter.min(1 << 20)),
        snapshots: Vec::new(),
        final_z: z0.clone(),
        final_x: primal_estimate(config.algorithm, spec, gamma, z0)?,
        iterations: 0,
        converged: false,
        initial_dist: config.reference.as_ref().map(|r| norm(&(z0 - r))),
    };
    trace.snapshots.push(Snapshot {
        n: 0,
        z: z.clone(),
        x: trace.final_x.clone(),
    });

    let start = Instant::now();
    for n in 0..config.max_iter {
        let k_n = spec.mismatch.operator(n);
        let (z_next, x) = match config.algorithm {
            Algorithm::Mmfbhf => mmfbhf_step(&z, gamma, &k_n, spec)?,
            Algorithm::Mmfdrf => {
                let (z_next, x, _y) = mmfdrf_step(&z, gamma, &k_n, spec)?;
                (z_next, x)
            }
        };
        let step_index = n + 1;
        let residual = norm(&(&z_next - &z)) / norm(&z).max(1.0);
        // A residual that is not finite means the iterate norm overflowed
        // even if every component is still representable.
        if !all_finite(&z_next) || !residual.is_finite() {
            trace.iterations = n;
            trace.final_z = z.clone();
            trace.final_x = primal_estimate(config.algorithm, spec, gamma, &z)?;
            return Err(SolverError::NonFinite {
                iteration: step_index,
                trace: Box::new(trace),
            });
        }
        let dist_to_ref = config.reference.as_ref().map(|r| norm(&(&z_next - r)));
        trace.steps.push(StepStats {
            n: step_index,
            residual,
            wall_ns: start.elapsed().as_nanos() as u64,
            dist_to_ref,
        });
        z = z_next;
        let done = residual < config.rel_residual_tol || step_index == config.max_iter;
        if step_index % config.record_every == 0 || done {
            // The primal estimate accompanying z_{n+1}: for the half-forward
            // scheme the last backward point x_n, for the Douglas-Rachford
            // scheme J_{γC} z_{n+1}.
            let snap_x = match config.algorithm {
                Algorithm::Mmfbhf => x.clone(),
                Algorithm::Mmfdrf => spec.cocoercive.resolvent(gamma, &z)?,
            };
            trace.snapshots.push(Snapshot {
                n: step_index,
                z: z.clone(),
                x: snap_x,
            });
        }
        if done {
            trace.iterations = step_index;
            trace.converged = residual < config.rel_residual_tol;
            let last = trace.snapshots.last().expect("final snapshot recorded");
            trace.final_z = last.z.clone();
            trace.final_x = last.x.clone();
            return Ok(trace);
        }
    }
    unreachable!("loop exits via the `done` branch at step_index == max_iter");
}
