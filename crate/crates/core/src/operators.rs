//! The monotone-operator blocks of the inclusion and the composite
//! mismatched map `D_M : x ↦ αM(Lx − c) + M B L x`.
//!
//! Blocks are supplied as closures: the library never inverts anything
//! numerically. All closures must be re-entrant; blocks are immutable after
//! construction and safe to share across threads.

use std::sync::Arc;

use ndarray::Array1;
use thiserror::Error;

use crate::linops::{LinearMap, LinopsError, MismatchFamily, SpectralEstimates};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Linops(#[from] LinopsError),
    #[error("empty sample set")]
    EmptySample,
    #[error("gap bound inapplicable: rho + alpha*lambda_min = {0} is not positive")]
    GapBoundInapplicable(f64),
    #[error("cocoercive block has no resolvent")]
    MissingCocoerciveResolvent,
    #[error("problem dimensions inconsistent: {0}")]
    Inconsistent(String),
}

type EvalFn = Arc<dyn Fn(&Array1<f64>) -> Array1<f64> + Send + Sync>;
type ResolventFn = Arc<dyn Fn(f64, &Array1<f64>) -> Array1<f64> + Send + Sync>;

/// Maximally ρ-monotone operator given through its resolvent
/// `(γ, y) ↦ J_{γA}(y)`, single-valued whenever `γρ > −1`.
#[derive(Clone)]
pub struct ResolventBlock {
    pub rho: f64,
    resolvent: ResolventFn,
}

impl ResolventBlock {
    pub fn new<F>(rho: f64, resolvent: F) -> Self
    where
        F: Fn(f64, &Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
    {
        Self {
            rho,
            resolvent: Arc::new(resolvent),
        }
    }

    /// The zero operator: `J_{γA} = Id`, ρ = 0.
    pub fn zero() -> Self {
        Self::new(0.0, |_, y| y.clone())
    }

    pub fn resolvent(&self, gamma: f64, y: &Array1<f64>) -> Array1<f64> {
        (self.resolvent)(gamma, y)
    }
}

impl std::fmt::Debug for ResolventBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResolventBlock").field("rho", &self.rho).finish()
    }
}

/// β-cocoercive operator; the resolvent is only needed by the
/// Douglas-Rachford-type scheme and is therefore optional.
#[derive(Clone)]
pub struct CocoerciveBlock {
    pub beta: f64,
    eval: EvalFn,
    resolvent: Option<ResolventFn>,
}

impl CocoerciveBlock {
    pub fn new<F>(beta: f64, eval: F) -> Self
    where
        F: Fn(&Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
    {
        Self {
            beta,
            eval: Arc::new(eval),
            resolvent: None,
        }
    }

    pub fn with_resolvent<F, G>(beta: f64, eval: F, resolvent: G) -> Self
    where
        F: Fn(&Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
        G: Fn(f64, &Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
    {
        Self {
            beta,
            eval: Arc::new(eval),
            resolvent: Some(Arc::new(resolvent)),
        }
    }

    /// The zero operator (cocoercive for every β > 0); `J_{γC} = Id`.
    pub fn zero(beta: f64) -> Self {
        Self::with_resolvent(beta, |x| Array1::zeros(x.len()), |_, y| y.clone())
    }

    pub fn eval(&self, x: &Array1<f64>) -> Array1<f64> {
        (self.eval)(x)
    }

    pub fn has_resolvent(&self) -> bool {
        self.resolvent.is_some()
    }

    pub fn resolvent(&self, gamma: f64, y: &Array1<f64>) -> Result<Array1<f64>, OperatorError> {
        match &self.resolvent {
            Some(r) => Ok(r(gamma, y)),
            None => Err(OperatorError::MissingCocoerciveResolvent),
        }
    }
}

impl std::fmt::Debug for CocoerciveBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CocoerciveBlock")
            .field("beta", &self.beta)
            .field("has_resolvent", &self.resolvent.is_some())
            .finish()
    }
}

/// Monotone ζ-Lipschitz operator acting on the data space.
#[derive(Clone)]
pub struct LipschitzBlock {
    pub zeta: f64,
    eval: EvalFn,
}

impl LipschitzBlock {
    pub fn new<F>(zeta: f64, eval: F) -> Self
    where
        F: Fn(&Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
    {
        Self {
            zeta,
            eval: Arc::new(eval),
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, |x| Array1::zeros(x.len()))
    }

    pub fn eval(&self, y: &Array1<f64>) -> Array1<f64> {
        (self.eval)(y)
    }
}

impl std::fmt::Debug for LipschitzBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LipschitzBlock").field("zeta", &self.zeta).finish()
    }
}

/// The full inclusion instance:
/// `0 ∈ Ax + Cx + αK(Lx − c) + K B L x`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// A: maximally ρ-monotone, resolvent-defined.
    pub monotone: ResolventBlock,
    /// C: β-cocoercive.
    pub cocoercive: CocoerciveBlock,
    /// B: monotone ζ-Lipschitz on the data space.
    pub lipschitz: LipschitzBlock,
    /// L: the forward operator.
    pub forward: LinearMap,
    /// K and its per-iteration perturbations K_n.
    pub mismatch: MismatchFamily,
    /// c: the offset in the data space.
    pub offset: Array1<f64>,
    /// α ≥ 0: weight of the quadratic coupling.
    pub alpha: f64,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.forward.in_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.forward.out_dim()
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let k = self.mismatch.base();
        if k.in_dim() != self.forward.out_dim() || k.out_dim() != self.forward.in_dim() {
            return Err(OperatorError::Inconsistent(format!(
                "K is {}x{} but L is {}x{}",
                k.out_dim(),
                k.in_dim(),
                self.forward.out_dim(),
                self.forward.in_dim()
            )));
        }
        if self.offset.len() != self.forward.out_dim() {
            return Err(OperatorError::Inconsistent(format!(
                "offset has length {}, expected {}",
                self.offset.len(),
                self.forward.out_dim()
            )));
        }
        if self.alpha < 0.0 || self.alpha.is_nan() {
            return Err(OperatorError::Inconsistent(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// The data-space residual `α(Lx − c) + B(Lx)` feeding every `D_M`.
    pub fn forward_residual(&self, x: &Array1<f64>) -> Result<Array1<f64>, OperatorError> {
        let lx = self.forward.apply(x)?;
        let blx = self.lipschitz.eval(&lx);
        Ok((lx - &self.offset) * self.alpha + blx)
    }
}

/// `D_M x = αM(Lx − c) + M B L x`, evaluated with a single application of
/// `M` on the fused data-space residual.
pub fn d_map(
    m: &LinearMap,
    spec: &ProblemSpec,
    x: &Array1<f64>,
) -> Result<Array1<f64>, OperatorError> {
    let residual = spec.forward_residual(x)?;
    Ok(m.apply(&residual)?)
}

/// `D_K` with the unperturbed surrogate adjoint.
pub fn d_map_base(spec: &ProblemSpec, x: &Array1<f64>) -> Result<Array1<f64>, OperatorError> {
    d_map(spec.mismatch.base(), spec, x)
}

/// Certified Lipschitz upper bounds for `D_M`:
/// `κ_M = α‖M∘L‖ + ζ‖M‖‖L‖` and `ζ̃_M = ζ‖M‖‖L‖`. These are norm
/// products, not tight constants.
pub fn lipschitz_bounds(
    alpha: f64,
    zeta: f64,
    norm_ml: f64,
    norm_m: f64,
    norm_l: f64,
) -> (f64, f64) {
    let zeta_tilde = zeta * norm_m * norm_l;
    (alpha * norm_ml + zeta_tilde, zeta_tilde)
}

/// Measures the norms of `M`, `L`, `M∘L` by power iteration and evaluates
/// [`lipschitz_bounds`] for the given problem.
pub fn measure_lipschitz_bounds(
    m: &LinearMap,
    spec: &ProblemSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64), OperatorError> {
    let norm_m = crate::linops::operator_norm(m, tol, max_iter)?.value;
    let norm_l = crate::linops::operator_norm(&spec.forward, tol, max_iter)?.value;
    let ml = m.compose(&spec.forward)?;
    let norm_ml = crate::linops::operator_norm(&ml, tol, max_iter)?.value;
    Ok(lipschitz_bounds(
        spec.alpha,
        spec.lipschitz.zeta,
        norm_ml,
        norm_m,
        norm_l,
    ))
}

/// The mismatch-corrected monotonicity margin
/// `ρ̂ = ρ + α·λ_min − ζ̃_{L*−K}`. Nonnegativity is the caller's concern.
///
/// A variant condition replaces `ζ̃_{L*−K}` with `ζ̃_K` (the Lipschitz bound
/// of `KBL` itself); since `K` approximates `L*`, the difference-based bound
/// is expected to be the smaller of the two, and it is the only one exposed
/// here.
pub fn rho_hat(rho: f64, alpha: f64, lambda_min: f64, zeta_tilde_mismatch: f64) -> f64 {
    rho + alpha * lambda_min - zeta_tilde_mismatch
}

/// Outcome of a sampled ρ-monotonicity check.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicityReport {
    /// Minimum of `⟨x−y, u−v⟩ − ρ‖x−y‖²` over the sampled graph pairs.
    pub min_slack: f64,
    pub pairs: usize,
}

/// A pair of graph points `((x, u), (y, v))` of a candidate operator.
pub type GraphPair = ((Array1<f64>, Array1<f64>), (Array1<f64>, Array1<f64>));

/// Evaluates the ρ-monotonicity slack on graph pairs `((x,u), (y,v))`.
pub fn check_rho_monotone(
    pairs: &[GraphPair],
    rho: f64,
) -> Result<MonotonicityReport, OperatorError> {
    if pairs.is_empty() {
        return Err(OperatorError::EmptySample);
    }
    let mut min_slack = f64::INFINITY;
    for ((x, u), (y, v)) in pairs {
        let dx = x - y;
        let du = u - v;
        let slack = dx.dot(&du) - rho * dx.dot(&dx);
        min_slack = min_slack.min(slack);
    }
    Ok(MonotonicityReport {
        min_slack,
        pairs: pairs.len(),
    })
}

/// Distance bound from a solution `z` of the mismatched inclusion to the
/// unique solution of the matched one:
/// `(ρ + αλ_min)⁻¹ ‖L*−K‖ ‖α(Lz−c) + BLz‖`. Requires `ρ + αλ_min > 0`.
pub fn solution_gap_bound(
    z: &Array1<f64>,
    spec: &ProblemSpec,
    estimates: &SpectralEstimates,
) -> Result<f64, OperatorError> {
    let margin = spec.monotone.rho + spec.alpha * estimates.lambda_min;
    if margin <= 0.0 {
        return Err(OperatorError::GapBoundInapplicable(margin));
    }
    let residual = spec.forward_residual(z)?;
    Ok(estimates.norm_mismatch * residual.dot(&residual).sqrt() / margin)
}

/// Sampled cocoercivity slack `⟨x−y, Cx−Cy⟩ − β‖Cx−Cy‖²`; minimum over
/// `n` seeded Gaussian pairs of the given dimension and scale.
pub fn sample_cocoercivity(
    block: &CocoerciveBlock,
    dim: usize,
    n: usize,
    scale: f64,
    seed: u64,
) -> f64 {
    let mut min_slack = f64::INFINITY;
    for t in 0..n {
        let x = crate::linops::random_vector(dim, seed ^ (2 * t as u64)) * scale;
        let y = crate::linops::random_vector(dim, seed ^ (2 * t as u64 + 1)) * scale;
        let cx = block.eval(&x);
        let cy = block.eval(&y);
        let dc = &cx - &cy;
        let slack = (&x - &y).dot(&dc) - block.beta * dc.dot(&dc);
        min_slack = min_slack.min(slack);
    }
    min_slack
}

/// Sampled Lipschitz/monotonicity check for a [`LipschitzBlock`]:
/// returns (max slope, min monotonicity inner product).
pub fn sample_lipschitz(
    block: &LipschitzBlock,
    dim: usize,
    n: usize,
    scale: f64,
    seed: u64,
) -> (f64, f64) {
    let mut max_slope = 0.0f64;
    let mut min_mono = f64::INFINITY;
    for t in 0..n {
        let x = crate::linops::random_vector(dim, seed ^ (2 * t as u64)) * scale;
        let y = crate::linops::random_vector(dim, seed ^ (2 * t as u64 + 1)) * scale;
        let bx = block.eval(&x);
        let by = block.eval(&y);
        let db = &bx - &by;
        let dx = &x - &y;
        let nx = dx.dot(&dx).sqrt();
        if nx > 1e-300 {
            max_slope = max_slope.max(db.dot(&db).sqrt() / nx);
        }
        min_mono = min_mono.min(dx.dot(&db));
    }
    (max_slope, min_mono)
}
