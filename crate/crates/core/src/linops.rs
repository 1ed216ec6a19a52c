//! Matrix-free linear operators, mismatch families, and spectral estimates.
//!
//! Everything downstream (step sizes, error bounds, the solvers themselves)
//! is driven by a handful of scalar quantities of the linear part of the
//! problem: `‖L‖`, `‖L* − K‖`, and the smallest eigenvalue of the symmetric
//! part of `KL`. This module provides the operator abstraction and the
//! estimators for those quantities.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Fixed seed for power-iteration start vectors; estimation must be
/// reproducible without threading a seed through every call site.
const POWER_ITERATION_SEED: u64 = 0x5eed_0001;

/// Dimension threshold below which the smallest eigenvalue is computed by a
/// dense symmetric eigensolve; above it a shifted power iteration is used.
const DENSE_EIGEN_LIMIT: usize = 4096;

#[derive(Debug, Error)]
pub enum LinopsError {
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("operator has no adjoint but the operation requires one")]
    MissingAdjoint,
    #[error("incompatible shapes: {0}")]
    ShapeError(String),
    #[error(
        "power iteration did not converge within {max_iter} iterations \
         (best estimate {estimate:.6e}, last change {last_change:.3e})"
    )]
    NoConvergence {
        max_iter: usize,
        estimate: f64,
        last_change: f64,
    },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("geometric schedule requires eta_bar in [0, 1), got {0}")]
    BadDecayFactor(f64),
    #[error("omega0 must be nonnegative, got {0}")]
    NegativeOmega(f64),
}

type ApplyFn = Arc<dyn Fn(&Array1<f64>) -> Array1<f64> + Send + Sync>;

/// A matrix-free linear operator with known dimensions and an optional
/// adjoint. Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct LinearMap {
    in_dim: usize,
    out_dim: usize,
    forward: ApplyFn,
    adjoint: Option<ApplyFn>,
}

impl std::fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearMap")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("has_adjoint", &self.adjoint.is_some())
            .finish()
    }
}

impl LinearMap {
    /// Wraps a forward closure. The closure must be linear; this is a caller
    /// contract, spot-checked by tests rather than enforced.
    pub fn new<F>(in_dim: usize, out_dim: usize, forward: F) -> Self
    where
        F: Fn(&Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
    {
        Self {
            in_dim,
            out_dim,
            forward: Arc::new(forward),
            adjoint: None,
        }
    }

    /// Wraps a forward/adjoint closure pair.
    pub fn with_adjoint<F, G>(in_dim: usize, out_dim: usize, forward: F, adjoint: G) -> Self
    where
        F: Fn(&Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
        G: Fn(&Array1<f64>) -> Array1<f64> + Send + Sync + 'static,
    {
        Self {
            in_dim,
            out_dim,
            forward: Arc::new(forward),
            adjoint: Some(Arc::new(adjoint)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::with_adjoint(dim, dim, |x| x.clone(), |y| y.clone())
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        Self::with_adjoint(
            in_dim,
            out_dim,
            move |_| Array1::zeros(out_dim),
            move |_| Array1::zeros(in_dim),
        )
    }

    /// Materialized matrix as an operator; the adjoint is the exact transpose.
    pub fn from_dense(matrix: &Array2<f64>) -> Self {
        let (out_dim, in_dim) = matrix.dim();
        let m = Arc::new(matrix.clone());
        let mt = Arc::new(matrix.t().to_owned());
        Self::with_adjoint(
            in_dim,
            out_dim,
            move |x| m.dot(x),
            move |y| mt.dot(y),
        )
    }

    /// Sparse operator from COO triplets `(row, col, value)`; both the
    /// forward and adjoint applications run over compressed rows built once.
    pub fn from_triplets(
        out_dim: usize,
        in_dim: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, LinopsError> {
        for &(r, c, _) in triplets {
            if r >= out_dim || c >= in_dim {
                return Err(LinopsError::ShapeError(format!(
                    "triplet ({r}, {c}) outside {out_dim}x{in_dim}"
                )));
            }
        }
        let fwd = Arc::new(CompressedRows::from_triplets(out_dim, in_dim, triplets, false));
        let adj = Arc::new(CompressedRows::from_triplets(in_dim, out_dim, triplets, true));
        let fwd2 = Arc::clone(&fwd);
        let adj2 = Arc::clone(&adj);
        Ok(Self::with_adjoint(
            in_dim,
            out_dim,
            move |x| fwd2.apply(x),
            move |y| adj2.apply(y),
        ))
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn has_adjoint(&self) -> bool {
        self.adjoint.is_some()
    }

    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>, LinopsError> {
        if x.len() != self.in_dim {
            return Err(LinopsError::DimensionMismatch {
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok((self.forward)(x))
    }

    pub fn apply_adjoint(&self, y: &Array1<f64>) -> Result<Array1<f64>, LinopsError> {
        let adj = self.adjoint.as_ref().ok_or(LinopsError::MissingAdjoint)?;
        if y.len() != self.out_dim {
            return Err(LinopsError::DimensionMismatch {
                expected: self.out_dim,
                actual: y.len(),
            });
        }
        Ok(adj(y))
    }

    /// The adjoint as a standalone operator (forward and adjoint swapped).
    pub fn adjoint_map(&self) -> Result<Self, LinopsError> {
        let adj = self.adjoint.as_ref().ok_or(LinopsError::MissingAdjoint)?;
        Ok(Self {
            in_dim: self.out_dim,
            out_dim: self.in_dim,
            forward: Arc::clone(adj),
            adjoint: Some(Arc::clone(&self.forward)),
        })
    }

    /// Composition `self ∘ inner` (apply `inner` first).
    pub fn compose(&self, inner: &Self) -> Result<Self, LinopsError> {
        if inner.out_dim != self.in_dim {
            return Err(LinopsError::ShapeError(format!(
                "cannot compose {}x{} with {}x{}",
                self.out_dim, self.in_dim, inner.out_dim, inner.in_dim
            )));
        }
        let of = Arc::clone(&self.forward);
        let inf = Arc::clone(&inner.forward);
        let adjoint = match (&self.adjoint, &inner.adjoint) {
            (Some(oa), Some(ia)) => {
                let oa = Arc::clone(oa);
                let ia = Arc::clone(ia);
                Some(Arc::new(move |y: &Array1<f64>| ia(&oa(y))) as ApplyFn)
            }
            _ => None,
        };
        Ok(Self {
            in_dim: inner.in_dim,
            out_dim: self.out_dim,
            forward: Arc::new(move |x| of(&inf(x))),
            adjoint,
        })
    }

    /// Pointwise difference `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self, LinopsError> {
        if self.in_dim != other.in_dim || self.out_dim != other.out_dim {
            return Err(LinopsError::ShapeError(format!(
                "cannot subtract {}x{} from {}x{}",
                other.out_dim, other.in_dim, self.out_dim, self.in_dim
            )));
        }
        let f1 = Arc::clone(&self.forward);
        let f2 = Arc::clone(&other.forward);
        let adjoint = match (&self.adjoint, &other.adjoint) {
            (Some(a1), Some(a2)) => {
                let a1 = Arc::clone(a1);
                let a2 = Arc::clone(a2);
                Some(Arc::new(move |y: &Array1<f64>| a1(y) - a2(y)) as ApplyFn)
            }
            _ => None,
        };
        Ok(Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            forward: Arc::new(move |x| f1(x) - f2(x)),
            adjoint,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let f = Arc::clone(&self.forward);
        let adjoint = self.adjoint.as_ref().map(|a| {
            let a = Arc::clone(a);
            Arc::new(move |y: &Array1<f64>| a(y) * factor) as ApplyFn
        });
        Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            forward: Arc::new(move |x| f(x) * factor),
            adjoint,
        }
    }

    /// Materializes the operator column by column. Desk-scale only.
    pub fn to_dense(&self) -> Result<Array2<f64>, LinopsError> {
        let mut out = Array2::zeros((self.out_dim, self.in_dim));
        let mut basis = Array1::zeros(self.in_dim);
        for j in 0..self.in_dim {
            basis[j] = 1.0;
            let col = self.apply(&basis)?;
            out.column_mut(j).assign(&col);
            basis[j] = 0.0;
        }
        Ok(out)
    }
}

/// Row-compressed storage shared by the forward and transposed applications
/// of [`LinearMap::from_triplets`].
struct CompressedRows {
    in_dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CompressedRows {
    fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
        transpose: bool,
    ) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            let row = if transpose { c } else { r };
            counts[row + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut cursor = counts;
        let nnz = triplets.len();
        let mut out_cols = vec![0usize; nnz];
        let mut out_vals = vec![0f64; nnz];
        for &(r, c, v) in triplets {
            let (row, col) = if transpose { (c, r) } else { (r, c) };
            let slot = cursor[row];
            out_cols[slot] = col;
            out_vals[slot] = v;
            cursor[row] += 1;
        }
        Self {
            in_dim: cols,
            row_ptr,
            cols: out_cols,
            vals: out_vals,
        }
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let rows = self.row_ptr.len() - 1;
        let mut out = Array1::zeros(rows);
        for r in 0..rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[r] = acc;
        }
        out
    }
}

/// Spectral quantities feeding the step-size rules. `lambda_min` is the
/// smallest eigenvalue of the symmetric part of `KL` and may be negative.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SpectralEstimates {
    pub norm_l: f64,
    /// Operator norm of `L* − K`.
    pub norm_mismatch: f64,
    pub lambda_min: f64,
    pub tol: f64,
    pub iters_used: usize,
}

/// Result of a norm estimation run.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub iters: usize,
}

fn seeded_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-300 {
            return v / norm;
        }
    }
}

/// Seeded standard-normal vector; shared by tests and perturbation builders.
pub fn random_vector(dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Spectral norm via power iteration on `M*M`.
///
/// Requires the adjoint. Converges to the leading singular value when it is
/// well separated; the returned estimate satisfies `|σ − ‖M‖| ≤ tol` in that
/// regime. Non-convergence reports the best estimate in the error.
pub fn operator_norm(
    map: &LinearMap,
    tol: f64,
    max_iter: usize,
) -> Result<NormEstimate, LinopsError> {
    if tol <= 0.0 {
        return Err(LinopsError::BadTolerance(tol));
    }
    if !map.has_adjoint() {
        return Err(LinopsError::MissingAdjoint);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v = seeded_unit_vector(map.in_dim(), &mut rng);
    let mut sigma = 0.0f64;
    let mut last_change = f64::INFINITY;
    for iter in 1..=max_iter {
        let w = map.apply(&v)?;
        let u = map.apply_adjoint(&w)?;
        let gain = u.dot(&u).sqrt();
        if gain <= 1e-300 {
            // v is (numerically) in the kernel of M*M; for a nonzero map a
            // random restart resolves it, for the zero map the norm is 0.
            let restart = seeded_unit_vector(map.in_dim(), &mut rng);
            let w2 = map.apply(&restart)?;
            let n2 = w2.dot(&w2).sqrt();
            if n2 <= 1e-300 {
                return Ok(NormEstimate {
                    value: 0.0,
                    iters: iter,
                });
            }
            v = restart;
            continue;
        }
        // Rayleigh quotient of M*M at unit v is ‖Mv‖².
        let next_sigma = w.dot(&w).sqrt();
        last_change = (next_sigma - sigma).abs();
        sigma = next_sigma;
        v = u / gain;
        if iter > 1 && last_change <= tol * sigma.max(1.0) {
            return Ok(NormEstimate {
                value: sigma,
                iters: iter,
            });
        }
    }
    Err(LinopsError::NoConvergence {
        max_iter,
        estimate: sigma,
        last_change,
    })
}

/// Smallest eigenvalue of `(KL + (KL)*)/2`.
///
/// Both maps must expose adjoints so the symmetrization can be applied
/// matrix-free. Up to dimension `DENSE_EIGEN_LIMIT` (4096) the symmetrized
/// operator is materialized and solved densely; above it a shifted power
/// iteration runs.
pub fn lambda_min_estimate(
    k: &LinearMap,
    l: &LinearMap,
    tol: f64,
) -> Result<f64, LinopsError> {
    if tol <= 0.0 {
        return Err(LinopsError::BadTolerance(tol));
    }
    if k.out_dim() != l.in_dim() {
        return Err(LinopsError::ShapeError(format!(
            "K∘L is {}x{}, not square",
            k.out_dim(),
            l.in_dim()
        )));
    }
    if k.in_dim() != l.out_dim() {
        return Err(LinopsError::ShapeError(format!(
            "cannot compose K ({}x{}) with L ({}x{})",
            k.out_dim(),
            k.in_dim(),
            l.out_dim(),
            l.in_dim()
        )));
    }
    if !k.has_adjoint() || !l.has_adjoint() {
        return Err(LinopsError::MissingAdjoint);
    }
    let dim = l.in_dim();
    if dim <= DENSE_EIGEN_LIMIT {
        lambda_min_dense(k, l)
    } else {
        lambda_min_shifted_power(k, l, tol, 10 * 10_000)
    }
}

fn symmetrized_apply(
    k: &LinearMap,
    l: &LinearMap,
    x: &Array1<f64>,
) -> Result<Array1<f64>, LinopsError> {
    let kl = k.apply(&l.apply(x)?)?;
    let ltkt = l.apply_adjoint(&k.apply_adjoint(x)?)?;
    Ok((kl + ltkt) * 0.5)
}

fn lambda_min_dense(k: &LinearMap, l: &LinearMap) -> Result<f64, LinopsError> {
    let dim = l.in_dim();
    let composed = k.compose(l)?;
    let dense = composed.to_dense()?;
    let mut sym = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            sym[(i, j)] = 0.5 * (dense[(i, j)] + dense[(j, i)]);
        }
    }
    let eigen = sym.symmetric_eigen();
    Ok(eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Shifted power iteration: first bound the spectrum of the symmetrized
/// operator S by σ = ‖S‖, then extract the dominant eigenvalue of σ·Id − S,
/// which is σ − λ_min.
fn lambda_min_shifted_power(
    k: &LinearMap,
    l: &LinearMap,
    tol: f64,
    max_iter: usize,
) -> Result<f64, LinopsError> {
    let dim = l.in_dim();
    let kc = k.clone();
    let lc = l.clone();
    let sym = LinearMap::with_adjoint(
        dim,
        dim,
        {
            let kc = kc.clone();
            let lc = lc.clone();
            move |x| symmetrized_apply(&kc, &lc, x).expect("dimensions checked")
        },
        move |x| symmetrized_apply(&kc, &lc, x).expect("dimensions checked"),
    );
    let sigma = operator_norm(&sym, tol, max_iter)?.value;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED ^ 0x5a5a);
    let mut v = seeded_unit_vector(dim, &mut rng);
    let mut mu = 0.0f64;
    let mut last_change = f64::INFINITY;
    for iter in 1..=max_iter {
        // Apply σ·Id − S.
        let sv = sym.apply(&v)?;
        let w = &v * sigma - sv;
        let norm = w.dot(&w).sqrt();
        if norm <= 1e-300 {
            // σ·Id − S annihilates v: λ_min = ... every eigenvalue equals σ.
            return Ok(sigma);
        }
        let next_mu = v.dot(&w);
        last_change = (next_mu - mu).abs();
        mu = next_mu;
        v = w / norm;
        if iter > 1 && last_change <= tol * mu.abs().max(1.0) {
            return Ok(sigma - mu);
        }
    }
    Err(LinopsError::NoConvergence {
        max_iter,
        estimate: sigma - mu,
        last_change,
    })
}

/// Spectral quantities of a forward/surrogate-adjoint pair, measured in one
/// sweep. Every downstream constant derives from these five numbers.
#[derive(Debug, Clone, Copy)]
pub struct MismatchSpectra {
    pub norm_l: f64,
    pub norm_k: f64,
    pub norm_kl: f64,
    /// `‖L* − K‖`.
    pub norm_mismatch: f64,
    pub lambda_min: f64,
    pub tol: f64,
    pub iters_used: usize,
}

impl MismatchSpectra {
    pub fn estimates(&self) -> SpectralEstimates {
        SpectralEstimates {
            norm_l: self.norm_l,
            norm_mismatch: self.norm_mismatch,
            lambda_min: self.lambda_min,
            tol: self.tol,
            iters_used: self.iters_used,
        }
    }
}

/// Measures `‖L‖`, `‖K‖`, `‖K∘L‖`, `‖L* − K‖` by power iteration and the
/// smallest eigenvalue of the symmetric part of `KL`.
pub fn measure_mismatch_spectra(
    l: &LinearMap,
    k: &LinearMap,
    tol: f64,
    max_iter: usize,
) -> Result<MismatchSpectra, LinopsError> {
    let norm_l = operator_norm(l, tol, max_iter)?;
    let norm_k = operator_norm(k, tol, max_iter)?;
    let kl = k.compose(l)?;
    let norm_kl = operator_norm(&kl, tol, max_iter)?;
    let diff = l.adjoint_map()?.sub(k)?;
    let norm_mismatch = operator_norm(&diff, tol, max_iter)?;
    let lambda_min = lambda_min_estimate(k, l, tol)?;
    Ok(MismatchSpectra {
        norm_l: norm_l.value,
        norm_k: norm_k.value,
        norm_kl: norm_kl.value,
        norm_mismatch: norm_mismatch.value,
        lambda_min,
        tol,
        iters_used: norm_l.iters + norm_k.iters + norm_kl.iters + norm_mismatch.iters,
    })
}

/// How the per-iteration perturbation budget `ω_n` decays.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MismatchSchedule {
    /// `K_n = K` for every n (`ω_n = 0`).
    Constant,
    /// `ω_n = ω₀ · η̄ⁿ` with `η̄ ∈ [0, 1)`.
    Geometric { omega0: f64, eta_bar: f64 },
    /// Caller-supplied summable budget, evaluated per iteration index.
    SummableCustom,
}

type OmegaFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Surrogate adjoint `K` together with iteration-indexed perturbations
/// `K_n = K + ω_n·E_n`, where every `E_n` is a seeded rank-one operator of
/// unit norm. The bound `‖K_n − K‖ ≤ ω_n` therefore holds by construction.
#[derive(Clone)]
pub struct MismatchFamily {
    base: LinearMap,
    schedule: MismatchSchedule,
    omega: OmegaFn,
    seed: u64,
}

impl std::fmt::Debug for MismatchFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MismatchFamily")
            .field("schedule", &self.schedule)
            .field("base", &self.base)
            .finish()
    }
}

impl MismatchFamily {
    /// `K_n = K` with zero budget.
    pub fn constant(base: LinearMap) -> Self {
        Self {
            base,
            schedule: MismatchSchedule::Constant,
            omega: Arc::new(|_| 0.0),
            seed: 0,
        }
    }

    /// Geometric budget `ω_n = ω₀·η̄ⁿ`.
    pub fn geometric(
        base: LinearMap,
        omega0: f64,
        eta_bar: f64,
        seed: u64,
    ) -> Result<Self, LinopsError> {
        if omega0 < 0.0 {
            return Err(LinopsError::NegativeOmega(omega0));
        }
        if !(0.0..1.0).contains(&eta_bar) {
            return Err(LinopsError::BadDecayFactor(eta_bar));
        }
        Ok(Self {
            base,
            schedule: MismatchSchedule::Geometric { omega0, eta_bar },
            omega: Arc::new(move |n| omega0 * eta_bar.powi(n as i32)),
            seed,
        })
    }

    /// Caller-supplied budget; the caller is responsible for summability.
    pub fn custom<F>(base: LinearMap, omega: F, seed: u64) -> Self
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        Self {
            base,
            schedule: MismatchSchedule::SummableCustom,
            omega: Arc::new(omega),
            seed,
        }
    }

    /// Dispatch on a schedule tag, mirroring the constructors above.
    pub fn from_schedule(
        base: LinearMap,
        kind: MismatchSchedule,
        seed: u64,
    ) -> Result<Self, LinopsError> {
        match kind {
            MismatchSchedule::Constant => Ok(Self::constant(base)),
            MismatchSchedule::Geometric { omega0, eta_bar } => {
                Self::geometric(base, omega0, eta_bar, seed)
            }
            MismatchSchedule::SummableCustom => Err(LinopsError::ShapeError(
                "custom schedules need MismatchFamily::custom with a closure".into(),
            )),
        }
    }

    pub fn base(&self) -> &LinearMap {
        &self.base
    }

    pub fn schedule(&self) -> &MismatchSchedule {
        &self.schedule
    }

    pub fn omega(&self, n: usize) -> f64 {
        (self.omega)(n)
    }

    /// The perturbed operator `K_n`. For `ω_n = 0` this is `K` itself.
    pub fn operator(&self, n: usize) -> LinearMap {
        let omega_n = self.omega(n);
        if omega_n == 0.0 {
            return self.base.clone();
        }
        let (u, v) = self.perturbation_directions(n);
        let base = self.base.clone();
        let uf = u.clone();
        let vf = v.clone();
        let forward = move |x: &Array1<f64>| {
            let mut out = base.apply(x).expect("dimension checked by caller");
            out.scaled_add(omega_n * vf.dot(x), &uf);
            out
        };
        if self.base.has_adjoint() {
            let base_adj = self.base.clone();
            let adjoint = move |y: &Array1<f64>| {
                let mut out = base_adj
                    .apply_adjoint(y)
                    .expect("dimension checked by caller");
                out.scaled_add(omega_n * u.dot(y), &v);
                out
            };
            LinearMap::with_adjoint(self.base.in_dim(), self.base.out_dim(), forward, adjoint)
        } else {
            LinearMap::new(self.base.in_dim(), self.base.out_dim(), forward)
        }
    }

    /// Unit vectors (u, v) of the rank-one direction `E_n = u vᵀ`, seeded by
    /// (family seed, n) through independent ChaCha streams.
    fn perturbation_directions(&self, n: usize) -> (Array1<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(n as u64 + 1);
        let u = seeded_unit_vector(self.base.out_dim(), &mut rng);
        let v = seeded_unit_vector(self.base.in_dim(), &mut rng);
        (u, v)
    }
}
