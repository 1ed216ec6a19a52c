//! Dense quadratic-plus-box instances with controllable adjoint mismatch.
//!
//! These small problems have every operator available as an explicit matrix,
//! which makes machine-precision reference solutions computable by a plain
//! proximal fixed-point iteration. They back the validation suite and the
//! CLI's synthetic problem kind.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linops::{
    measure_mismatch_spectra, LinearMap, LinopsError, MismatchFamily, MismatchSchedule,
    SpectralEstimates,
};
use crate::operators::{CocoerciveBlock, LipschitzBlock, OperatorError, ProblemSpec};
use crate::proxlib::box_ridge_block;
use crate::stepsize::{ConstantsLedger, RhoPolicy, StepSizeError};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Linops(#[from] LinopsError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    StepSize(#[from] StepSizeError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("reference iteration did not reach machine precision in {0} iterations")]
    ReferenceNotConverged(usize),
}

/// Construction parameters for a quadratic instance.
#[derive(Debug, Clone)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub data_dim: usize,
    pub seed: u64,
    pub alpha: f64,
    /// `‖L* − K‖`: the surrogate adjoint is `K = L* + strength·E` with a
    /// dense unit-norm direction `E`.
    pub mismatch_strength: f64,
    /// ζ of the monotone linear data-space block; 0 disables it.
    pub b_scale: f64,
    /// Largest eigenvalue of the SPD cocoercive block (β is its inverse).
    pub c_scale: f64,
    pub x_max: f64,
    pub rho_policy: RhoPolicy,
    pub schedule: MismatchSchedule,
    pub safety_fbhf: f64,
    pub safety_fdrf: f64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            data_dim: 24,
            seed: 1,
            alpha: 0.5,
            mismatch_strength: 0.05,
            b_scale: 0.3,
            c_scale: 1.0,
            x_max: 10.0,
            rho_policy: RhoPolicy::Recipe { margin: 0.1 },
            schedule: MismatchSchedule::Constant,
            safety_fbhf: 0.9975,
            safety_fdrf: 0.999,
        }
    }
}

/// A fully assembled instance together with the dense matrices needed for
/// independent reference computations.
#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    pub spec: ProblemSpec,
    pub ledger: ConstantsLedger,
    pub estimates: SpectralEstimates,
    pub l_mat: Array2<f64>,
    pub k_mat: Array2<f64>,
    /// SPD matrix of the cocoercive block.
    pub c_mat: Array2<f64>,
    /// Monotone data-space matrix (zero when disabled).
    pub b_mat: Array2<f64>,
    pub offset: Array1<f64>,
    pub x_max: f64,
    pub rho: f64,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (r, c) = m.dim();
    nalgebra::DMatrix::from_fn(r, c, |i, j| m[(i, j)])
        .svd(false, false)
        .singular_values
        .max()
}

fn sym_eig_bounds(m: &Array2<f64>) -> (f64, f64) {
    let n = m.nrows();
    let sym = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let ev = sym.symmetric_eigen().eigenvalues;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in ev.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Dense building blocks of an instance; the assembly below measures their
/// spectra and wires them into a `ProblemSpec` plus ledger.
#[derive(Debug, Clone)]
pub struct DenseParts {
    pub l_mat: Array2<f64>,
    pub k_mat: Array2<f64>,
    /// SPD matrix of the cocoercive block.
    pub c_mat: Array2<f64>,
    /// Monotone data-space matrix (all zeros disables the block).
    pub b_mat: Array2<f64>,
    pub offset: Array1<f64>,
    pub alpha: f64,
    pub x_max: f64,
    pub rho_policy: RhoPolicy,
    pub schedule: MismatchSchedule,
    pub schedule_seed: u64,
    pub safety_fbhf: f64,
    pub safety_fdrf: f64,
}

/// Builds the instance, measures its spectra, applies the ρ policy, and
/// assembles the constants ledger.
pub fn build_quadratic(config: &QuadraticConfig) -> Result<QuadraticInstance, SyntheticError> {
    if config.dim == 0 || config.data_dim == 0 {
        return Err(SyntheticError::BadConfig("dimensions must be positive".into()));
    }
    if config.mismatch_strength < 0.0 || config.b_scale < 0.0 || config.c_scale <= 0.0 {
        return Err(SyntheticError::BadConfig(
            "scales must be nonnegative (c_scale positive)".into(),
        ));
    }
    let n = config.dim;
    let m = config.data_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut l_mat = gaussian_matrix(m, n, &mut rng);
    l_mat /= spectral_norm(&l_mat);

    let k_mat = if config.mismatch_strength > 0.0 {
        let mut dir = gaussian_matrix(n, m, &mut rng);
        dir /= spectral_norm(&dir);
        l_mat.t().to_owned() + &dir * config.mismatch_strength
    } else {
        l_mat.t().to_owned()
    };

    // SPD cocoercive block with known top eigenvalue.
    let g = gaussian_matrix(n, n, &mut rng);
    let mut c_mat = g.t().dot(&g);
    let (_, top) = sym_eig_bounds(&c_mat);
    c_mat *= config.c_scale / top;

    // Monotone data-space block: PSD symmetric part plus a skew part,
    // rescaled so that ζ equals b_scale exactly.
    let b_mat = if config.b_scale > 0.0 {
        let h = gaussian_matrix(m, m, &mut rng);
        let psd = h.t().dot(&h);
        let r = gaussian_matrix(m, m, &mut rng);
        let skew = (&r - &r.t().to_owned()) * 0.5;
        let raw = &psd / spectral_norm(&psd) + &skew / spectral_norm(&skew);
        let scale = config.b_scale / spectral_norm(&raw);
        raw * scale
    } else {
        Array2::zeros((m, m))
    };

    // Data consistent with an interior point of the box, plus mild noise.
    let x_dagger = Array1::from_shape_fn(n, |_| {
        let u: f64 = StandardNormal.sample(&mut rng);
        (0.5 + 0.15 * u).clamp(0.05, 0.95) * config.x_max
    });
    let noise: Array1<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let offset = l_mat.dot(&x_dagger) + noise * (0.01 * config.x_max);

    assemble_dense_instance(DenseParts {
        l_mat,
        k_mat,
        c_mat,
        b_mat,
        offset,
        alpha: config.alpha,
        x_max: config.x_max,
        rho_policy: config.rho_policy,
        schedule: config.schedule.clone(),
        schedule_seed: config.seed ^ 0xf00d,
        safety_fbhf: config.safety_fbhf,
        safety_fdrf: config.safety_fdrf,
    })
}

/// Measures spectra of explicit dense blocks and assembles the instance.
/// β is derived from the top eigenvalue of the SPD block and ζ from the
/// spectral norm of the data-space block.
pub fn assemble_dense_instance(parts: DenseParts) -> Result<QuadraticInstance, SyntheticError> {
    let n = parts.l_mat.ncols();
    let m = parts.l_mat.nrows();
    if parts.k_mat.dim() != (n, m) {
        return Err(SyntheticError::BadConfig(format!(
            "surrogate adjoint must be {n}x{m}, got {:?}",
            parts.k_mat.dim()
        )));
    }
    if parts.c_mat.dim() != (n, n) || parts.b_mat.dim() != (m, m) || parts.offset.len() != m {
        return Err(SyntheticError::BadConfig(
            "block dimensions inconsistent with the forward operator".into(),
        ));
    }
    let (c_lo, c_hi) = sym_eig_bounds(&parts.c_mat);
    if c_lo < -1e-10 || c_hi <= 0.0 {
        return Err(SyntheticError::BadConfig(format!(
            "cocoercive block must be SPD (eigenvalue range [{c_lo}, {c_hi}])"
        )));
    }
    let beta = 1.0 / c_hi;
    let zeta = spectral_norm(&parts.b_mat);
    let (b_lo, _) = sym_eig_bounds(&parts.b_mat);
    if b_lo < -1e-10 {
        return Err(SyntheticError::BadConfig(format!(
            "data-space block is not monotone (sym eigenvalue {b_lo})"
        )));
    }

    let l_map = LinearMap::from_dense(&parts.l_mat);
    let k_map = LinearMap::from_dense(&parts.k_mat);
    let spectra = measure_mismatch_spectra(&l_map, &k_map, 1e-10, 200_000)?;
    let zeta_tilde = zeta * spectra.norm_mismatch * spectra.norm_l;
    let rho = parts
        .rho_policy
        .rho(parts.alpha, spectra.lambda_min, zeta_tilde);

    let kappa_k = parts.alpha * spectra.norm_kl + zeta * spectra.norm_k * spectra.norm_l;
    let ledger = ConstantsLedger::assemble(
        &crate::stepsize::LedgerInputs {
            alpha: parts.alpha,
            beta,
            zeta,
            rho,
            lambda_min: spectra.lambda_min,
            norm_l: spectra.norm_l,
            norm_mismatch: spectra.norm_mismatch,
            kappa_k,
        },
        parts.safety_fbhf,
        parts.safety_fdrf,
    )?;

    let c_for_eval = parts.c_mat.clone();
    let c_for_res = nalgebra::DMatrix::from_fn(n, n, |i, j| parts.c_mat[(i, j)]);
    let cocoercive = CocoerciveBlock::with_resolvent(
        beta,
        move |x| c_for_eval.dot(x),
        move |gamma, y| {
            let mut a = c_for_res.clone() * gamma;
            for i in 0..a.nrows() {
                a[(i, i)] += 1.0;
            }
            let rhs = nalgebra::DVector::from_iterator(y.len(), y.iter().copied());
            let sol = a.lu().solve(&rhs).expect("I + gamma*C is invertible");
            Array1::from_iter(sol.iter().copied())
        },
    );
    let b_for_eval = parts.b_mat.clone();
    let lipschitz = if zeta > 0.0 {
        LipschitzBlock::new(zeta, move |y| b_for_eval.dot(y))
    } else {
        LipschitzBlock::zero()
    };

    let mismatch = MismatchFamily::from_schedule(k_map, parts.schedule, parts.schedule_seed)?;
    let spec = ProblemSpec {
        monotone: box_ridge_block(parts.x_max, rho),
        cocoercive,
        lipschitz,
        forward: l_map,
        mismatch,
        offset: parts.offset.clone(),
        alpha: parts.alpha,
    };
    spec.validate()?;

    Ok(QuadraticInstance {
        spec,
        ledger,
        estimates: spectra.estimates(),
        l_mat: parts.l_mat,
        k_mat: parts.k_mat,
        c_mat: parts.c_mat,
        b_mat: parts.b_mat,
        offset: parts.offset,
        x_max: parts.x_max,
        rho,
    })
}

impl QuadraticInstance {
    /// Dense smooth part `F(x) = Cx + α·M̃(Lx − c) + M̃ B L x` with
    /// `M̃ = L*` (matched) or `K` (mismatched), as (matrix, constant).
    fn smooth_part(&self, matched: bool) -> (Array2<f64>, Array1<f64>) {
        let m_tilde = if matched {
            self.l_mat.t().to_owned()
        } else {
            self.k_mat.clone()
        };
        let ml = m_tilde.dot(&self.l_mat);
        let f_mat = &self.c_mat + &(&ml * self.spec.alpha) + &m_tilde.dot(&self.b_mat).dot(&self.l_mat);
        let f_const = m_tilde.dot(&self.offset) * (-self.spec.alpha);
        (f_mat, f_const)
    }

    /// Machine-precision solution by a damped proximal fixed-point
    /// iteration on the dense assembly, independent of the solver module.
    pub fn reference_solution(&self, matched: bool) -> Result<Array1<f64>, SyntheticError> {
        let (f_mat, f_const) = self.smooth_part(matched);
        let (sym_lo, _) = sym_eig_bounds(&f_mat);
        let lam = spectral_norm(&f_mat);
        let margin = self.rho + sym_lo;
        if margin <= 0.0 {
            return Err(SyntheticError::BadConfig(format!(
                "reference iteration needs rho + lambda_min(sym F) > 0, got {margin}"
            )));
        }
        let mut tau = margin / (lam + self.rho).powi(2);
        // Damp until the composite map is certifiably contractive.
        for _ in 0..80 {
            let q = (1.0 - 2.0 * tau * sym_lo + tau * tau * lam * lam)
                .max(0.0)
                .sqrt()
                / (1.0 + tau * self.rho);
            if q < 1.0 {
                break;
            }
            tau *= 0.5;
        }
        let shrink = 1.0 / (1.0 + tau * self.rho);
        let mut x = Array1::from_elem(self.l_mat.ncols(), 0.5 * self.x_max);
        let max_iter = 4_000_000usize;
        for it in 0..max_iter {
            let grad = f_mat.dot(&x) + &f_const;
            let next = (&x - &(grad * tau)).mapv(|v| (shrink * v).clamp(0.0, self.x_max));
            let diff = &next - &x;
            let delta = diff.dot(&diff).sqrt();
            x = next;
            if delta <= 1e-15 * x.dot(&x).sqrt().max(1.0) {
                return Ok(x);
            }
            if it == max_iter - 1 {
                break;
            }
        }
        Err(SyntheticError::ReferenceNotConverged(max_iter))
    }

    /// z-space fixed point of the Douglas-Rachford scheme through a known
    /// solution: `z* = x* + γ C x*`.
    pub fn fdrf_fixed_point(&self, gamma: f64, x_star: &Array1<f64>) -> Array1<f64> {
        x_star + &(self.c_mat.dot(x_star) * gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{sample_cocoercivity, sample_lipschitz};

    #[test]
    fn build_produces_consistent_ledger() {
        let inst = build_quadratic(&QuadraticConfig::default()).unwrap();
        assert!((inst.ledger.rho_hat - 0.1).abs() < 1e-9, "recipe forces rho_hat");
        assert!(inst.ledger.chi > 0.0);
        assert!(inst.ledger.gamma_fbhf < inst.ledger.chi);
        assert!(inst.ledger.norm_mismatch > 0.0);
        assert!((inst.ledger.norm_mismatch - 0.05).abs() < 1e-8);
        assert!(inst.ledger.theta_fbhf.is_some());
    }

    #[test]
    fn matched_config_has_zero_mismatch() {
        let config = QuadraticConfig {
            mismatch_strength: 0.0,
            ..QuadraticConfig::default()
        };
        let inst = build_quadratic(&config).unwrap();
        assert_eq!(inst.ledger.norm_mismatch, 0.0);
        assert!(inst.estimates.lambda_min >= -1e-10, "L*L is PSD");
    }

    #[test]
    fn blocks_satisfy_their_sampled_contracts() {
        let inst = build_quadratic(&QuadraticConfig::default()).unwrap();
        let coco = sample_cocoercivity(&inst.spec.cocoercive, inst.spec.dim(), 300, 2.0, 5);
        assert!(coco >= -1e-10, "cocoercivity slack {coco}");
        let (slope, mono) =
            sample_lipschitz(&inst.spec.lipschitz, inst.spec.data_dim(), 300, 2.0, 6);
        assert!(slope <= inst.spec.lipschitz.zeta + 1e-9);
        assert!(mono >= -1e-10);
    }

    #[test]
    fn c_resolvent_inverts_i_plus_gamma_c() {
        let inst = build_quadratic(&QuadraticConfig::default()).unwrap();
        let y = crate::linops::random_vector(inst.spec.dim(), 3);
        let gamma = 0.37;
        let x = inst.spec.cocoercive.resolvent(gamma, &y).unwrap();
        let back = &x + &(inst.c_mat.dot(&x) * gamma);
        let diff = &back - &y;
        assert!(diff.dot(&diff).sqrt() < 1e-10);
    }

    #[test]
    fn reference_solution_is_a_fixed_point() {
        let inst = build_quadratic(&QuadraticConfig::default()).unwrap();
        let x = inst.reference_solution(false).unwrap();
        // Verify stationarity through an independent small step.
        let (f_mat, f_const) = inst.smooth_part(false);
        let tau = 1e-3;
        let grad = f_mat.dot(&x) + &f_const;
        let next = (&x - &(grad * tau)).mapv(|v| (v / (1.0 + tau * inst.rho)).clamp(0.0, inst.x_max));
        let diff = &next - &x;
        assert!(diff.dot(&diff).sqrt() < 1e-10);
    }

    #[test]
    fn matched_and_mismatched_references_differ() {
        let inst = build_quadratic(&QuadraticConfig {
            mismatch_strength: 0.3,
            ..QuadraticConfig::default()
        })
        .unwrap();
        let xm = inst.reference_solution(true).unwrap();
        let xk = inst.reference_solution(false).unwrap();
        let diff = &xm - &xk;
        assert!(diff.dot(&diff).sqrt() > 1e-8);
    }
}
