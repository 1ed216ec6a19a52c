//! Closed-form proximal operators and gradients.
//!
//! Three pieces make up the tomography objective: a box-constrained ridge
//! term handled through its resolvent, a Huber penalty measured in an
//! orthonormal transform domain (gradient and prox both closed-form), and a
//! generalized Anscombe data fidelity for mixed Poisson-Gaussian noise,
//! which enters only through its gradient.

use ndarray::Array1;
use thiserror::Error;

use crate::linops::{LinearMap, LinopsError};

#[derive(Debug, Error)]
pub enum ProxError {
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("length {len} is not divisible by 2^{levels}")]
    BadLevelCount { len: usize, levels: usize },
    #[error("data entry c[{index}] = {value} below the admissible floor {floor}")]
    DataBelowFloor {
        index: usize,
        value: f64,
        floor: f64,
    },
    #[error("data vector is empty")]
    EmptyData,
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error(transparent)]
    Linops(#[from] LinopsError),
}

fn require_positive(name: &'static str, value: f64) -> Result<(), ProxError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ProxError::NonPositive { name, value })
    }
}

/// Box constraint `[0, x_max]` plus a ridge `(ρ/2)‖x‖²`; strongly convex
/// for `ρ > 0`. `ρ = 0` is accepted and degenerates to a plain projection.
#[derive(Debug, Clone)]
pub struct BoxRidge {
    pub x_max: f64,
    pub rho: f64,
}

impl BoxRidge {
    pub fn new(x_max: f64, rho: f64) -> Result<Self, ProxError> {
        require_positive("x_max", x_max)?;
        if rho < 0.0 || !rho.is_finite() {
            return Err(ProxError::NonPositive {
                name: "rho",
                value: rho,
            });
        }
        Ok(Self { x_max, rho })
    }
}

/// `prox_{γf}` for `f = ι_{[0,x_max]} + (ρ/2)‖·‖²`: shrink by `(γρ+1)⁻¹`,
/// then clamp to the box, componentwise.
pub fn prox_box_ridge(p: &BoxRidge, gamma: f64, x: &Array1<f64>) -> Array1<f64> {
    let shrink = 1.0 / (gamma * p.rho + 1.0);
    x.mapv(|xi| (shrink * xi).clamp(0.0, p.x_max))
}

/// The box+ridge resolvent as a solver block. Unlike [`BoxRidge`], negative
/// ρ is admitted here (the term is then only weakly convex); the resolvent
/// formula remains valid whenever `γρ > −1`, which the solvers enforce.
pub fn box_ridge_block(x_max: f64, rho: f64) -> crate::operators::ResolventBlock {
    crate::operators::ResolventBlock::new(rho, move |gamma, y| {
        let shrink = 1.0 / (gamma * rho + 1.0);
        y.mapv(|v| (shrink * v).clamp(0.0, x_max))
    })
}

/// Scalar Huber function `φ_δ`: quadratic inside `[−δ, δ]`, linear outside.
pub fn huber_value(delta: f64, eta: f64) -> f64 {
    if eta.abs() > delta {
        eta.abs() - delta / 2.0
    } else {
        eta * eta / (2.0 * delta)
    }
}

/// Derivative of the scalar Huber function.
pub fn huber_derivative(delta: f64, eta: f64) -> f64 {
    if eta.abs() > delta {
        eta.signum()
    } else {
        eta / delta
    }
}

/// `prox_{γφ_δ}(η)`: soft threshold by γ outside `|η| ≤ δ+γ`, shrink by
/// `δ/(γ+δ)` inside.
pub fn prox_huber_scalar(delta: f64, gamma: f64, eta: f64) -> f64 {
    if eta.abs() > delta + gamma {
        eta - gamma * eta.signum()
    } else {
        delta * eta / (gamma + delta)
    }
}

/// Weighted Huber penalty in an orthonormal transform domain:
/// `g(x) = weight · Σ_i φ_δ((Wx)_i)`.
#[derive(Debug, Clone)]
pub struct HuberTransform {
    pub delta: f64,
    pub weight: f64,
    transform: LinearMap,
}

impl HuberTransform {
    /// `transform` must be orthonormal (`W*W = Id`); checked cheaply on a
    /// few random vectors at construction.
    pub fn new(delta: f64, weight: f64, transform: LinearMap) -> Result<Self, ProxError> {
        require_positive("delta", delta)?;
        require_positive("weight", weight)?;
        if !transform.has_adjoint() {
            return Err(ProxError::Linops(LinopsError::MissingAdjoint));
        }
        let n = transform.in_dim();
        for seed in 0..3u64 {
            let x = crate::linops::random_vector(n, 0xa110 + seed);
            let round = transform.apply_adjoint(&transform.apply(&x)?)?;
            let diff = &round - &x;
            let err = diff.dot(&diff).sqrt() / x.dot(&x).sqrt().max(1e-300);
            if err > 1e-12 {
                return Err(ProxError::Linops(LinopsError::ShapeError(format!(
                    "transform is not orthonormal: ‖W*Wx − x‖/‖x‖ = {err:.3e}"
                ))));
            }
        }
        Ok(Self {
            delta,
            weight,
            transform,
        })
    }

    pub fn transform(&self) -> &LinearMap {
        &self.transform
    }

    pub fn dim(&self) -> usize {
        self.transform.in_dim()
    }

    /// Objective value `weight · Φ_δ(Wx)`.
    pub fn value(&self, x: &Array1<f64>) -> Result<f64, ProxError> {
        let w = self.transform.apply(x)?;
        Ok(self.weight * w.iter().map(|&e| huber_value(self.delta, e)).sum::<f64>())
    }
}

/// `prox_{γg} = W* ∘ prox_{(γ·weight)Φ_δ} ∘ W` (orthonormal `W`).
pub fn prox_g(p: &HuberTransform, gamma: f64, x: &Array1<f64>) -> Result<Array1<f64>, ProxError> {
    let eff = gamma * p.weight;
    let coeffs = p.transform.apply(x)?;
    let shrunk = coeffs.mapv(|e| prox_huber_scalar(p.delta, eff, e));
    Ok(p.transform.apply_adjoint(&shrunk)?)
}

/// `∇g = weight · W* ∘ φ̇_δ ∘ W`; Lipschitz with constant `weight/δ`.
pub fn grad_g(p: &HuberTransform, x: &Array1<f64>) -> Result<Array1<f64>, ProxError> {
    let coeffs = p.transform.apply(x)?;
    let slopes = coeffs.mapv(|e| huber_derivative(p.delta, e));
    Ok(p.transform.apply_adjoint(&slopes)? * p.weight)
}

/// Generalized Anscombe data fidelity for observations `c` under mixed
/// Poisson-Gaussian noise with Gaussian variance `σ²`. Only the gradient
/// and its Lipschitz constant are needed by the solvers.
#[derive(Debug, Clone)]
pub struct AnscombeFidelity {
    data: Array1<f64>,
    pub sigma: f64,
}

impl AnscombeFidelity {
    /// Every data entry must satisfy `c_m ≥ −3/8 − σ²` (guaranteed by the
    /// cropping applied during data synthesis).
    pub fn new(data: Array1<f64>, sigma: f64) -> Result<Self, ProxError> {
        if data.is_empty() {
            return Err(ProxError::EmptyData);
        }
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(ProxError::NonPositive {
                name: "sigma",
                value: sigma,
            });
        }
        let floor = -0.375 - sigma * sigma;
        for (i, &c) in data.iter().enumerate() {
            if c < floor || !c.is_finite() {
                return Err(ProxError::DataBelowFloor {
                    index: i,
                    value: c,
                    floor,
                });
            }
        }
        Ok(Self { data, sigma })
    }

    pub fn data(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn s2(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Curvature bound `ν(b) = (3/8+σ²)^{−3/2} √(3/8+b+σ²)`.
    fn nu(&self, b: f64) -> f64 {
        let base = 0.375 + self.s2();
        base.powf(-1.5) * (base + b).sqrt()
    }

    /// Scalar fidelity `φ(a; b)`: squared root-difference for `a ≥ 0`,
    /// quadratic extension below zero.
    pub fn phi(&self, a: f64, b: f64) -> f64 {
        if a >= 0.0 {
            let d = (b + 0.375 + self.s2()).sqrt() - (a + 0.375 + self.s2()).sqrt();
            2.0 * d * d
        } else {
            self.phi(0.0, b) + self.phi_dot(0.0, b) * a + 0.5 * self.nu(b) * a * a
        }
    }

    /// Scalar derivative `φ̇(a; b)`.
    pub fn phi_dot(&self, a: f64, b: f64) -> f64 {
        if a >= 0.0 {
            2.0 - 2.0 * (8.0 * b + 8.0 * self.s2() + 3.0).sqrt()
                / (8.0 * a + 8.0 * self.s2() + 3.0).sqrt()
        } else {
            self.phi_dot(0.0, b) + self.nu(b) * a
        }
    }

    /// Fidelity value `h(y) = Σ_m φ(y_m; c_m)`.
    pub fn value(&self, y: &Array1<f64>) -> Result<f64, ProxError> {
        self.check_len(y)?;
        Ok(y.iter()
            .zip(self.data.iter())
            .map(|(&a, &b)| self.phi(a, b))
            .sum())
    }

    fn check_len(&self, y: &Array1<f64>) -> Result<(), ProxError> {
        if y.len() != self.data.len() {
            return Err(ProxError::Linops(LinopsError::DimensionMismatch {
                expected: self.data.len(),
                actual: y.len(),
            }));
        }
        Ok(())
    }
}

/// Componentwise gradient of the generalized Anscombe fidelity.
pub fn anscombe_grad(p: &AnscombeFidelity, y: &Array1<f64>) -> Result<Array1<f64>, ProxError> {
    p.check_len(y)?;
    Ok(Array1::from_iter(
        y.iter()
            .zip(p.data().iter())
            .map(|(&a, &b)| p.phi_dot(a, b)),
    ))
}

/// Lipschitz constant of [`anscombe_grad`]: `max_m ν(c_m)`.
pub fn anscombe_lipschitz(p: &AnscombeFidelity) -> f64 {
    p.data()
        .iter()
        .map(|&b| p.nu(b))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn require_power_of_two(len: usize) -> Result<(), ProxError> {
    if len == 0 || !len.is_power_of_two() {
        Err(ProxError::NotPowerOfTwo(len))
    } else {
        Ok(())
    }
}

fn haar_analysis_level(buf: &mut [f64], len: usize) {
    let half = len / 2;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut tmp = vec![0.0; len];
    for i in 0..half {
        let a = buf[2 * i];
        let b = buf[2 * i + 1];
        tmp[i] = (a + b) * inv_sqrt2;
        tmp[half + i] = (a - b) * inv_sqrt2;
    }
    buf[..len].copy_from_slice(&tmp);
}

fn haar_synthesis_level(buf: &mut [f64], len: usize) {
    let half = len / 2;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut tmp = vec![0.0; len];
    for i in 0..half {
        let s = buf[i];
        let d = buf[half + i];
        tmp[2 * i] = (s + d) * inv_sqrt2;
        tmp[2 * i + 1] = (s - d) * inv_sqrt2;
    }
    buf[..len].copy_from_slice(&tmp);
}

/// Full-depth orthonormal Haar analysis; requires a power-of-two length.
pub fn haar_forward(x: &Array1<f64>) -> Result<Array1<f64>, ProxError> {
    require_power_of_two(x.len())?;
    let mut buf = x.to_vec();
    let mut len = buf.len();
    while len >= 2 {
        haar_analysis_level(&mut buf, len);
        len /= 2;
    }
    Ok(Array1::from_vec(buf))
}

/// Inverse of [`haar_forward`].
pub fn haar_inverse(y: &Array1<f64>) -> Result<Array1<f64>, ProxError> {
    require_power_of_two(y.len())?;
    let mut buf = y.to_vec();
    let mut len = 2;
    while len <= buf.len() {
        haar_synthesis_level(&mut buf, len);
        len *= 2;
    }
    Ok(Array1::from_vec(buf))
}

/// Orthonormal Haar transform with a fixed number of levels as a
/// [`LinearMap`] (the adjoint is the inverse). `n` must be divisible by
/// `2^levels`.
pub fn haar_map(n: usize, levels: usize) -> Result<LinearMap, ProxError> {
    if levels == 0 || n == 0 || !n.is_multiple_of(1usize << levels) {
        return Err(ProxError::BadLevelCount { len: n, levels });
    }
    let forward = move |x: &Array1<f64>| {
        let mut buf = x.to_vec();
        let mut len = buf.len();
        for _ in 0..levels {
            haar_analysis_level(&mut buf, len);
            len /= 2;
        }
        Array1::from_vec(buf)
    };
    let inverse = move |y: &Array1<f64>| {
        let mut buf = y.to_vec();
        let mut len = buf.len() >> (levels - 1);
        while len <= buf.len() {
            haar_synthesis_level(&mut buf, len);
            len *= 2;
        }
        Array1::from_vec(buf)
    };
    Ok(LinearMap::with_adjoint(n, n, forward, inverse))
}
