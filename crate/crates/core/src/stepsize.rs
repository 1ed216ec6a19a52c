//! Step-size theory for both schemes and the ledger of derived constants.
//!
//! The half-forward scheme admits constant steps in `(0, χ)` with
//! `χ = 4β / (1 + √(1 + 16β²κ²))`, shrunk by `−1/ρ` when ρ < 0. The
//! Douglas-Rachford-type scheme admits the set
//! `Γ = {γ > 0 : κ²γ²(1 + γ/(2β)) < 1, ργ > −1}`; its contraction analysis
//! additionally needs the pair (ε₁, ε₂) derived below.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepSizeError {
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("safety factor must lie in (0, 1), got {0}")]
    BadSafety(f64),
    #[error("gamma = {gamma} is outside the admissible set: {reason}")]
    OutsideAdmissibleSet { gamma: f64, reason: String },
    #[error("no admissible gamma: {0}")]
    NoAdmissibleGamma(String),
    #[error("linear-rate theory inapplicable: rho_hat = {0} is not positive")]
    NonContractive(f64),
    #[error("bisection failed to bracket the root in [0, {0}]")]
    BracketFailure(f64),
}

fn require_positive(name: &'static str, value: f64) -> Result<(), StepSizeError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(StepSizeError::NonPositive { name, value })
    }
}

/// Step cap for the half-forward scheme.
///
/// `χ = 4β / (1 + √(1 + 16β²κ²))` for ρ ≥ 0; the minimum with `−1/ρ`
/// otherwise. For κ = 0 the value degenerates to 2β.
pub fn chi(beta: f64, kappa: f64, rho: f64) -> Result<f64, StepSizeError> {
    require_positive("beta", beta)?;
    if kappa < 0.0 || !kappa.is_finite() {
        return Err(StepSizeError::NonPositive {
            name: "kappa",
            value: kappa,
        });
    }
    let base = 4.0 * beta / (1.0 + (1.0 + 16.0 * beta * beta * kappa * kappa).sqrt());
    Ok(if rho < 0.0 { base.min(-1.0 / rho) } else { base })
}

/// Constant step and half-width for the half-forward scheme:
/// `γ = safety·χ` with `ε = min(γ, χ−γ)/2`, so that `γ ∈ [ε, χ−ε]`.
pub fn gamma_fbhf(chi: f64, safety: f64) -> Result<(f64, f64), StepSizeError> {
    require_positive("chi", chi)?;
    if !(0.0..1.0).contains(&safety) || safety == 0.0 {
        return Err(StepSizeError::BadSafety(safety));
    }
    let gamma = safety * chi;
    let epsilon = gamma.min(chi - gamma) / 2.0;
    Ok((gamma, epsilon))
}

/// Membership in the Douglas-Rachford admissible set Γ.
pub fn in_gamma_set(gamma: f64, beta: f64, kappa: f64, rho: f64) -> bool {
    gamma > 0.0
        && kappa * kappa * gamma * gamma * (1.0 + gamma / (2.0 * beta)) < 1.0
        && rho * gamma > -1.0
}

/// Largest admissible step for the Douglas-Rachford-type scheme, scaled by
/// `safety`: finds the root `γ̂` of `κ²γ²(1 + γ/(2β)) = 1` by bisection to
/// 1e−12, then returns `safety·min(γ̂, −1/ρ)` (the clamp applies for ρ < 0).
pub fn gamma_fdrf(beta: f64, kappa: f64, rho: f64, safety: f64) -> Result<f64, StepSizeError> {
    require_positive("beta", beta)?;
    require_positive("kappa", kappa)?;
    if !(0.0..1.0).contains(&safety) || safety == 0.0 {
        return Err(StepSizeError::BadSafety(safety));
    }
    let cubic = |g: f64| kappa * kappa * g * g * (1.0 + g / (2.0 * beta));
    // The cubic is strictly increasing in γ and exceeds 1 at γ = 1/κ, so
    // [0, 1/κ] always brackets the root.
    let mut hi = 1.0 / kappa;
    if cubic(hi) < 1.0 {
        return Err(StepSizeError::BracketFailure(hi));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cubic(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let gamma_hat = 0.5 * (lo + hi);
    let cap = if rho < 0.0 { gamma_hat.min(-1.0 / rho) } else { gamma_hat };
    let gamma = safety * cap;
    if !in_gamma_set(gamma, beta, kappa, rho) {
        return Err(StepSizeError::NoAdmissibleGamma(format!(
            "safety {safety} * cap {cap} left the admissible set"
        )));
    }
    Ok(gamma)
}

/// Root `γ̂` of `κ²γ̂²(1 + γ̂/(2β)) = 1` (the unscaled FDRF cap).
pub fn gamma_hat_fdrf(beta: f64, kappa: f64) -> Result<f64, StepSizeError> {
    // Reuse the bisection with a neutral safety and no rho clamp, then undo
    // the scaling exactly.
    let g = gamma_fdrf(beta, kappa, 0.0, 0.5)?;
    Ok(g / 0.5)
}

/// The pair (ε₁, ε₂) for the Douglas-Rachford contraction inequality.
///
/// ε₂ is chosen as half its admissible supremum
/// `(1 − κ²γ²(1 + γ/(2β))) / (1 − κ²γ²)` and
/// `ε₁ = 1 − κ²γ²(1 + γ/(2β(1−ε₂)))`; both are strictly positive for
/// admissible γ.
pub fn epsilons_fdrf(gamma: f64, beta: f64, kappa: f64) -> Result<(f64, f64), StepSizeError> {
    require_positive("beta", beta)?;
    require_positive("gamma", gamma)?;
    let kg2 = kappa * kappa * gamma * gamma;
    let margin = kg2 * (1.0 + gamma / (2.0 * beta));
    if margin >= 1.0 {
        return Err(StepSizeError::OutsideAdmissibleSet {
            gamma,
            reason: format!("kappa^2*gamma^2*(1+gamma/(2beta)) = {margin} >= 1"),
        });
    }
    let sup = (1.0 - margin) / (1.0 - kg2);
    let eps2 = 0.5 * sup;
    let eps1 = 1.0 - kg2 * (1.0 + gamma / (2.0 * beta * (1.0 - eps2)));
    debug_assert!(eps1 > 0.0 && eps2 > 0.0);
    Ok((eps1, eps2))
}

/// Error-propagation constant `θ₁ = (α + ζ)‖L‖` used by the perturbation
/// bound on `D_{K_n} − D_K`.
pub fn theta1(alpha: f64, zeta: f64, norm_l: f64) -> f64 {
    (alpha + zeta) * norm_l
}

/// How the strong-monotonicity parameter of the resolvent block is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoPolicy {
    /// `ρ = −α·λ_min + ζ̃_{L*−K} + margin`, which forces `ρ̂ = margin`.
    Recipe { margin: f64 },
    /// Explicit ρ for ablation runs.
    Fixed { rho: f64 },
}

impl Default for RhoPolicy {
    fn default() -> Self {
        RhoPolicy::Recipe { margin: 1e-3 }
    }
}

impl RhoPolicy {
    pub fn rho(&self, alpha: f64, lambda_min: f64, zeta_tilde_mismatch: f64) -> f64 {
        match *self {
            RhoPolicy::Recipe { margin } => -alpha * lambda_min + zeta_tilde_mismatch + margin,
            RhoPolicy::Fixed { rho } => rho,
        }
    }
}

/// Inputs the ledger assembly cannot derive by itself.
#[derive(Debug, Clone, Copy)]
pub struct LedgerInputs {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub rho: f64,
    pub lambda_min: f64,
    pub norm_l: f64,
    /// `‖L* − K‖`.
    pub norm_mismatch: f64,
    /// `κ_K`, the certified Lipschitz bound of `D_K`.
    pub kappa_k: f64,
}

/// Every derived scalar the solvers and diagnostics consume, in one place.
/// Serialized verbatim into run summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub rho: f64,
    pub lambda_min: f64,
    #[serde(rename = "kappa_K")]
    pub kappa_k: f64,
    pub zeta_tilde_mismatch: f64,
    pub rho_hat: f64,
    pub chi: f64,
    pub gamma_fbhf: f64,
    pub gamma_hat: f64,
    pub gamma_fdrf: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub theta1: f64,
    /// Half-width ε of the FBHF step band actually used by the run.
    pub eps_fbhf: f64,
    pub norm_l: f64,
    pub norm_mismatch: f64,
    /// Contraction factors; present only when `rho_hat > 0`.
    pub theta_fbhf: Option<f64>,
    pub theta_fdrf: Option<f64>,
}

impl ConstantsLedger {
    /// Derives the full ledger from measured spectral quantities.
    pub fn assemble(
        inputs: &LedgerInputs,
        safety_fbhf: f64,
        safety_fdrf: f64,
    ) -> Result<Self, StepSizeError> {
        let zeta_tilde = inputs.zeta * inputs.norm_mismatch * inputs.norm_l;
        let rho_hat =
            crate::operators::rho_hat(inputs.rho, inputs.alpha, inputs.lambda_min, zeta_tilde);
        let chi_v = chi(inputs.beta, inputs.kappa_k, inputs.rho)?;
        let (gamma_b, eps_b) = gamma_fbhf(chi_v, safety_fbhf)?;
        let (gamma_hat, gamma_d) = if inputs.kappa_k > 0.0 {
            let gh = gamma_hat_fdrf(inputs.beta, inputs.kappa_k)?;
            let gd = gamma_fdrf(inputs.beta, inputs.kappa_k, inputs.rho, safety_fdrf)?;
            (gh, gd)
        } else {
            // Degenerate linear part: Γ is only limited by the rho clamp.
            let cap = if inputs.rho < 0.0 {
                -1.0 / inputs.rho
            } else {
                2.0 * inputs.beta
            };
            (f64::INFINITY, safety_fdrf * cap)
        };
        let (eps1, eps2) = epsilons_fdrf(gamma_d, inputs.beta, inputs.kappa_k)?;
        let mut ledger = Self {
            alpha: inputs.alpha,
            beta: inputs.beta,
            zeta: inputs.zeta,
            rho: inputs.rho,
            lambda_min: inputs.lambda_min,
            kappa_k: inputs.kappa_k,
            zeta_tilde_mismatch: zeta_tilde,
            rho_hat,
            chi: chi_v,
            gamma_fbhf: gamma_b,
            gamma_hat,
            gamma_fdrf: gamma_d,
            eps1,
            eps2,
            theta1: theta1(inputs.alpha, inputs.zeta, inputs.norm_l),
            eps_fbhf: eps_b,
            norm_l: inputs.norm_l,
            norm_mismatch: inputs.norm_mismatch,
            theta_fbhf: None,
            theta_fdrf: None,
        };
        if rho_hat > 0.0 {
            let (tb, td) = ledger.contraction_factors()?;
            ledger.theta_fbhf = Some(tb);
            ledger.theta_fdrf = Some(td);
        }
        Ok(ledger)
    }

    /// Theoretical per-step contraction factors:
    /// `ϑ_FBHF = √(1 − ε·min{κ²ε/2, ρ̂})` and
    /// `ϑ_FDRF = √(1 − ⅓·min{2βε₂/γ, ε₁, 2γρ̂})`. Requires `ρ̂ > 0`.
    pub fn contraction_factors(&self) -> Result<(f64, f64), StepSizeError> {
        contraction_factors(
            self.rho_hat,
            self.kappa_k,
            self.eps_fbhf,
            self.beta,
            self.gamma_fdrf,
            self.eps1,
            self.eps2,
        )
    }
}

/// See [`ConstantsLedger::contraction_factors`].
pub fn contraction_factors(
    rho_hat: f64,
    kappa: f64,
    eps_fbhf: f64,
    beta: f64,
    gamma_fdrf: f64,
    eps1: f64,
    eps2: f64,
) -> Result<(f64, f64), StepSizeError> {
    if rho_hat <= 0.0 {
        return Err(StepSizeError::NonContractive(rho_hat));
    }
    let fbhf =
        (1.0 - eps_fbhf * (kappa * kappa * eps_fbhf / 2.0).min(rho_hat)).max(0.0).sqrt();
    let fdrf = (1.0
        - (1.0 / 3.0)
            * (2.0 * beta * eps2 / gamma_fdrf)
                .min(eps1)
                .min(2.0 * gamma_fdrf * rho_hat))
    .max(0.0)
    .sqrt();
    Ok((fbhf, fdrf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_degenerate_lipschitz() {
        assert!((chi(1.5, 0.0, 0.0).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn chi_reference_values() {
        let v = chi(1.0, 1.0, 0.5).unwrap();
        assert!((v - 4.0 / (1.0 + 17f64.sqrt())).abs() < 1e-15);
        assert!((v - 0.780776).abs() < 1e-6);
        let w = chi(1.0, 1.0, -2.0).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_rejects_nonpositive_beta() {
        assert!(chi(0.0, 1.0, 0.0).is_err());
        assert!(chi(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn chi_below_both_caps() {
        for bs in 1..40u32 {
            for ks in 1..40u32 {
                let beta = 0.05 * f64::from(bs);
                let kappa = 0.07 * f64::from(ks);
                let v = chi(beta, kappa, 0.0).unwrap();
                assert!(v < 2.0 * beta);
                assert!(v < 1.0 / kappa);
            }
        }
    }

    #[test]
    fn gamma_fbhf_midpoint_and_band() {
        let (g, e) = gamma_fbhf(1.0, 0.5).unwrap();
        assert_eq!(g, 0.5);
        assert_eq!(e, 0.25);
        let chi_v = chi(1.0, 1.0, 0.0).unwrap();
        let (g2, e2) = gamma_fbhf(chi_v, 0.9975).unwrap();
        assert!((g2 - 0.778824).abs() < 1e-6);
        assert!(e2 > 0.0 && e2 <= g2 && g2 <= chi_v - e2);
    }

    #[test]
    fn gamma_fbhf_rejects_bad_safety() {
        assert!(gamma_fbhf(1.0, 0.0).is_err());
        assert!(gamma_fbhf(1.0, 1.0).is_err());
        assert!(gamma_fbhf(1.0, 1.5).is_err());
    }

    #[test]
    fn gamma_fdrf_large_beta_limit() {
        let g = gamma_hat_fdrf(1e6, 1.0).unwrap();
        assert!((g - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gamma_fdrf_cubic_root() {
        // kappa = 1, beta = 0.5: root of g^3 + g^2 = 1.
        let ghat = gamma_hat_fdrf(0.5, 1.0).unwrap();
        assert!((ghat - 0.754878).abs() < 1e-6);
        let g = gamma_fdrf(0.5, 1.0, 0.0, 0.999).unwrap();
        assert!((g - 0.999 * ghat).abs() < 1e-9);
        assert!(in_gamma_set(g, 0.5, 1.0, 0.0));
    }

    #[test]
    fn gamma_fdrf_rho_clamp() {
        let rho = -4.0;
        let g = gamma_fdrf(0.5, 1.0, rho, 0.999).unwrap();
        assert!(g * rho > -1.0);
        assert!((g - 0.999 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn epsilons_small_kappa_limit() {
        let (e1, e2) = epsilons_fdrf(0.5, 1.0, 1e-6).unwrap();
        assert!((e2 - 0.5).abs() < 1e-6);
        assert!((e1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn epsilons_reference_values() {
        let (e1, e2) = epsilons_fdrf(0.5, 0.5, 1.0).unwrap();
        assert!((e2 - 0.625 / 0.75 / 2.0).abs() < 1e-12);
        assert!((e2 - 0.41666667).abs() < 1e-7);
        assert!((e1 - 0.535714).abs() < 1e-5);
    }

    #[test]
    fn epsilons_reject_inadmissible_gamma() {
        assert!(matches!(
            epsilons_fdrf(2.0, 0.5, 1.0),
            Err(StepSizeError::OutsideAdmissibleSet { .. })
        ));
    }

    #[test]
    fn theta1_values() {
        assert_eq!(theta1(0.0, 0.0, 5.0), 0.0);
        assert_eq!(theta1(1.0, 2.0, 3.0), 9.0);
    }

    #[test]
    fn contraction_factor_values() {
        // FBHF: 1 − ε·min{κ²ε/2, ρ̂} with κ=1, ε=0.2, ρ̂=0.5 gives
        // 1 − 0.2·0.1 = 0.98.
        let (fbhf, _) = contraction_factors(0.5, 1.0, 0.2, 0.5, 0.5, 0.535714, 0.4166667).unwrap();
        assert!((fbhf - 0.98f64.sqrt()).abs() < 1e-12);
        // FDRF: min{2·0.5·0.41667/0.5, 0.535714, 2·0.5·0.1} = 0.1.
        let (_, fdrf) = contraction_factors(0.1, 1.0, 0.2, 0.5, 0.5, 0.535714, 0.4166667).unwrap();
        assert!((fdrf - (1.0f64 - 0.1 / 3.0).sqrt()).abs() < 1e-9);
        assert!((fdrf - 0.983192).abs() < 1e-6);
    }

    #[test]
    fn contraction_requires_positive_margin() {
        assert!(matches!(
            contraction_factors(0.0, 1.0, 0.1, 1.0, 0.5, 0.5, 0.25),
            Err(StepSizeError::NonContractive(_))
        ));
    }

    #[test]
    fn contraction_factors_below_one() {
        let (a, b) = contraction_factors(0.3, 2.0, 0.05, 0.8, 0.3, 0.6, 0.3).unwrap();
        assert!(a < 1.0 && a > 0.0);
        assert!(b < 1.0 && b > 0.0);
    }

    #[test]
    fn ledger_serializes_expected_field_names() {
        let inputs = LedgerInputs {
            alpha: 0.1,
            beta: 0.5,
            zeta: 1.0,
            rho: 1.0,
            lambda_min: -0.5,
            norm_l: 1.0,
            norm_mismatch: 0.2,
            kappa_k: 0.7,
        };
        let ledger = ConstantsLedger::assemble(&inputs, 0.9975, 0.999).unwrap();
        let json = serde_json::to_value(&ledger).unwrap();
        for field in [
            "alpha",
            "beta",
            "zeta",
            "rho",
            "lambda_min",
            "kappa_K",
            "zeta_tilde_mismatch",
            "rho_hat",
            "chi",
            "gamma_fbhf",
            "gamma_hat",
            "gamma_fdrf",
            "eps1",
            "eps2",
            "theta1",
        ] {
            assert!(json.get(field).is_some(), "missing field {field}");
        }
        assert!(ledger.rho_hat > 0.0);
        assert!(ledger.theta_fbhf.is_some());
    }

    #[test]
    fn fdrf_output_strictly_inside_gamma_set() {
        // Perturbing the returned step by 1.01/safety must exit Γ.
        let mut seed = 987u64;
        for _ in 0..50 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let beta = 0.05 + (seed % 1000) as f64 / 100.0;
            let kappa = 0.05 + ((seed >> 10) % 1000) as f64 / 50.0;
            let g = gamma_fdrf(beta, kappa, 0.0, 0.999).unwrap();
            assert!(in_gamma_set(g, beta, kappa, 0.0));
            assert!(!in_gamma_set(g * 1.01 / 0.999, beta, kappa, 0.0));
        }
    }
}
