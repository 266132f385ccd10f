//! Stability and suboptimality bounds of certainty-equivalence MPC.
//!
//! All constants follow the curvature convention of [`crate::cost`]. Functions
//! here are pure and cheap; the aggregate entry point is [`BoundInputs`].

pub mod lq;
mod report;

pub use report::BoundReport;

use crate::cost::{error_matching_constant, CostConstants, CostError};
use crate::model::{Lipschitz, MismatchLipschitz};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::RangeInclusive;
use thiserror::Error;

/// Tolerance used to classify the uniform state Lipschitz constant as exactly one.
pub const MARGINAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("singular-value lower bound {lower} exceeds upper bound {upper}")]
    Spectrum { lower: f64, upper: f64 },
    #[error("{0} must be positive and finite")]
    NotPositive(&'static str),
    #[error("decay ratio {0} is outside [0, 1)")]
    DecayRatio(f64),
    #[error("stage index {k} is outside 0..{horizon}")]
    Index { k: usize, horizon: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("ε_N is undefined for N = 1 when ν is unbounded")]
    UnboundedNuAtUnitHorizon,
    #[error("the outside-ball branch needs R(0; ε) > 0")]
    ZeroRadius,
    #[error("nominal decrease deficit ε_N = {0} is not below 1")]
    NominalUnstable(f64),
    #[error("stability condition violated: margin {margin}")]
    Unstable { margin: f64 },
    #[error("no horizon in {lo}..={hi} satisfies the stability condition")]
    NoStableHorizon { lo: usize, hi: usize },
    #[error("empty horizon range")]
    EmptyRange,
    #[error("the printed β* variant needs an evaluation state")]
    MissingPoint,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("LQ specialization: {0}")]
    Lq(String),
}

fn positive(value: f64, what: &'static str) -> Result<f64, BoundsError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(BoundsError::NotPositive(what))
    }
}

/// Uniform singular-value bounds of the KKT system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBounds {
    /// σ̄_H
    pub hessian_upper: f64,
    /// σ̄_R
    pub jacobian_upper: f64,
    /// σ_H
    pub hessian_lower: f64,
}

/// Exponential decay of sensitivity: `‖Δu_k‖ ≤ gain · decay^k · ‖Δx‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdsConstants {
    pub gain: f64,
    pub decay: f64,
}

impl EdsConstants {
    pub fn new(gain: f64, decay: f64) -> Result<Self, BoundsError> {
        positive(gain, "EDS gain")?;
        if !(0.0..1.0).contains(&decay) {
            return Err(BoundsError::DecayRatio(decay));
        }
        Ok(Self { gain, decay })
    }
}

pub fn eds_constants(s: &SpectrumBounds) -> Result<EdsConstants, BoundsError> {
    positive(s.hessian_upper, "σ̄_H")?;
    positive(s.jacobian_upper, "σ̄_R")?;
    positive(s.hessian_lower, "σ_H")?;
    if s.hessian_lower > s.hessian_upper {
        return Err(BoundsError::Spectrum { lower: s.hessian_lower, upper: s.hessian_upper });
    }
    let (hi2, lo2) = (s.hessian_upper.powi(2), s.hessian_lower.powi(2));
    let gain = (s.hessian_upper * s.jacobian_upper / lo2).sqrt();
    let decay = ((hi2 - lo2) / (hi2 + lo2)).powf(0.125);
    EdsConstants::new(gain, decay)
}

fn geometric(decay: f64, from: usize, to: usize) -> f64 {
    (from..=to).map(|i| decay.powi(i as i32)).sum()
}

/// `Λ_N(k) = Σ_{i=0}^{k} ρ^i + Σ_{i=1}^{N−k−1} ρ^i`.
pub fn lambda_factor(horizon: usize, k: usize, decay: f64) -> Result<f64, BoundsError> {
    if k >= horizon {
        return Err(BoundsError::Index { k, horizon });
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(BoundsError::DecayRatio(decay));
    }
    let tail = if horizon - k > 1 { geometric(decay, 1, horizon - k - 1) } else { 0.0 };
    Ok(geometric(decay, 0, k) + tail)
}

/// `Γ_0..Γ_N` of the open-loop state perturbation.
pub fn gamma_sequence(horizon: usize, lipschitz: Lipschitz, eds: EdsConstants) -> Vec<f64> {
    let (lx, lu) = (lipschitz.state, lipschitz.input);
    (0..=horizon)
        .map(|k| {
            let input: f64 = (0..k).map(|i| lx.powi(i as i32) * eds.decay.powi((k - i) as i32)).sum();
            lx.powi(k as i32) + lu * eds.gain * input
        })
        .collect()
}

/// `P(L̄_fx)`.
pub fn p_growth(horizon: usize, lipschitz: Lipschitz) -> f64 {
    let (lx, lu) = (lipschitz.state, lipschitz.input);
    (1..=horizon)
        .map(|k| {
            let linear: f64 = (0..k).map(|i| lx.powi(i as i32)).sum();
            let squares: f64 = (0..k).map(|i| lx.powi(2 * i as i32)).sum();
            lu * lu * linear * linear + squares
        })
        .sum()
}

/// Cost-controllability and relaxed-CLF constants for one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityConstants {
    pub gamma_n: f64,
    pub gamma_bar: f64,
    /// `f64::INFINITY` is allowed.
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalStability {
    pub epsilon_n: f64,
    /// `N̲₀`, clamped below at 1.
    pub horizon_floor: usize,
}

fn floor_from(raw: f64) -> usize {
    let n = 1.0 + raw.ceil();
    if n < 1.0 {
        1
    } else {
        n as usize
    }
}

pub fn nominal_stability(horizon: usize, c: &ControllabilityConstants) -> Result<NominalStability, BoundsError> {
    if horizon == 0 {
        return Err(BoundsError::ZeroHorizon);
    }
    let n = horizon as f64;
    let (g, gb, nu) = (c.gamma_n, c.gamma_bar, c.nu);
    if nu.is_infinite() {
        if horizon == 1 {
            return Err(BoundsError::UnboundedNuAtUnitHorizon);
        }
        return Ok(NominalStability {
            epsilon_n: (1.0 + gb) * g / (n - 1.0),
            horizon_floor: floor_from((1.0 + gb) * g),
        });
    }
    Ok(NominalStability {
        epsilon_n: (1.0 + gb) * g * nu / ((n - 1.0) * nu + n + gb),
        horizon_floor: floor_from(((1.0 + gb) * g * nu - gb - 1.0) / (1.0 + nu)),
    })
}

/// Selects between a coefficient exactly as printed and its corrected alternate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    Printed,
    Corrected,
}

impl FormulaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FormulaVariant::Printed => "printed",
            FormulaVariant::Corrected => "corrected",
        }
    }
}

/// The three coefficient toggles.
///
/// * `alpha_first_order`: corrected squares `C_K` in the input term of `π_{α,N,1}`.
/// * `beta_cross_term`: corrected uses `L_{ℓ,u}/√m_{ℓ,u}` for the input part of `ζ_{β,N,1}`.
/// * `beta_star_scaling`: printed keeps the `ℓ*(x)` factor in `π*_{β,N,2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundVariants {
    pub alpha_first_order: FormulaVariant,
    pub beta_cross_term: FormulaVariant,
    pub beta_star_scaling: FormulaVariant,
}

impl Default for BoundVariants {
    fn default() -> Self {
        Self {
            alpha_first_order: FormulaVariant::Printed,
            beta_cross_term: FormulaVariant::Printed,
            beta_star_scaling: FormulaVariant::Corrected,
        }
    }
}

/// `α*_N(δ) = π₂ L_d²(δ) + π₁ L_d(δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStar {
    pub second_order: f64,
    pub first_order: f64,
    pub law: MismatchLipschitz,
}

impl AlphaStar {
    pub fn eval(&self, delta: f64) -> f64 {
        let l = self.law.eval(delta);
        self.second_order * l * l + self.first_order * l
    }
}

pub fn alpha_star(
    cost: &CostConstants,
    gamma: &[f64],
    eds: EdsConstants,
    gamma_bar: f64,
    epsilon_n: f64,
    law: &MismatchLipschitz,
    variant: FormulaVariant,
) -> Result<AlphaStar, BoundsError> {
    let c_m = error_matching_constant(cost)?;
    let gamma_sq: f64 = gamma.iter().map(|g| g * g).sum();
    let tail = 1.0 - eds.decay * eds.decay;
    let second_order = c_m * (cost.l_lx / 2.0 * gamma_sq + cost.l_lu * eds.gain.powi(2) / (2.0 * tail));
    let input_gain = match variant {
        FormulaVariant::Printed => eds.gain,
        FormulaVariant::Corrected => eds.gain * eds.gain,
    };
    let first_order = (2.0
        * c_m
        * (gamma_bar + epsilon_n)
        * (cost.l_lx.powi(2) / cost.m_lx * gamma_sq + cost.l_lu.powi(2) * input_gain / (cost.m_lu * tail)))
        .sqrt();
    Ok(AlphaStar { second_order, first_order, law: law.clone() })
}

/// Which branch of the scalable input perturbation bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallRegion {
    Inside,
    Outside,
}

impl BallRegion {
    /// Inside when `‖x‖ ≤ R(0; ε)`.
    pub fn of(state_norm: f64, r0: f64) -> Self {
        if state_norm <= r0 {
            BallRegion::Inside
        } else {
            BallRegion::Outside
        }
    }
}

/// `ω̄(δ; d_x)`.
pub fn omega_bar(delta: f64, d_x: f64, region: BallRegion, eds: EdsConstants, r0: f64) -> Result<f64, BoundsError> {
    if delta == 0.0 {
        return Ok(0.0);
    }
    let spread = 1.0 - eds.decay;
    match region {
        BallRegion::Inside => Ok(2.0 * eds.gain * (delta / spread).min(d_x)),
        BallRegion::Outside if r0 > 0.0 => Ok(2.0 * eds.gain / (spread * r0) * delta * d_x),
        BallRegion::Outside => Err(BoundsError::ZeroRadius),
    }
}

/// General affine bound `β_N(δ; x)` for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaGeneral {
    pub pi_second: f64,
    pub pi_first: f64,
    pub zeta_second: f64,
    pub zeta_first: f64,
    pub state_norm: f64,
    pub region: BallRegion,
    pub r0: f64,
    pub eds: EdsConstants,
    pub law: MismatchLipschitz,
}

impl BetaGeneral {
    pub fn omega(&self, delta: f64) -> Result<f64, BoundsError> {
        omega_bar(delta, self.state_norm, self.region, self.eds, self.r0)
    }

    pub fn eval(&self, delta: f64) -> Result<f64, BoundsError> {
        let l = self.law.eval(delta);
        let w = self.omega(delta)?;
        Ok(self.pi_second * l * l + self.pi_first * l + self.zeta_second * w * w + self.zeta_first * w)
    }
}

/// Shared data for the parametric perturbation bounds at one horizon.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationTerms<'a> {
    pub horizon: usize,
    pub cost: &'a CostConstants,
    pub p: f64,
    pub gamma_bar: f64,
    pub law: &'a MismatchLipschitz,
}

pub fn beta_general(
    terms: PerturbationTerms,
    state_norm: f64,
    ell_star: f64,
    eds: EdsConstants,
    r0: f64,
    variant: FormulaVariant,
) -> Result<BetaGeneral, BoundsError> {
    let c = terms.cost;
    let c_m = error_matching_constant(c)?;
    let (p, n, gb) = (terms.p, terms.horizon as f64, terms.gamma_bar);
    let input_weight = match variant {
        FormulaVariant::Printed => c.l_lx / c.m_lx.sqrt(),
        FormulaVariant::Corrected => c.l_lu / c.m_lu.sqrt(),
    };
    Ok(BetaGeneral {
        pi_second: c.l_lx / 2.0 * gb * p * c_m * ell_star,
        pi_first: (2.0 * c_m * p / c.m_lx).sqrt() * c.l_lx * gb * ell_star,
        zeta_second: 0.5 * (c.l_lx * p + c.l_lu * n),
        zeta_first: (2.0 * gb * ell_star).sqrt() * (c.l_lx / c.m_lx.sqrt() * p.sqrt() + input_weight * n.sqrt()),
        state_norm,
        region: BallRegion::of(state_norm, r0),
        r0,
        eds,
        law: terms.law.clone(),
    })
}

/// `η̄* = max{2C/((1−ρ)·r_Ω), η̄}` with `r_Ω` the radius of the ball Ω.
pub fn eta_bar_star(eds: EdsConstants, omega_radius: f64, eta_bar: f64) -> f64 {
    let outer = if omega_radius > 0.0 {
        2.0 * eds.gain / ((1.0 - eds.decay) * omega_radius)
    } else {
        f64::INFINITY
    };
    outer.max(eta_bar)
}

/// Relative bound `|V_N(x; θ̂) − V_N(x; θ)| ≤ β*_N(δ)·V_N(x; θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaStar {
    pub pi_second: f64,
    pub pi_first: f64,
    pub zeta_second: f64,
    pub zeta_first: f64,
    pub law: MismatchLipschitz,
}

impl BetaStar {
    pub fn eval(&self, delta: f64) -> f64 {
        let l = self.law.eval(delta);
        self.pi_second * l * l + self.pi_first * l + self.zeta_second * delta * delta + self.zeta_first * delta
    }
}

/// `ell_star` is only read by the printed variant.
pub fn beta_star(
    terms: PerturbationTerms,
    eta_bar_star: f64,
    ell_star: Option<f64>,
    variant: FormulaVariant,
) -> Result<BetaStar, BoundsError> {
    let c = terms.cost;
    let c_m = error_matching_constant(c)?;
    let (p, n, gb) = (terms.p, terms.horizon as f64, terms.gamma_bar);
    let scale = match variant {
        FormulaVariant::Printed => ell_star.ok_or(BoundsError::MissingPoint)?,
        FormulaVariant::Corrected => 1.0,
    };
    Ok(BetaStar {
        pi_second: c.l_lx / 2.0 * gb * p * c_m * scale,
        pi_first: (2.0 * c_m * p * gb / c.m_lx).sqrt() * c.l_lx,
        zeta_second: eta_bar_star.powi(2) * (c.l_lx / c.m_lx * p + c.l_lu / c.m_lx * n),
        zeta_first: 2.0
            * eta_bar_star
            * (c.l_lx / c.m_lx * p.sqrt() + c.l_lu / (c.m_lx * c.m_lu).sqrt() * n.sqrt()),
        law: terms.law.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub holds: bool,
    /// `1 − ε_N − α*_N(ε)`.
    pub margin: f64,
}

pub fn stability_check(epsilon_n: f64, alpha: &AlphaStar, epsilon: f64) -> StabilityCheck {
    let margin = 1.0 - epsilon_n - alpha.eval(epsilon);
    StabilityCheck { holds: margin > 0.0, margin }
}

/// Largest δ with `ε_N + α*_N(δ) ≤ 1`; `+∞` when `α*_N ≡ 0`.
pub fn max_mismatch(epsilon_n: f64, alpha: &AlphaStar) -> Result<f64, BoundsError> {
    if epsilon_n >= 1.0 {
        return Err(BoundsError::NominalUnstable(epsilon_n));
    }
    let (a, b, slack) = (alpha.second_order, alpha.first_order, 1.0 - epsilon_n);
    if a == 0.0 && b == 0.0 {
        return Ok(f64::INFINITY);
    }
    // Rationalized root of a·y² + b·y = slack; stable as a → 0.
    let y = 2.0 * slack / (b + (b * b + 4.0 * a * slack).sqrt());
    Ok(alpha.law.inverse(y).unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceBounds {
    pub affine: f64,
    pub ratio: f64,
}

fn denominator(epsilon_n: f64, alpha_value: f64) -> Result<f64, BoundsError> {
    let margin = 1.0 - epsilon_n - alpha_value;
    if margin > 0.0 {
        Ok(margin)
    } else {
        Err(BoundsError::Unstable { margin })
    }
}

/// `R_N(ε) = (1 + min{γ̄, β*_N(ε)})/(1 − ε_N − α*_N(ε))`.
pub fn competitive_ratio(epsilon_n: f64, alpha_value: f64, beta_star_value: f64, gamma_bar: f64) -> Result<f64, BoundsError> {
    Ok((1.0 + gamma_bar.min(beta_star_value)) / denominator(epsilon_n, alpha_value)?)
}

/// `(V_∞ + min{γ̄ℓ*(x), β_N(ε; x)})/(1 − ε_N − α*_N(ε))`.
pub fn affine_bound(
    v_inf: f64,
    ell_star: f64,
    epsilon_n: f64,
    alpha_value: f64,
    beta_value: f64,
    gamma_bar: f64,
) -> Result<f64, BoundsError> {
    Ok((v_inf + (gamma_bar * ell_star).min(beta_value)) / denominator(epsilon_n, alpha_value)?)
}

/// Growth regime of the bounds in the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticClass {
    Contractive,
    Marginal,
    Expansive,
}

impl AsymptoticClass {
    pub fn label(self) -> &'static str {
        match self {
            AsymptoticClass::Contractive => "contractive",
            AsymptoticClass::Marginal => "marginal",
            AsymptoticClass::Expansive => "expansive",
        }
    }

    /// Growth of `R_N(ε) − 1` as `ε → 0`, `N → ∞`.
    pub fn ratio_growth(self) -> &'static str {
        match self {
            AsymptoticClass::Contractive => "O(1/N + N[L_d(ε) + L_d(ε)^2] + N ε [1 + L_d(ε)])",
            AsymptoticClass::Marginal => "O(1/N + N^3 L_d(ε) + N^3 L_d(ε)^2 + N^4 ε + N^4 ε L_d(ε))",
            AsymptoticClass::Expansive => {
                "O(1/N + L^(2N) L_d(ε) + L^(2N) L_d(ε)^2 + L^(4N) ε + L^(4N) ε L_d(ε))"
            }
        }
    }

    /// Growth of `P(L̄_fx)` in the horizon.
    pub fn p_growth(self) -> &'static str {
        match self {
            AsymptoticClass::Contractive => "O(N)",
            AsymptoticClass::Marginal => "O(N^3)",
            AsymptoticClass::Expansive => "O(L^(2N))",
        }
    }
}

pub fn asymptotic_class(lipschitz_state_uniform: f64) -> AsymptoticClass {
    if (lipschitz_state_uniform - 1.0).abs() <= MARGINAL_TOLERANCE {
        AsymptoticClass::Marginal
    } else if lipschitz_state_uniform < 1.0 {
        AsymptoticClass::Contractive
    } else {
        AsymptoticClass::Expansive
    }
}

/// State at which the state-dependent bounds are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPoint {
    pub state_norm: f64,
    /// `ℓ*(x) = ℓ_x(x)`.
    pub ell_star: f64,
    /// Estimate of `V_∞(x; θ*)` for the affine bound.
    pub v_inf: Option<f64>,
}

/// Everything needed to evaluate the bounds at any horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub cost: CostConstants,
    /// Lipschitz constants used in `Γ_k` and `P`.
    pub lipschitz: Lipschitz,
    pub eds: EdsConstants,
    /// `γ_i` for `i = 1, 2, …`; horizons past the end fall back to `gamma_bar`.
    pub gammas: Vec<f64>,
    pub gamma_bar: f64,
    pub nu: f64,
    pub law: MismatchLipschitz,
    /// `R(0; ε)`.
    pub r0: f64,
    pub eta_bar_star: f64,
    pub variants: BoundVariants,
    pub point: Option<EvaluationPoint>,
}

impl BoundInputs {
    pub fn gamma_n(&self, horizon: usize) -> f64 {
        horizon.checked_sub(1).and_then(|i| self.gammas.get(i)).copied().unwrap_or(self.gamma_bar)
    }

    pub fn controllability(&self, horizon: usize) -> ControllabilityConstants {
        ControllabilityConstants { gamma_n: self.gamma_n(horizon), gamma_bar: self.gamma_bar, nu: self.nu }
    }

    pub fn at_horizon(&self, horizon: usize) -> Result<HorizonBounds, BoundsError> {
        self.cost.validate()?;
        let nominal = nominal_stability(horizon, &self.controllability(horizon))?;
        let gamma = gamma_sequence(horizon, self.lipschitz, self.eds);
        let p = p_growth(horizon, self.lipschitz);
        let c_m = error_matching_constant(&self.cost)?;
        let alpha = alpha_star(
            &self.cost,
            &gamma,
            self.eds,
            self.gamma_bar,
            nominal.epsilon_n,
            &self.law,
            self.variants.alpha_first_order,
        )?;
        let terms = PerturbationTerms { horizon, cost: &self.cost, p, gamma_bar: self.gamma_bar, law: &self.law };
        let beta_star = beta_star(
            terms,
            self.eta_bar_star,
            self.point.map(|pt| pt.ell_star),
            self.variants.beta_star_scaling,
        )?;
        let beta_general = self
            .point
            .map(|pt| beta_general(terms, pt.state_norm, pt.ell_star, self.eds, self.r0, self.variants.beta_cross_term))
            .transpose()?;
        Ok(HorizonBounds {
            horizon,
            gamma_n: self.gamma_n(horizon),
            gamma_bar: self.gamma_bar,
            nominal,
            gamma,
            p,
            c_m,
            alpha,
            beta_star,
            beta_general,
            point: self.point,
        })
    }
}

/// The bound set at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonBounds {
    pub horizon: usize,
    pub gamma_n: f64,
    pub gamma_bar: f64,
    pub nominal: NominalStability,
    /// `Γ_0..Γ_N`.
    pub gamma: Vec<f64>,
    pub p: f64,
    pub c_m: f64,
    pub alpha: AlphaStar,
    pub beta_star: BetaStar,
    pub beta_general: Option<BetaGeneral>,
    pub point: Option<EvaluationPoint>,
}

impl HorizonBounds {
    pub fn epsilon_n(&self) -> f64 {
        self.nominal.epsilon_n
    }

    pub fn stability(&self, epsilon: f64) -> StabilityCheck {
        stability_check(self.epsilon_n(), &self.alpha, epsilon)
    }

    pub fn max_mismatch(&self) -> Result<f64, BoundsError> {
        max_mismatch(self.epsilon_n(), &self.alpha)
    }

    pub fn ratio(&self, epsilon: f64) -> Result<f64, BoundsError> {
        competitive_ratio(self.epsilon_n(), self.alpha.eval(epsilon), self.beta_star.eval(epsilon), self.gamma_bar)
    }

    /// Needs an evaluation point carrying `v_inf`.
    pub fn affine(&self, epsilon: f64) -> Result<Option<f64>, BoundsError> {
        let (Some(pt), Some(beta)) = (self.point, &self.beta_general) else {
            return Ok(None);
        };
        let Some(v_inf) = pt.v_inf else {
            return Ok(None);
        };
        let b = beta.eval(epsilon)?;
        affine_bound(v_inf, pt.ell_star, self.epsilon_n(), self.alpha.eval(epsilon), b, self.gamma_bar).map(Some)
    }

    pub fn performance(&self, epsilon: f64) -> Result<(Option<f64>, f64), BoundsError> {
        Ok((self.affine(epsilon)?, self.ratio(epsilon)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonChoice {
    pub horizon: usize,
    pub ratio: f64,
    /// `(N, R_N)` for every candidate; `None` where the stability condition fails.
    pub table: Vec<(usize, Option<f64>)>,
}

/// Minimizes `R_N(ε)` over the range; ties go to the smaller horizon.
pub fn optimal_horizon(
    inputs: &BoundInputs,
    epsilon: f64,
    range: RangeInclusive<usize>,
) -> Result<HorizonChoice, BoundsError> {
    let (lo, hi) = (*range.start(), *range.end());
    if lo > hi {
        return Err(BoundsError::EmptyRange);
    }
    let table = range
        .into_par_iter()
        .map(|n| {
            let ratio = match inputs.at_horizon(n) {
                Ok(b) => b.ratio(epsilon).ok(),
                Err(BoundsError::UnboundedNuAtUnitHorizon) => None,
                Err(e) => return Err(e),
            };
            Ok((n, ratio))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let best = table
        .iter()
        .filter_map(|&(n, r)| r.map(|r| (n, r)))
        .fold(None::<(usize, f64)>, |acc, (n, r)| match acc {
            Some((_, best)) if best <= r => acc,
            _ => Some((n, r)),
        })
        .ok_or(BoundsError::NoStableHorizon { lo, hi })?;
    Ok(HorizonChoice { horizon: best.0, ratio: best.1, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    fn unit_cost() -> CostConstants {
        CostConstants { m_lx: 2.0, l_lx: 2.0, m_lu: 2.0, l_lu: 2.0 }
    }

    #[test]
    fn eds_from_spectrum() {
        let e = eds_constants(&SpectrumBounds { hessian_upper: 1.0, jacobian_upper: 1.0, hessian_lower: 1.0 }).unwrap();
        assert_eq!((e.gain, e.decay), (1.0, 0.0));
        let e = eds_constants(&SpectrumBounds { hessian_upper: 2.0, jacobian_upper: 2.0, hessian_lower: 1.0 }).unwrap();
        assert!(close(e.gain, 2.0));
        assert!(close(e.decay, 0.6f64.powf(0.125)));
        let err = eds_constants(&SpectrumBounds { hessian_upper: 1.0, jacobian_upper: 1.0, hessian_lower: 2.0 });
        assert!(matches!(err, Err(BoundsError::Spectrum { .. })));
    }

    #[test]
    fn decay_shrinks_as_bounds_meet() {
        let decays: Vec<f64> = [2.0, 1.5, 1.1, 1.01, 1.0]
            .iter()
            .map(|&hi| eds_constants(&SpectrumBounds { hessian_upper: hi, jacobian_upper: 1.0, hessian_lower: 1.0 }).unwrap().decay)
            .collect();
        assert!(decays.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*decays.last().unwrap(), 0.0);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_factor(5, 2, 0.0).unwrap(), 1.0);
        assert!(close(lambda_factor(3, 1, 0.5).unwrap(), 2.0));
        assert!(matches!(lambda_factor(3, 3, 0.5), Err(BoundsError::Index { .. })));
        for n in 1..=50 {
            for k in 0..n {
                for rho in [0.0, 0.3, 0.9, 0.999] {
                    assert!(lambda_factor(n, k, rho).unwrap() <= 2.0 / (1.0 - rho));
                }
            }
        }
    }

    #[test]
    fn gamma_examples() {
        let eds = EdsConstants::new(2.0, 0.5).unwrap();
        let g = gamma_sequence(3, Lipschitz { state: 0.5, input: 1.0 }, eds);
        assert_eq!(g[0], 1.0);
        assert!(close(g[1], 1.5));
        let g = gamma_sequence(6, Lipschitz { state: 1.3, input: 0.0 }, eds);
        for (k, v) in g.iter().enumerate() {
            assert!(close(*v, 1.3f64.powi(k as i32)));
        }
    }

    #[test]
    fn nominal_examples() {
        let s = nominal_stability(7, &ControllabilityConstants { gamma_n: 3.0, gamma_bar: 3.0, nu: 0.0 }).unwrap();
        assert_eq!((s.epsilon_n, s.horizon_floor), (0.0, 1));
        let s = nominal_stability(4, &ControllabilityConstants { gamma_n: 1.0, gamma_bar: 1.0, nu: 1.0 }).unwrap();
        assert!(close(s.epsilon_n, 0.25));
        let c = ControllabilityConstants { gamma_n: 2.0, gamma_bar: 2.0, nu: f64::INFINITY };
        let s = nominal_stability(4, &c).unwrap();
        assert!(close(s.epsilon_n, 2.0));
        assert_eq!(s.horizon_floor, 7);
        assert_eq!(nominal_stability(1, &c), Err(BoundsError::UnboundedNuAtUnitHorizon));
    }

    #[test]
    fn epsilon_n_decays_like_one_over_n() {
        let c = ControllabilityConstants { gamma_n: 2.0, gamma_bar: 3.0, nu: 1.5 };
        let scaled = |n: usize| n as f64 * nominal_stability(n, &c).unwrap().epsilon_n;
        assert!((scaled(1000) - scaled(2000)).abs() / scaled(2000) < 0.01);
    }

    #[test]
    fn p_examples() {
        assert!(close(p_growth(3, Lipschitz { state: 0.0, input: 1.0 }), 6.0));
        for n in 1..10 {
            assert!(close(p_growth(n, Lipschitz { state: 1.0, input: 0.0 }), (n * (n + 1) / 2) as f64));
        }
    }

    #[test]
    fn alpha_unit_example() {
        let eds = EdsConstants::new(1.0, 0.0).unwrap();
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let a = alpha_star(&unit_cost(), &[1.0], eds, 1.0, 0.0, &law, FormulaVariant::Printed).unwrap();
        assert!(close(a.second_order, 4.0));
        // 2·2·1·((4/2)·1 + (4/2)·1) = 16.
        assert!(close(a.first_order, 4.0));
        assert_eq!(a.eval(0.0), 0.0);
    }

    #[test]
    fn alpha_variant_squares_gain() {
        let eds = EdsConstants::new(3.0, 0.2).unwrap();
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let cost = CostConstants { m_lx: 1.0, l_lx: 3.0, m_lu: 0.5, l_lu: 2.0 };
        let printed = alpha_star(&cost, &[1.0, 0.5], eds, 2.0, 0.1, &law, FormulaVariant::Printed).unwrap();
        let corrected = alpha_star(&cost, &[1.0, 0.5], eds, 2.0, 0.1, &law, FormulaVariant::Corrected).unwrap();
        assert_eq!(printed.second_order, corrected.second_order);
        assert!(corrected.first_order > printed.first_order);
    }

    #[test]
    fn alpha_second_order_grows_like_l_to_2n() {
        let eds = EdsConstants::new(1.0, 0.5).unwrap();
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let lip = Lipschitz { state: 1.2, input: 0.5 };
        let coeff = |n: usize| {
            alpha_star(&unit_cost(), &gamma_sequence(n, lip, eds), eds, 1.0, 0.0, &law, FormulaVariant::Printed)
                .unwrap()
                .second_order
        };
        let ratio = coeff(61) / coeff(60);
        assert!((ratio - 1.44).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn omega_examples() {
        let eds = EdsConstants::new(1.0, 0.0).unwrap();
        assert!(close(omega_bar(0.1, 1.0, BallRegion::Inside, eds, 5.0).unwrap(), 0.2));
        assert!(close(omega_bar(0.1, 2.0, BallRegion::Outside, eds, 1.0).unwrap(), 0.4));
        assert_eq!(omega_bar(0.0, 2.0, BallRegion::Outside, eds, 1.0).unwrap(), 0.0);
        assert_eq!(omega_bar(0.0, 2.0, BallRegion::Inside, eds, 1.0).unwrap(), 0.0);
        assert_eq!(omega_bar(0.1, 2.0, BallRegion::Outside, eds, 0.0), Err(BoundsError::ZeroRadius));
    }

    fn terms<'a>(cost: &'a CostConstants, law: &'a MismatchLipschitz) -> PerturbationTerms<'a> {
        PerturbationTerms { horizon: 1, cost, p: p_growth(1, Lipschitz { state: 0.9, input: 0.4 }), gamma_bar: 1.0, law }
    }

    #[test]
    fn beta_general_vanishes_at_origin_and_zero_mismatch() {
        let cost = unit_cost();
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let eds = EdsConstants::new(1.0, 0.3).unwrap();
        let b = beta_general(terms(&cost, &law), 0.0, 0.0, eds, 0.1, FormulaVariant::Printed).unwrap();
        assert_eq!((b.pi_second, b.pi_first, b.zeta_first), (0.0, 0.0, 0.0));
        assert_eq!(b.region, BallRegion::Inside);
        assert_eq!(b.eval(0.05).unwrap(), 0.0);
        let b = beta_general(terms(&cost, &law), 2.0, 4.0, eds, 0.1, FormulaVariant::Printed).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), 0.0);
        assert!(b.eval(0.01).unwrap() > 0.0);
    }

    #[test]
    fn beta_general_unit_constants() {
        let cost = unit_cost();
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let eds = EdsConstants::new(1.0, 0.0).unwrap();
        let t = PerturbationTerms { horizon: 1, cost: &cost, p: 2.0, gamma_bar: 1.0, law: &law };
        let b = beta_general(t, 1.0, 1.0, eds, 0.5, FormulaVariant::Printed).unwrap();
        // c_m = 2, P = 2 (L̄_fu = 1, N = 1).
        assert!(close(b.pi_second, 4.0));
        assert!(close(b.pi_first, 4.0));
        assert!(close(b.zeta_second, 3.0));
        assert!(close(b.zeta_first, 2.0f64.sqrt() * (2.0f64.sqrt() * 2.0f64.sqrt() + 2.0f64.sqrt())));
        // Outside branch: ω̄ = 2·1/(1·0.5)·0.1·1 = 0.4.
        assert!(close(b.eval(0.1).unwrap(), 4.0 * 0.01 + 0.4 + 3.0 * 0.16 + b.zeta_first * 0.4));
    }

    #[test]
    fn beta_star_variants() {
        let cost = unit_cost();
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let t = PerturbationTerms { horizon: 1, cost: &cost, p: 2.0, gamma_bar: 1.0, law: &law };
        let b = beta_star(t, 1.0, None, FormulaVariant::Corrected).unwrap();
        assert!(close(b.pi_second, 4.0));
        assert!(close(b.pi_first, 4.0));
        assert!(close(b.zeta_second, 3.0));
        assert!(close(b.zeta_first, 2.0 * (2.0f64.sqrt() + 1.0)));
        assert_eq!(b.eval(0.0), 0.0);
        let printed = beta_star(t, 1.0, Some(0.5), FormulaVariant::Printed).unwrap();
        assert!(close(printed.pi_second, 2.0));
        assert_eq!(beta_star(t, 1.0, None, FormulaVariant::Printed), Err(BoundsError::MissingPoint));
    }

    #[test]
    fn stability_examples() {
        let alpha = AlphaStar { second_order: 1.0, first_order: 0.0, law: MismatchLipschitz::Linear { slope: 1.0 } };
        let s = stability_check(0.25, &alpha, 0.0);
        assert!(s.holds && close(s.margin, 0.75));
        let s = stability_check(0.25, &alpha, 1.0);
        assert!(!s.holds && close(s.margin, -0.25));
    }

    #[test]
    fn max_mismatch_examples() {
        let law = MismatchLipschitz::Linear { slope: 1.0 };
        let alpha = AlphaStar { second_order: 1.0, first_order: 0.0, law: law.clone() };
        assert!(close(max_mismatch(0.0, &alpha).unwrap(), 1.0));
        let alpha = AlphaStar { second_order: 0.0, first_order: 2.0, law: law.clone() };
        assert!(close(max_mismatch(0.5, &alpha).unwrap(), 0.25));
        let alpha = AlphaStar { second_order: 0.0, first_order: 0.0, law: law.clone() };
        assert_eq!(max_mismatch(0.5, &alpha).unwrap(), f64::INFINITY);
        assert_eq!(max_mismatch(1.0, &alpha), Err(BoundsError::NominalUnstable(1.0)));
        let alpha = AlphaStar { second_order: 37.0, first_order: 5.5, law: MismatchLipschitz::Linear { slope: 0.7 } };
        let d = max_mismatch(0.3, &alpha).unwrap();
        assert!((0.3 + alpha.eval(d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_examples() {
        assert!(close(competitive_ratio(0.5, 0.1, 0.2, 4.0).unwrap(), 3.0));
        assert!(close(competitive_ratio(0.2, 0.0, 0.0, 4.0).unwrap(), 1.0 / 0.8));
        assert!(close(competitive_ratio(0.2, 0.1, 10.0, 4.0).unwrap(), 5.0 / 0.7));
        assert!(matches!(competitive_ratio(0.5, 0.5, 0.0, 1.0), Err(BoundsError::Unstable { .. })));
    }

    #[test]
    fn classes() {
        assert_eq!(asymptotic_class(0.5), AsymptoticClass::Contractive);
        assert_eq!(asymptotic_class(1.0), AsymptoticClass::Marginal);
        assert_eq!(asymptotic_class(1.005), AsymptoticClass::Expansive);
        assert_eq!(AsymptoticClass::Marginal.p_growth(), "O(N^3)");
    }

    fn inputs(nu: f64) -> BoundInputs {
        BoundInputs {
            cost: unit_cost(),
            lipschitz: Lipschitz { state: 0.9, input: 0.5 },
            eds: EdsConstants::new(1.0, 0.5).unwrap(),
            gammas: vec![1.0, 1.5, 2.0],
            gamma_bar: 2.0,
            nu,
            law: MismatchLipschitz::Linear { slope: 1.0 },
            r0: 0.01,
            eta_bar_star: 1.0,
            variants: BoundVariants::default(),
            point: None,
        }
    }

    #[test]
    fn zero_mismatch_reduces_to_nominal_ratio() {
        let b = inputs(1.0).at_horizon(8).unwrap();
        assert_eq!(b.ratio(0.0).unwrap(), 1.0 / (1.0 - b.epsilon_n()));
    }

    #[test]
    fn optimal_horizon_zero_mismatch_takes_upper_end() {
        let choice = optimal_horizon(&inputs(1.0), 0.0, 5..=20).unwrap();
        assert_eq!(choice.horizon, 20);
        assert_eq!(choice.table.len(), 16);
        let single = optimal_horizon(&inputs(1.0), 0.0, 7..=7).unwrap();
        assert_eq!(single.horizon, 7);
    }

    #[test]
    fn optimal_horizon_prefers_short_horizons_for_large_mismatch() {
        let mut i = inputs(1.0);
        i.lipschitz = Lipschitz { state: 1.05, input: 0.5 };
        let small = optimal_horizon(&i, 1e-6, 2..=60).unwrap();
        let large = optimal_horizon(&i, 1e-3, 2..=60).unwrap();
        assert!(large.horizon < small.horizon, "{} vs {}", large.horizon, small.horizon);
    }

    #[test]
    fn optimal_horizon_without_stable_candidate() {
        let err = optimal_horizon(&inputs(1.0), 10.0, 3..=5).unwrap_err();
        assert_eq!(err, BoundsError::NoStableHorizon { lo: 3, hi: 5 });
    }

    #[test]
    fn unbounded_nu_skips_unit_horizon() {
        let choice = optimal_horizon(&inputs(f64::INFINITY), 0.0, 1..=30).unwrap();
        assert_eq!(choice.table[0], (1, None));
        assert_eq!(choice.horizon, 30);
    }
}
