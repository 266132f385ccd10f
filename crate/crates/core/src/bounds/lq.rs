//! Constants of the constrained linear-quadratic specialization.

use super::{eta_bar_star, BoundsError, EdsConstants};
use crate::cost::QuadraticCost;
use crate::linalg::{inverse_sqrt_spd, spectral_norm, symmetric_extremes};
use crate::model::{LinearModel, MismatchLipschitz, ParameterSpec};
use crate::ocp::LqBatch;
use crate::sampling::{seeded_rng, unit_direction};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Decay ratios tried by [`CertifiedSensitivity::best_eds`].
pub const DECAY_GRID: [f64; 19] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95,
];

/// Parameters on the sphere `‖θ − θ̂‖ = ε` (±axes first, then random directions),
/// alternating with points at half radius.
pub fn parameter_samples(spec: &ParameterSpec, random: usize, seed: u64) -> Vec<Vec<f64>> {
    let eps = spec.epsilon();
    if eps == 0.0 {
        return Vec::new();
    }
    let dim = spec.dim();
    let mut out = Vec::with_capacity(2 * dim + random);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[i] = sign;
            out.push(spec.displaced(&d, eps));
        }
    }
    let mut rng = seeded_rng(seed);
    for j in 0..random {
        let d = unit_direction(&mut rng, dim);
        let scale = if j % 2 == 0 { eps } else { 0.5 * eps };
        out.push(spec.displaced(d.as_slice(), scale));
    }
    out
}

fn batch(model: &LinearModel, cost: &QuadraticCost, horizon: usize, theta: &[f64]) -> Result<LqBatch, BoundsError> {
    let (a, b) = model.matrices(theta);
    LqBatch::new(&a, &b, cost.q(), cost.r(), horizon).map_err(|e| BoundsError::Lq(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqSpecialization {
    pub e_ab: f64,
    pub law: MismatchLipschitz,
    /// `ε*_K`.
    pub epsilon_k: f64,
    /// Radius of the unconstrained region Ω.
    pub r_lq: f64,
    /// Sampled Lipschitz constant of the gains in θ.
    pub gain_lipschitz: f64,
    pub omega_lq: f64,
    pub eta_bar_star: f64,
    pub parameter_samples: usize,
}

/// Sampled constants of the LQ specialization; `eds` supplies the decay pair.
pub fn lq_specialize(
    model: &LinearModel,
    cost: &QuadraticCost,
    e_u: &DMatrix<f64>,
    horizon: usize,
    spec: &ParameterSpec,
    eds: EdsConstants,
    random_samples: usize,
    seed: u64,
) -> Result<LqSpecialization, BoundsError> {
    let (q_min, _) = symmetric_extremes(cost.q());
    if q_min <= 0.0 {
        return Err(BoundsError::Lq("Q is singular".into()));
    }
    let q_inv = cost.q().clone().try_inverse().ok_or_else(|| BoundsError::Lq("Q is singular".into()))?;
    let theta_hat = spec.theta_hat();
    let (a_hat, b_hat) = model.matrices(theta_hat);
    let nominal = batch(model, cost, horizon, theta_hat)?;
    let thetas = parameter_samples(spec, random_samples, seed);

    let mut e_ab: f64 = 0.0;
    let mut gain_lipschitz: f64 = 0.0;
    let mut epsilon_k = f64::INFINITY;
    let mut visit = |b: &LqBatch| {
        for k in 0..horizon {
            let rows = e_u * b.stage_gain(k);
            for i in 0..rows.nrows() {
                let v = rows.row(i).transpose();
                let weight = (v.transpose() * &q_inv * &v)[(0, 0)];
                if weight > 0.0 {
                    epsilon_k = epsilon_k.min(1.0 / weight);
                }
            }
        }
    };
    visit(&nominal);
    for theta in &thetas {
        let delta = spec.mismatch(theta);
        let (a, b) = model.matrices(theta);
        let diff = spectral_norm(&(&a - &a_hat)).max(spectral_norm(&(&b - &b_hat)));
        let sampled = batch(model, cost, horizon, theta)?;
        let gain_diff = (0..horizon)
            .map(|k| spectral_norm(&(sampled.stage_gain(k) - nominal.stage_gain(k))))
            .fold(0.0, f64::max);
        visit(&sampled);
        if delta > 0.0 {
            e_ab = e_ab.max(diff / delta);
            gain_lipschitz = gain_lipschitz.max(gain_diff / delta);
        }
    }
    let r_lq = (epsilon_k / q_min).sqrt();
    let omega_lq = gain_lipschitz.min(2.0 / ((1.0 - eds.decay) * r_lq));
    Ok(LqSpecialization {
        e_ab,
        law: MismatchLipschitz::Linear { slope: e_ab },
        epsilon_k,
        r_lq,
        gain_lipschitz,
        omega_lq,
        eta_bar_star: eta_bar_star(eds, r_lq, gain_lipschitz),
        parameter_samples: thetas.len(),
    })
}

/// Sensitivity gains of the condensed problem `min uᵀHu + 2uᵀFx` over `u_k ∈ U`.
///
/// `state_gain` bounds `‖u*(x′) − u*(x″)‖/‖x′ − x″‖` through H-norm nonexpansiveness
/// of the projection; `parameter_gain` bounds `‖u*(x; θ) − u*(x; θ̂)‖/(δ‖x‖)` through
/// strong monotonicity of the optimality conditions. Both are maxima over sampled θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSensitivity {
    pub horizon: usize,
    pub state_gain: f64,
    pub parameter_gain: f64,
    pub parameter_samples: usize,
}

fn state_gain(b: &LqBatch) -> f64 {
    let (h_min, _) = symmetric_extremes(&b.hessian);
    spectral_norm(&(inverse_sqrt_spd(&b.hessian) * &b.coupling)) / h_min.sqrt()
}

pub fn certify_lq_sensitivity(
    model: &LinearModel,
    cost: &QuadraticCost,
    horizon: usize,
    spec: &ParameterSpec,
    random_samples: usize,
    seed: u64,
) -> Result<CertifiedSensitivity, BoundsError> {
    let nominal = batch(model, cost, horizon, spec.theta_hat())?;
    let kappa_hat = state_gain(&nominal);
    let thetas = parameter_samples(spec, random_samples, seed);
    let mut kappa = kappa_hat;
    let mut eta: f64 = 0.0;
    for theta in &thetas {
        let b = batch(model, cost, horizon, theta)?;
        kappa = kappa.max(state_gain(&b));
        let delta = spec.mismatch(theta);
        if delta > 0.0 {
            let (h_min, _) = symmetric_extremes(&b.hessian);
            let dh = spectral_norm(&(&b.hessian - &nominal.hessian));
            let df = spectral_norm(&(&b.coupling - &nominal.coupling));
            eta = eta.max((dh * kappa_hat + df) / (h_min * delta));
        }
    }
    Ok(CertifiedSensitivity { horizon, state_gain: kappa, parameter_gain: eta, parameter_samples: thetas.len() })
}

impl CertifiedSensitivity {
    /// EDS pair valid for `‖x‖ ≤ state_radius` with the given decay ratio.
    pub fn eds(&self, decay: f64, state_radius: f64) -> Result<EdsConstants, BoundsError> {
        let exponent = self.horizon.saturating_sub(1) as i32;
        let from_state = self.state_gain / decay.powi(exponent);
        let from_parameter = self.parameter_gain * state_radius;
        EdsConstants::new(from_state.max(from_parameter).max(f64::MIN_POSITIVE), decay)
    }

    /// Decay ratio from [`DECAY_GRID`] minimizing `score`; ties go to the smaller ratio.
    pub fn best_eds(
        &self,
        state_radius: f64,
        score: impl Fn(EdsConstants) -> f64,
    ) -> Result<EdsConstants, BoundsError> {
        let mut best: Option<(f64, EdsConstants)> = None;
        for &decay in &DECAY_GRID {
            let eds = self.eds(decay, state_radius)?;
            let s = score(eds);
            if best.map_or(true, |(b, _)| s < b) {
                best = Some((s, eds));
            }
        }
        Ok(best.expect("grid is nonempty").1)
    }
}
