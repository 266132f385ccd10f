//! Parametric discrete-time models, the parameter ball, input constraints and
//! model-error quantities.

mod constraint;
mod linear;
mod mismatch;
mod tanh;

pub use constraint::InputConstraint;
pub use linear::LinearModel;
pub use mismatch::{
    fit_mismatch_lipschitz, max_one_step_deviation, DeviationEstimate, FitBudget, MismatchFit,
    MismatchLipschitz, MismatchSource,
};
pub use tanh::TanhModel;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter specification: {0}")]
    Spec(String),
    #[error("invalid input constraint: {0}")]
    Constraint(String),
    #[error("invalid model definition: {0}")]
    Definition(String),
    #[error("every sampled state/input pair was zero; the mismatch envelope is undefined")]
    DegenerateSampling,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Dimension { what, expected, got })
    }
}

/// Nominal parameter and mismatch radius; the parameter ball is `‖θ − θ̂‖ ≤ ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    theta_hat: Vec<f64>,
    epsilon: f64,
}

impl ParameterSpec {
    pub fn new(theta_hat: Vec<f64>, epsilon: f64) -> Result<Self, ModelError> {
        if theta_hat.is_empty() {
            return Err(ModelError::Spec("parameter vector is empty".into()));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(ModelError::Spec(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if theta_hat.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::NonFinite("theta_hat"));
        }
        Ok(Self { theta_hat, epsilon })
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ModelError> {
        Self::new(self.theta_hat.clone(), epsilon)
    }

    /// `δ(θ) = ‖θ − θ̂‖`.
    pub fn mismatch(&self, theta: &[f64]) -> f64 {
        crate::linalg::distance(theta, &self.theta_hat)
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.mismatch(theta) <= self.epsilon * (1.0 + 1e-12) + 1e-15
    }

    /// `θ̂ + scale·direction`.
    pub fn displaced(&self, direction: &[f64], scale: f64) -> Vec<f64> {
        self.theta_hat.iter().zip(direction).map(|(t, d)| t + scale * d).collect()
    }
}

/// Lipschitz constants of the dynamics in the state and the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lipschitz {
    pub state: f64,
    pub input: f64,
}

/// Dynamics `x⁺ = f(x, u; θ)` with `f(0, 0; θ) = 0` for every θ.
///
/// The hot-path methods work on slices so solvers can run without allocating.
pub trait ParametricModel: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Writes `f(x, u; θ)` into `next`.
    fn eval(&self, x: &[f64], u: &[f64], theta: &[f64], next: &mut [f64]);

    /// `(∂f/∂x, ∂f/∂u)`.
    fn jacobians(&self, x: &[f64], u: &[f64], theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);

    fn jacobian_theta(&self, x: &[f64], u: &[f64], theta: &[f64]) -> DMatrix<f64>;

    /// Vector-Jacobian products `gx = (∂f/∂x)ᵀλ`, `gu = (∂f/∂u)ᵀλ`.
    fn adjoint(
        &self,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
        lambda: &[f64],
        gx: &mut [f64],
        gu: &mut [f64],
    ) {
        let (jx, ju) = self.jacobians(x, u, theta);
        let l = DVector::from_column_slice(lambda);
        gx.copy_from_slice((jx.transpose() * &l).as_slice());
        gu.copy_from_slice((ju.transpose() * &l).as_slice());
    }

    /// Lipschitz constants of `f(·, ·; θ̂)`.
    fn lipschitz_nominal(&self, theta_hat: &[f64]) -> Lipschitz;

    /// Lipschitz constants valid uniformly over the parameter ball.
    fn lipschitz_uniform(&self, spec: &ParameterSpec) -> Lipschitz;

    /// Closed-form mismatch law, when one is known.
    fn analytic_mismatch(&self) -> Option<MismatchLipschitz> {
        None
    }

    fn as_linear(&self) -> Option<&LinearModel> {
        None
    }
}

fn check_model_dims(
    model: &dyn ParametricModel,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
) -> Result<(), ModelError> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    check_dim("parameter", model.param_dim(), theta.len())
}

/// `f(x, u; θ)` with dimension checks.
pub fn step(
    model: &dyn ParametricModel,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
) -> Result<DVector<f64>, ModelError> {
    check_model_dims(model, x, u, theta)?;
    let mut next = DVector::zeros(model.state_dim());
    model.eval(x, u, theta, next.as_mut_slice());
    if next.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("dynamics"));
    }
    Ok(next)
}

/// As [`step`], warning when θ lies outside the parameter ball.
pub fn step_in_ball(
    model: &dyn ParametricModel,
    spec: &ParameterSpec,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
) -> Result<DVector<f64>, ModelError> {
    if theta.len() == spec.dim() && !spec.contains(theta) {
        log::warn!(
            "parameter outside the ball: mismatch {} > epsilon {}",
            spec.mismatch(theta),
            spec.epsilon()
        );
    }
    step(model, x, u, theta)
}

/// `Δf = f(x, u; θ) − f(x, u; θ̂)`.
pub fn model_error(
    model: &dyn ParametricModel,
    spec: &ParameterSpec,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
) -> Result<DVector<f64>, ModelError> {
    let a = step(model, x, u, theta)?;
    let b = step(model, x, u, spec.theta_hat())?;
    Ok(a - b)
}
