//! Finite-horizon input-constrained optimal control without terminal cost:
//!
//! ```text
//! V_N(x; θ) = min_u Σ_{k<N} ℓ(ξ_k, u_k) + ℓ_x(ξ_N),   ξ_{k+1} = f(ξ_k, u_k; θ),  u_k ∈ U
//! ```

mod gradient;
mod lq;

pub use gradient::reduced_hessian_min_eigenvalue;
pub use lq::{solve_lq_constrained, solve_lq_unconstrained, LqBatch};

use crate::cost::{stage_cost, StageCost};
use crate::model::{check_dim, InputConstraint, ModelError, ParametricModel};
use crate::qp::QpError;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("cost dimensions ({cost_n}, {cost_m}) do not match the model ({model_n}, {model_m})")]
    CostDimension { cost_n: usize, cost_m: usize, model_n: usize, model_m: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("warm start has length {got}, expected {expected}")]
    WarmStart { expected: usize, got: usize },
    #[error("the quadratic-program path needs a linear model and a quadratic cost")]
    NotLinearQuadratic,
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// One instance of the finite-horizon problem, predicting with `theta`.
#[derive(Debug, Clone, Copy)]
pub struct OcpProblem<'a> {
    pub model: &'a dyn ParametricModel,
    pub cost: &'a dyn StageCost,
    pub constraint: &'a InputConstraint,
    pub horizon: usize,
    pub theta: &'a [f64],
}

impl<'a> OcpProblem<'a> {
    pub fn new(
        model: &'a dyn ParametricModel,
        cost: &'a dyn StageCost,
        constraint: &'a InputConstraint,
        horizon: usize,
        theta: &'a [f64],
    ) -> Result<Self, OcpError> {
        if horizon == 0 {
            return Err(OcpError::ZeroHorizon);
        }
        if cost.state_dim() != model.state_dim() || cost.input_dim() != model.input_dim() {
            return Err(OcpError::CostDimension {
                cost_n: cost.state_dim(),
                cost_m: cost.input_dim(),
                model_n: model.state_dim(),
                model_m: model.input_dim(),
            });
        }
        check_dim("constraint", model.input_dim(), constraint.dim())?;
        check_dim("parameter", model.param_dim(), theta.len())?;
        Ok(Self { model, cost, constraint, horizon, theta })
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self, OcpError> {
        Self::new(self.model, self.cost, self.constraint, horizon, self.theta)
    }

    pub fn with_theta<'b>(&self, theta: &'b [f64]) -> Result<OcpProblem<'b>, OcpError>
    where
        'a: 'b,
    {
        OcpProblem::new(self.model, self.cost, self.constraint, self.horizon, theta)
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    /// Simulates the stacked input sequence from `x`; returns stacked states and the cost.
    pub fn rollout(&self, x: &[f64], inputs: &[f64], states: &mut Vec<f64>) -> f64 {
        let (n, m) = (self.state_dim(), self.input_dim());
        states.resize((self.horizon + 1) * n, 0.0);
        states[..n].copy_from_slice(x);
        let mut value = 0.0;
        for k in 0..self.horizon {
            let (head, tail) = states.split_at_mut((k + 1) * n);
            let xk = &head[k * n..];
            let uk = &inputs[k * m..(k + 1) * m];
            value += stage_cost(self.cost, xk, uk);
            self.model.eval(xk, uk, self.theta, &mut tail[..n]);
        }
        value + self.cost.state_cost(&states[self.horizon * n..])
    }

    pub fn check_state(&self, x: &[f64]) -> Result<(), OcpError> {
        check_dim("state", self.state_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OcpError::NonFinite("initial state"));
        }
        Ok(())
    }

    fn is_linear_quadratic(&self) -> bool {
        self.model.as_linear().is_some() && self.cost.quadratic_weights().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Quadratic program for linear models with quadratic cost, projected gradient otherwise.
    Auto,
    ProjectedGradient,
    QuadraticProgram,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub method: SolverMethod,
    /// Projected-gradient residual `‖P(u − ∇J) − u‖` at termination.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub contraction: f64,
    /// Additional starts from scaled random feasible sequences.
    pub restarts: usize,
    pub restart_seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            tolerance: 1e-8,
            max_iterations: 5000,
            armijo: 1e-4,
            contraction: 0.5,
            restarts: 0,
            restart_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub method: SolverMethod,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    pub converged: bool,
    /// KKT residual of the quadratic-program path.
    pub kkt_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub value: f64,
    pub diagnostics: SolverDiagnostics,
}

impl OcpSolution {
    pub(crate) fn from_stacked(
        problem: &OcpProblem,
        x: &[f64],
        inputs: &[f64],
        diagnostics: SolverDiagnostics,
    ) -> Result<Self, OcpError> {
        let (n, m) = (problem.state_dim(), problem.input_dim());
        let mut states = Vec::new();
        let value = problem.rollout(x, inputs, &mut states);
        if !value.is_finite() || states.iter().any(|v| !v.is_finite()) {
            return Err(OcpError::NonFinite("dynamics"));
        }
        Ok(Self {
            inputs: inputs.chunks(m).map(DVector::from_column_slice).collect(),
            states: states.chunks(n).map(DVector::from_column_slice).collect(),
            value,
            diagnostics,
        })
    }

    pub fn first_input(&self) -> &DVector<f64> {
        &self.inputs[0]
    }

    pub fn stacked_inputs(&self) -> Vec<f64> {
        self.inputs.iter().flat_map(|u| u.iter().copied()).collect()
    }

    /// Warm start for the next closed-loop step: shift by one, repeat the last input.
    pub fn shifted_inputs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.inputs.iter().skip(1).flat_map(|u| u.iter().copied()).collect();
        out.extend(self.inputs.last().expect("horizon >= 1").iter());
        out
    }
}

/// Reentrant solver front-end; holds settings only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Solver {
    pub settings: SolverSettings,
}

impl Solver {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, problem: &OcpProblem, x: &[f64], warm_start: Option<&[f64]>) -> Result<OcpSolution, OcpError> {
        problem.check_state(x)?;
        let use_qp = match self.settings.method {
            SolverMethod::Auto => problem.is_linear_quadratic(),
            SolverMethod::QuadraticProgram => true,
            SolverMethod::ProjectedGradient => false,
        };
        if use_qp {
            lq::solve_problem_qp(problem, x)
        } else {
            if let Some(w) = warm_start {
                let expected = problem.horizon * problem.input_dim();
                if w.len() != expected {
                    return Err(OcpError::WarmStart { expected, got: w.len() });
                }
            }
            gradient::solve(problem, x, warm_start, &self.settings)
        }
    }
}

/// Solves with default settings.
pub fn solve(problem: &OcpProblem, x: &[f64]) -> Result<OcpSolution, OcpError> {
    Solver::default().solve(problem, x, None)
}

/// `μ_N(x) = u*_0(x)`.
pub fn policy(problem: &OcpProblem, x: &[f64]) -> Result<DVector<f64>, OcpError> {
    Ok(solve(problem, x)?.inputs.swap_remove(0))
}

/// `V_N(x; θ)`.
pub fn value(problem: &OcpProblem, x: &[f64]) -> Result<f64, OcpError> {
    Ok(solve(problem, x)?.value)
}
