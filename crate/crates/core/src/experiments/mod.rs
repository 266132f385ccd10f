//! Closed-loop CE-MPC simulation, infinite-horizon cost estimates, Monte-Carlo
//! sweeps and empirical constant estimation.

mod constants;
mod output;
mod sweep;

pub use constants::{
    estimate_empirical_constants, lq_constants, ConstantsBudget, EdsFit, EmpiricalConstants, GammaEstimate, LqBudget,
    LqConstants, SensitivityEstimate,
};
pub use output::{aggregates_csv, plot_script, records_csv, write_sweep, RunHeader};
pub use sweep::{
    best_horizon, linear_envelope, sweep_competitive_ratio, sweep_horizon, sweep_input_perturbation,
    sweep_scalable_perturbation, Aggregate, LinearEnvelope, ScenarioRecord, SweepConfig, SweepKind, SweepResult,
};

use crate::bounds::BoundsError;
use crate::cost::{stage_cost, CostError, StageCost};
use crate::linalg::norm;
use crate::model::{InputConstraint, ModelError, ParameterSpec, ParametricModel};
use crate::ocp::{OcpError, OcpProblem, OcpSolution, Solver};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("{failed} of {total} scenarios failed (limit {limit:.0}%)")]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
    #[error("the long-horizon oracle policy did not regulate the state (final norm {0})")]
    OracleUnstable(f64),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(&'static str),
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Model, cost, input set, nominal parameter and solver shared by every scenario.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a dyn ParametricModel,
    pub cost: &'a dyn StageCost,
    pub constraint: &'a InputConstraint,
    pub spec: &'a ParameterSpec,
    pub solver: Solver,
}

impl<'a> Setup<'a> {
    pub fn problem<'t>(&self, horizon: usize, theta: &'t [f64]) -> Result<OcpProblem<'t>, OcpError>
    where
        'a: 't,
    {
        OcpProblem::new(self.model, self.cost, self.constraint, horizon, theta)
    }

    pub fn solve(&self, horizon: usize, theta: &[f64], x: &[f64]) -> Result<OcpSolution, OcpError> {
        self.solver.solve(&self.problem(horizon, theta)?, x, None)
    }
}

/// Maps `f` over `0..n`, in parallel when asked; the output order is always by index.
pub fn run_indexed<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopOptions {
    pub steps: usize,
    /// Stop once `‖x_t‖ ≤ stop_tol`.
    pub stop_tol: f64,
    /// Warm-start each solve from the shifted previous solution.
    pub warm_start: bool,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        Self { steps: 500, stop_tol: 1e-6, warm_start: true }
    }
}

/// `x_{t+1} = f(x_t, μ_{N,θ̂}(x_t); θ*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    /// `V_N(x_t; θ̂)` at every solved step.
    pub planned_values: Vec<f64>,
    /// `J_T = Σ ℓ(x_t, u_t)`.
    pub cost: f64,
    pub terminated_early: bool,
    /// Solver error that stopped the simulation, if any.
    pub failure: Option<String>,
    pub unconverged_solves: usize,
    pub wall_time: Duration,
}

impl ClosedLoopTrace {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trace holds the initial state")
    }

    /// Largest deviation between the stored states and a re-simulation of the inputs.
    pub fn resimulation_residual(&self, model: &dyn ParametricModel, theta_true: &[f64]) -> f64 {
        let mut next = vec![0.0; model.state_dim()];
        self.inputs
            .iter()
            .enumerate()
            .map(|(t, u)| {
                model.eval(&self.states[t], u, theta_true, &mut next);
                crate::linalg::distance(&next, &self.states[t + 1])
            })
            .fold(0.0, f64::max)
    }
}

pub fn simulate_closed_loop(
    setup: &Setup,
    theta_true: &[f64],
    theta_hat: &[f64],
    horizon: usize,
    x0: &[f64],
    options: ClosedLoopOptions,
) -> Result<ClosedLoopTrace, ExperimentError> {
    if options.steps == 0 {
        return Err(ExperimentError::Config("closed loop needs at least one step".into()));
    }
    let start = Instant::now();
    let problem = setup.problem(horizon, theta_hat)?;
    problem.check_state(x0)?;
    crate::model::check_dim("parameter", setup.model.param_dim(), theta_true.len())?;
    let mut trace = ClosedLoopTrace {
        states: vec![x0.to_vec()],
        inputs: Vec::new(),
        stage_costs: Vec::new(),
        planned_values: Vec::new(),
        cost: 0.0,
        terminated_early: false,
        failure: None,
        unconverged_solves: 0,
        wall_time: Duration::ZERO,
    };
    let mut warm: Option<Vec<f64>> = None;
    let mut next = vec![0.0; setup.model.state_dim()];
    for _ in 0..options.steps {
        let x = trace.final_state().to_vec();
        if norm(&x) <= options.stop_tol {
            trace.terminated_early = true;
            break;
        }
        let solution = match setup.solver.solve(&problem, &x, warm.as_deref()) {
            Ok(s) => s,
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        if !solution.diagnostics.converged {
            trace.unconverged_solves += 1;
        }
        let u = solution.first_input().as_slice().to_vec();
        let l = stage_cost(setup.cost, &x, &u);
        setup.model.eval(&x, &u, theta_true, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            trace.failure = Some("non-finite state".into());
            break;
        }
        trace.cost += l;
        trace.stage_costs.push(l);
        trace.planned_values.push(solution.value);
        trace.inputs.push(u);
        trace.states.push(next.clone());
        if options.warm_start {
            warm = Some(solution.shifted_inputs());
        }
    }
    if !trace.terminated_early && trace.failure.is_none() && norm(trace.final_state()) <= options.stop_tol {
        trace.terminated_early = true;
    }
    trace.wall_time = start.elapsed();
    Ok(trace)
}

/// Window of trailing stage costs used for the geometric tail fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPolicy {
    pub window: usize,
}

impl Default for TailPolicy {
    fn default() -> Self {
        Self { window: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// `J_T`; the tail is never added.
    pub cost: f64,
    /// Geometric extrapolation of the remaining cost; `+∞` when the tail does not decay.
    pub tail: f64,
    pub decay_ratio: f64,
}

pub fn estimate_infinite_cost(trace: &ClosedLoopTrace, policy: TailPolicy) -> CostEstimate {
    let c = &trace.stage_costs;
    let estimate = |tail, decay_ratio| CostEstimate { cost: trace.cost, tail, decay_ratio };
    let Some(&last) = c.last() else {
        let tail = if norm(trace.final_state()) == 0.0 { 0.0 } else { f64::INFINITY };
        return estimate(tail, 0.0);
    };
    if last == 0.0 {
        return estimate(0.0, 0.0);
    }
    let window = policy.window.max(1).min(c.len() - 1);
    if window == 0 {
        return estimate(f64::INFINITY, f64::INFINITY);
    }
    let first = c[c.len() - 1 - window];
    if first <= 0.0 {
        return estimate(f64::INFINITY, f64::INFINITY);
    }
    let r = (last / first).powf(1.0 / window as f64);
    if r >= 1.0 || !r.is_finite() {
        return estimate(f64::INFINITY, r);
    }
    estimate(last * r / (1.0 - r), r)
}

/// Bracket `lower ≤ V_∞(x; θ*) ≤ upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    /// `V_{N_long}(x; θ*)`.
    pub lower: f64,
    /// Closed-loop cost of `μ_{N_long,θ*}` on the true model, tail included.
    pub upper: f64,
    pub horizon: usize,
}

pub fn estimate_oracle_value(
    setup: &Setup,
    theta_true: &[f64],
    x: &[f64],
    long_horizon: usize,
    options: ClosedLoopOptions,
) -> Result<OracleValue, ExperimentError> {
    if norm(x) == 0.0 {
        return Ok(OracleValue { lower: 0.0, upper: 0.0, horizon: long_horizon });
    }
    let lower = setup.solve(long_horizon, theta_true, x)?.value;
    let trace = simulate_closed_loop(setup, theta_true, theta_true, long_horizon, x, options)?;
    if let Some(f) = trace.failure {
        return Err(ExperimentError::Config(format!("oracle closed loop failed: {f}")));
    }
    let est = estimate_infinite_cost(&trace, TailPolicy::default());
    if !est.tail.is_finite() {
        return Err(ExperimentError::OracleUnstable(norm(trace.final_state())));
    }
    Ok(OracleValue { lower, upper: est.cost + est.tail, horizon: long_horizon })
}
