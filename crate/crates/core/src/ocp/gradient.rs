//! Single-shooting projected gradient with spectral step and backtracking.

use super::{OcpError, OcpProblem, OcpSolution, SolverDiagnostics, SolverMethod, SolverSettings};
use crate::linalg::norm;
use crate::sampling::{scenario_seed, seeded_rng};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

struct Workspace {
    states: Vec<f64>,
    trial_states: Vec<f64>,
    lambda: Vec<f64>,
    lambda_next: Vec<f64>,
    grad_x: Vec<f64>,
    grad_u: Vec<f64>,
    cost_grad: Vec<f64>,
}

impl Workspace {
    fn new(problem: &OcpProblem) -> Self {
        let (n, m, h) = (problem.state_dim(), problem.input_dim(), problem.horizon);
        Self {
            states: vec![0.0; (h + 1) * n],
            trial_states: vec![0.0; (h + 1) * n],
            lambda: vec![0.0; n],
            lambda_next: vec![0.0; n],
            grad_x: vec![0.0; n],
            grad_u: vec![0.0; m],
            cost_grad: vec![0.0; n.max(m)],
        }
    }
}

/// Adjoint gradient of the shooting objective; `states` must hold the rollout of `inputs`.
fn gradient(problem: &OcpProblem, inputs: &[f64], ws: &mut Workspace, out: &mut [f64]) {
    let (n, m, h) = (problem.state_dim(), problem.input_dim(), problem.horizon);
    problem.cost.state_gradient(&ws.states[h * n..], &mut ws.lambda);
    for k in (0..h).rev() {
        let xk = &ws.states[k * n..(k + 1) * n];
        let uk = &inputs[k * m..(k + 1) * m];
        problem.model.adjoint(xk, uk, problem.theta, &ws.lambda, &mut ws.grad_x, &mut ws.grad_u);
        problem.cost.input_gradient(uk, &mut ws.cost_grad[..m]);
        for i in 0..m {
            out[k * m + i] = ws.cost_grad[i] + ws.grad_u[i];
        }
        problem.cost.state_gradient(xk, &mut ws.cost_grad[..n]);
        for i in 0..n {
            ws.lambda_next[i] = ws.cost_grad[i] + ws.grad_x[i];
        }
        std::mem::swap(&mut ws.lambda, &mut ws.lambda_next);
    }
}

fn project_stacked(problem: &OcpProblem, u: &mut [f64]) {
    for chunk in u.chunks_mut(problem.input_dim()) {
        problem.constraint.project(chunk);
    }
}

fn projected_residual(problem: &OcpProblem, u: &[f64], g: &[f64], scratch: &mut [f64]) -> f64 {
    for i in 0..u.len() {
        scratch[i] = u[i] - g[i];
    }
    project_stacked(problem, scratch);
    u.iter().zip(scratch.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

struct Run {
    inputs: Vec<f64>,
    value: f64,
    residual: f64,
    iterations: usize,
}

fn descend(problem: &OcpProblem, x: &[f64], start: Vec<f64>, s: &SolverSettings) -> Result<Run, OcpError> {
    let len = start.len();
    let mut ws = Workspace::new(problem);
    let mut u = start;
    project_stacked(problem, &mut u);
    let mut value = problem.rollout(x, &u, &mut ws.states);
    if !value.is_finite() {
        return Err(OcpError::NonFinite("objective"));
    }
    let mut g = vec![0.0; len];
    gradient(problem, &u, &mut ws, &mut g);
    let mut scratch = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut g_trial = vec![0.0; len];
    let mut residual = projected_residual(problem, &u, &g, &mut scratch);
    let mut step = 1.0;
    let mut iterations = 0;
    while residual > s.tolerance && iterations < s.max_iterations {
        iterations += 1;
        let mut alpha = step;
        let accepted = loop {
            for i in 0..len {
                trial[i] = u[i] - alpha * g[i];
            }
            project_stacked(problem, &mut trial);
            let decrease: f64 = (0..len).map(|i| g[i] * (trial[i] - u[i])).sum();
            let trial_value = problem.rollout(x, &trial, &mut ws.trial_states);
            // The rounding allowance keeps the search alive once decreases reach machine precision.
            let slack = 8.0 * f64::EPSILON * value.abs();
            if trial_value.is_finite() && trial_value <= value + s.armijo * decrease + slack {
                break Some(trial_value);
            }
            alpha *= s.contraction;
            if alpha < 1e-20 {
                break None;
            }
        };
        let Some(trial_value) = accepted else { break };
        std::mem::swap(&mut ws.states, &mut ws.trial_states);
        gradient(problem, &trial, &mut ws, &mut g_trial);
        let (mut sy, mut ss) = (0.0, 0.0);
        for i in 0..len {
            let di = trial[i] - u[i];
            sy += di * (g_trial[i] - g[i]);
            ss += di * di;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { (alpha * 2.0).min(1e10) };
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        value = trial_value;
        residual = projected_residual(problem, &u, &g, &mut scratch);
    }
    Ok(Run { inputs: u, value, residual, iterations })
}

pub(super) fn solve(
    problem: &OcpProblem,
    x: &[f64],
    warm_start: Option<&[f64]>,
    settings: &SolverSettings,
) -> Result<OcpSolution, OcpError> {
    let len = problem.horizon * problem.input_dim();
    let start = warm_start.map_or_else(|| vec![0.0; len], <[f64]>::to_vec);
    let mut best = descend(problem, x, start, settings)?;
    if settings.restarts > 0 {
        let scale = problem.constraint.max_norm(1.0);
        for r in 0..settings.restarts {
            let mut rng = seeded_rng(scenario_seed(settings.restart_seed, 0x0c9, r as u64));
            let start: Vec<f64> = (0..len).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let run = descend(problem, x, start, settings)?;
            if run.value < best.value {
                best = run;
            }
        }
    }
    let diagnostics = SolverDiagnostics {
        method: SolverMethod::ProjectedGradient,
        iterations: best.iterations,
        projected_gradient_norm: best.residual,
        converged: best.residual <= settings.tolerance,
        kkt_residual: None,
    };
    OcpSolution::from_stacked(problem, x, &best.inputs, diagnostics)
}

/// Smallest eigenvalue of the finite-difference Hessian restricted to inputs away
/// from their bounds (box constraints) or to the null space of active rows
/// (polytopes). Diagnostic only; `None` when no free direction remains.
pub fn reduced_hessian_min_eigenvalue(problem: &OcpProblem, x: &[f64], solution: &OcpSolution) -> Option<f64> {
    let m = problem.input_dim();
    let u = solution.stacked_inputs();
    let len = u.len();
    let e = problem.constraint.as_rows();
    let mut active: Vec<Vec<f64>> = Vec::new();
    for k in 0..problem.horizon {
        for r in 0..e.nrows() {
            let g: f64 = (0..m).map(|i| e[(r, i)] * u[k * m + i]).sum();
            if g >= 1.0 - 1e-9 {
                let mut row = vec![0.0; len];
                for i in 0..m {
                    row[k * m + i] = e[(r, i)];
                }
                active.push(row);
            }
        }
    }
    let basis = if active.is_empty() {
        DMatrix::identity(len, len)
    } else {
        let a = DMatrix::from_fn(active.len(), len, |i, j| active[i][j]);
        let eig = SymmetricEigen::new(a.transpose() * &a);
        let cols: Vec<_> = (0..len).filter(|&i| eig.eigenvalues[i].abs() < 1e-10).collect();
        if cols.is_empty() {
            return None;
        }
        DMatrix::from_fn(len, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])])
    };
    let mut ws = Workspace::new(problem);
    let h = 1e-6 * (1.0 + norm(&u));
    let mut hess = DMatrix::zeros(len, len);
    let mut gp = vec![0.0; len];
    let mut gm = vec![0.0; len];
    for j in 0..len {
        let mut up = u.clone();
        up[j] += h;
        problem.rollout(x, &up, &mut ws.states);
        gradient(problem, &up, &mut ws, &mut gp);
        let mut um = u.clone();
        um[j] -= h;
        problem.rollout(x, &um, &mut ws.states);
        gradient(problem, &um, &mut ws, &mut gm);
        for i in 0..len {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let reduced = basis.transpose() * sym * &basis;
    Some(SymmetricEigen::new(reduced).eigenvalues.min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::QuadraticCost;
    use crate::model::{InputConstraint, TanhModel};

    #[test]
    fn gradient_matches_finite_differences() {
        let m = TanhModel::default();
        let c = QuadraticCost::identity(2, 1);
        let u = InputConstraint::symmetric(1, 0.05).unwrap();
        let th = [0.8, 1.02, 0.3];
        let p = OcpProblem::new(&m, &c, &u, 6, &th).unwrap();
        let x = [0.7, -1.1];
        let inputs = [0.01, -0.02, 0.03, 0.0, -0.04, 0.02];
        let mut ws = Workspace::new(&p);
        p.rollout(&x, &inputs, &mut ws.states);
        let mut g = [0.0; 6];
        gradient(&p, &inputs, &mut ws, &mut g);
        let mut buf = Vec::new();
        for j in 0..6 {
            let mut a = inputs;
            let mut b = inputs;
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (p.rollout(&x, &a, &mut buf) - p.rollout(&x, &b, &mut buf)) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-7, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn reduced_hessian_positive_on_tanh() {
        let m = TanhModel::default();
        let c = QuadraticCost::identity(2, 1);
        let u = InputConstraint::symmetric(1, 0.05).unwrap();
        let th = TanhModel::reference_theta();
        let p = OcpProblem::new(&m, &c, &u, 8, &th).unwrap();
        let x = [1.0, 0.3];
        let s = super::super::solve(&p, &x).unwrap();
        let lam = reduced_hessian_min_eigenvalue(&p, &x, &s);
        assert!(lam.map_or(true, |l| l > 0.0));
    }
}
