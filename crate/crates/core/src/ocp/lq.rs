//! Condensed (batch) linear-quadratic problems.

use super::{OcpError, OcpProblem, OcpSolution, SolverDiagnostics, SolverMethod};
use crate::cost::QuadraticCost;
use crate::linalg::block_diagonal;
use crate::model::{InputConstraint, LinearModel};
use crate::qp::{solve_qp, QpOptions};
use nalgebra::{DMatrix, DVector};

/// Batch matrices of the horizon-N problem: stacked states `Φ x + G u`.
#[derive(Debug, Clone)]
pub struct LqBatch {
    pub horizon: usize,
    /// `[I; A; …; A^N]`.
    pub phi: DMatrix<f64>,
    /// Block `(i, j)` is `A^{i−j−1}B` for `i > j`, zero otherwise.
    pub impulse: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
    /// `R̄ + GᵀQ̄G`.
    pub hessian: DMatrix<f64>,
    /// `GᵀQ̄Φ`.
    pub coupling: DMatrix<f64>,
    /// `−(R̄ + GᵀQ̄G)⁻¹GᵀQ̄Φ`; rows `k·m..(k+1)·m` form `K_{k,N}`.
    pub gains: DMatrix<f64>,
}

impl LqBatch {
    pub fn new(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self, OcpError> {
        if horizon == 0 {
            return Err(OcpError::ZeroHorizon);
        }
        let (n, m) = (a.nrows(), b.ncols());
        let mut powers = vec![DMatrix::identity(n, n)];
        for k in 1..=horizon {
            powers.push(a * &powers[k - 1]);
        }
        let mut phi = DMatrix::zeros((horizon + 1) * n, n);
        for (k, p) in powers.iter().enumerate() {
            phi.view_mut((k * n, 0), (n, n)).copy_from(p);
        }
        let mut impulse = DMatrix::zeros((horizon + 1) * n, horizon * m);
        for i in 1..=horizon {
            for j in 0..i {
                impulse.view_mut((i * n, j * m), (n, m)).copy_from(&(&powers[i - j - 1] * b));
            }
        }
        let q_bar = block_diagonal(q, horizon + 1);
        let r_bar = block_diagonal(r, horizon);
        let gtq = impulse.transpose() * &q_bar;
        let hessian = &r_bar + &gtq * &impulse;
        let coupling = &gtq * &phi;
        let chol = hessian.clone().cholesky().ok_or(OcpError::NonFinite("batch normal matrix"))?;
        let gains = -chol.solve(&coupling);
        Ok(Self { horizon, phi, impulse, q_bar, r_bar, hessian, coupling, gains })
    }

    pub fn input_dim(&self) -> usize {
        self.gains.nrows() / self.horizon
    }

    pub fn stage_gain(&self, k: usize) -> DMatrix<f64> {
        let m = self.input_dim();
        self.gains.rows(k * m, m).into_owned()
    }

    /// Constrained minimizer of `uᵀHu + 2uᵀ(Fx)` over `u_k ∈ U`.
    pub fn constrained_inputs(&self, e: &DMatrix<f64>, x: &DVector<f64>) -> Result<(DVector<f64>, usize, f64), OcpError> {
        let unconstrained = &self.gains * x;
        let m = self.input_dim();
        let feasible = (0..self.horizon).all(|k| {
            let uk = unconstrained.rows(k * m, m);
            (0..e.nrows()).all(|r| e.row(r).dot(&uk.transpose()) < 1.0)
        });
        if feasible {
            return Ok((unconstrained, 0, 0.0));
        }
        let c = block_diagonal(e, self.horizon);
        let d = DVector::from_element(c.nrows(), 1.0);
        let g = 2.0 * (&self.coupling * x);
        let sol = solve_qp(&(2.0 * &self.hessian), &g, &c, &d, DVector::zeros(self.horizon * m), QpOptions::default())?;
        Ok((sol.z, sol.iterations, sol.kkt_residual))
    }
}

pub(super) fn solve_problem_qp(problem: &OcpProblem, x: &[f64]) -> Result<OcpSolution, OcpError> {
    let linear = problem.model.as_linear().ok_or(OcpError::NotLinearQuadratic)?;
    let (q, r) = problem.cost.quadratic_weights().ok_or(OcpError::NotLinearQuadratic)?;
    let (a, b) = linear.matrices(problem.theta);
    let batch = LqBatch::new(&a, &b, q, r, problem.horizon)?;
    let e = problem.constraint.as_rows();
    let (u, iterations, kkt) = batch.constrained_inputs(&e, &DVector::from_column_slice(x))?;
    let diagnostics = SolverDiagnostics {
        method: SolverMethod::QuadraticProgram,
        iterations,
        projected_gradient_norm: 0.0,
        converged: true,
        kkt_residual: Some(kkt),
    };
    OcpSolution::from_stacked(problem, x, u.as_slice(), diagnostics)
}

fn lq_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    constraint: &InputConstraint,
    horizon: usize,
    x: &[f64],
) -> Result<OcpSolution, OcpError> {
    let model = LinearModel::constant(a.clone(), b.clone());
    let cost = QuadraticCost::new(q.clone(), r.clone()).map_err(|_| OcpError::NonFinite("cost weights"))?;
    let problem = OcpProblem::new(&model, &cost, constraint, horizon, &[0.0])?;
    problem.check_state(x)?;
    solve_problem_qp(&problem, x)
}

/// Exact batch solution without input constraints.
pub fn solve_lq_unconstrained(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    horizon: usize,
    x: &[f64],
) -> Result<OcpSolution, OcpError> {
    lq_solve(a, b, q, r, &InputConstraint::unbounded(b.ncols()), horizon, x)
}

/// Strongly convex QP over the polytope `E u_k ≤ 1`.
pub fn solve_lq_constrained(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    e: &DMatrix<f64>,
    horizon: usize,
    x: &[f64],
) -> Result<OcpSolution, OcpError> {
    let constraint = InputConstraint::polytope(e)?;
    lq_solve(a, b, q, r, &constraint, horizon, x)
}
