//! Separable stage costs `ℓ(x, u) = ℓ_x(x) + ℓ_u(u)` and their curvature constants.
//!
//! Constants follow the convention `(m/2)‖x‖² ≤ ℓ_x(x)` and `‖∇ℓ_x(x)‖ ≤ L‖x‖`, so a
//! quadratic `‖x‖²_Q` has `m = 2λ_min(Q)` and `L = 2λ_max(Q)`.

use crate::linalg::{asymmetry, norm, quadratic_form, symmetric_extremes};
use crate::model::{InputConstraint, ParametricModel};
use crate::ocp::{OcpError, OcpProblem, Solver};
use crate::sampling::{seeded_rng, unit_direction};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("curvature constants must satisfy 0 < m <= L (got m_x={m_x}, L_x={l_x}, m_u={m_u}, L_u={l_u})")]
    Curvature { m_x: f64, l_x: f64, m_u: f64, l_u: f64 },
    #[error("weight matrix {0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("weight matrix {0} is not square")]
    NotSquare(&'static str),
    #[error("the state sample set is empty")]
    EmptySamples,
    #[error(transparent)]
    Ocp(#[from] Box<OcpError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub m_lx: f64,
    pub l_lx: f64,
    pub m_lu: f64,
    pub l_lu: f64,
}

impl CostConstants {
    pub fn validate(&self) -> Result<(), CostError> {
        let ok = |m: f64, l: f64| m > 0.0 && m <= l && l.is_finite();
        if ok(self.m_lx, self.l_lx) && ok(self.m_lu, self.l_lu) {
            Ok(())
        } else {
            Err(CostError::Curvature { m_x: self.m_lx, l_x: self.l_lx, m_u: self.m_lu, l_u: self.l_lu })
        }
    }
}

/// `c_m = 2(1/m_x + 1/m_u)`.
pub fn error_matching_constant(c: &CostConstants) -> Result<f64, CostError> {
    if !(c.m_lx > 0.0 && c.m_lu > 0.0) {
        return Err(CostError::Curvature { m_x: c.m_lx, l_x: c.l_lx, m_u: c.m_lu, l_u: c.l_lu });
    }
    Ok(2.0 * (1.0 / c.m_lx + 1.0 / c.m_lu))
}

pub trait StageCost: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn state_cost(&self, x: &[f64]) -> f64;
    fn input_cost(&self, u: &[f64]) -> f64;
    fn state_gradient(&self, x: &[f64], out: &mut [f64]);
    fn input_gradient(&self, u: &[f64], out: &mut [f64]);
    fn constants(&self) -> CostConstants;

    /// `(Q, R)` when the cost is quadratic.
    fn quadratic_weights(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        None
    }
}

pub fn stage_cost(cost: &dyn StageCost, x: &[f64], u: &[f64]) -> f64 {
    cost.state_cost(x) + cost.input_cost(u)
}

/// `ℓ*(x) = min_{u ∈ U} ℓ(x, u) = ℓ_x(x)`, since `ℓ_u` is minimized at `0 ∈ U`.
pub fn optimized_stage_cost(cost: &dyn StageCost, x: &[f64]) -> f64 {
    cost.state_cost(x)
}

/// `ℓ(x, u) = ‖x‖²_Q + ‖u‖²_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    constants: CostConstants,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, CostError> {
        let (qmin, qmax) = spd_extremes(&q, "Q")?;
        let (rmin, rmax) = spd_extremes(&r, "R")?;
        let constants = CostConstants { m_lx: 2.0 * qmin, l_lx: 2.0 * qmax, m_lu: 2.0 * rmin, l_lu: 2.0 * rmax };
        Ok(Self { q, r, constants })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self::new(DMatrix::identity(n, n), DMatrix::identity(m, m)).expect("identity weights are SPD")
    }

    /// Replaces the curvature constants, e.g. to probe the bound checks.
    pub fn with_constants(mut self, constants: CostConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

fn spd_extremes(m: &DMatrix<f64>, name: &'static str) -> Result<(f64, f64), CostError> {
    if m.nrows() != m.ncols() || m.is_empty() {
        return Err(CostError::NotSquare(name));
    }
    if asymmetry(m) > 1e-12 * (1.0 + m.amax()) {
        return Err(CostError::NotPositiveDefinite(name));
    }
    let (lo, hi) = symmetric_extremes(m);
    if lo <= 0.0 || !hi.is_finite() {
        return Err(CostError::NotPositiveDefinite(name));
    }
    Ok((lo, hi))
}

fn symmetric_gradient(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, vj) in v.iter().enumerate() {
            acc += (m[(i, j)] + m[(j, i)]) * vj;
        }
        *o = acc;
    }
}

impl StageCost for QuadraticCost {
    fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    fn state_cost(&self, x: &[f64]) -> f64 {
        quadratic_form(&self.q, x)
    }

    fn input_cost(&self, u: &[f64]) -> f64 {
        quadratic_form(&self.r, u)
    }

    fn state_gradient(&self, x: &[f64], out: &mut [f64]) {
        symmetric_gradient(&self.q, x, out);
    }

    fn input_gradient(&self, u: &[f64], out: &mut [f64]) {
        symmetric_gradient(&self.r, u, out);
    }

    fn constants(&self) -> CostConstants {
        self.constants
    }

    fn quadratic_weights(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        Some((&self.q, &self.r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfEstimate {
    /// Smallest ν̂ ≥ 0 satisfying the one-step inequality on every sample (may be `+∞`).
    pub nu: f64,
    pub samples: usize,
    /// Norm range of the samples that carried information.
    pub hull_min_norm: f64,
    pub hull_max_norm: f64,
}

/// ν̂ from `min_u {ℓ_x(f(x,u;θ̂)) + ℓ(x,u)} ≤ (1+ν̂)ℓ_x(x)`; the inner minimum is the
/// one-step problem.
pub fn estimate_clf_constant(
    cost: &dyn StageCost,
    model: &dyn ParametricModel,
    constraint: &InputConstraint,
    theta_hat: &[f64],
    samples: &[Vec<f64>],
    solver: &Solver,
) -> Result<ClfEstimate, CostError> {
    if samples.is_empty() {
        return Err(CostError::EmptySamples);
    }
    let problem = OcpProblem::new(model, cost, constraint, 1, theta_hat).map_err(Box::new)?;
    let mut nu: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for x in samples {
        let lx = cost.state_cost(x);
        let left = solver.solve(&problem, x, None).map_err(Box::new)?.value;
        if lx == 0.0 {
            if left > 0.0 {
                nu = f64::INFINITY;
            }
            continue;
        }
        let nx = norm(x);
        lo = lo.min(nx);
        hi = hi.max(nx);
        nu = nu.max(left / lx - 1.0);
    }
    Ok(ClfEstimate { nu, samples: samples.len(), hull_min_norm: if lo.is_finite() { lo } else { 0.0 }, hull_max_norm: hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBoundReport {
    pub passed: bool,
    /// Worst `lhs/rhs` of the perturbation bounds (≤ 1 when they hold).
    pub state_perturbation_ratio: f64,
    pub input_perturbation_ratio: f64,
    /// Worst `(m/2)‖v‖² / ℓ(v)` of the quadratic lower bounds (≤ 1 when they hold).
    pub state_lower_ratio: f64,
    pub input_lower_ratio: f64,
    pub samples: usize,
}

fn perturbation_ratio<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    f: &dyn Fn(&[f64]) -> f64,
    l: f64,
) -> (f64, f64, f64) {
    let scale = |rng: &mut R| 10f64.powf(rng.random_range(-3.0..1.0));
    let x = unit_direction(rng, dim) * scale(rng);
    let d = if rng.random::<f64>() < 0.05 { x.clone() * 0.0 } else { unit_direction(rng, dim) * scale(rng) };
    let xd = &x + &d;
    let fx = f(x.as_slice());
    let lhs = (f(xd.as_slice()) - fx).abs();
    let rhs = 0.5 * l * d.norm_squared() + l * x.norm() * d.norm();
    let guard = 1e-12 * (fx + f(xd.as_slice()));
    let ratio = if rhs + guard > 0.0 { lhs / (rhs + guard) } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
    (ratio, fx, x.norm_squared())
}

/// Checks the perturbation bounds `|ℓ(v+d) − ℓ(v)| ≤ (L/2)‖d‖² + L‖v‖‖d‖` and the
/// lower bounds `ℓ(v) ≥ (m/2)‖v‖²` on random samples over several magnitudes.
pub fn verify_cost_bounds(cost: &dyn StageCost, samples: usize, seed: u64) -> CostBoundReport {
    let c = cost.constants();
    let mut rng = seeded_rng(seed);
    let (mut sp, mut ip, mut sl, mut il) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let fx = |v: &[f64]| cost.state_cost(v);
    let fu = |v: &[f64]| cost.input_cost(v);
    for _ in 0..samples {
        let (r, val, nsq) = perturbation_ratio(&mut rng, cost.state_dim(), &fx, c.l_lx);
        sp = sp.max(r);
        if val > 0.0 {
            sl = sl.max(0.5 * c.m_lx * nsq / (val * (1.0 + 1e-12)));
        }
        let (r, val, nsq) = perturbation_ratio(&mut rng, cost.input_dim(), &fu, c.l_lu);
        ip = ip.max(r);
        if val > 0.0 {
            il = il.max(0.5 * c.m_lu * nsq / (val * (1.0 + 1e-12)));
        }
    }
    CostBoundReport {
        passed: sp <= 1.0 && ip <= 1.0 && sl <= 1.0 && il <= 1.0,
        state_perturbation_ratio: sp,
        input_perturbation_ratio: ip,
        state_lower_ratio: sl,
        input_lower_ratio: il,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    #[test]
    fn quadratic_constants_and_error_matching() {
        let c = QuadraticCost::identity(2, 1);
        let k = c.constants();
        assert_eq!((k.m_lx, k.l_lx, k.m_lu, k.l_lu), (2.0, 2.0, 2.0, 2.0));
        assert_eq!(error_matching_constant(&k).unwrap(), 2.0);
        let unit = CostConstants { m_lx: 1.0, l_lx: 1.0, m_lu: 1.0, l_lu: 1.0 };
        assert_eq!(error_matching_constant(&unit).unwrap(), 4.0);
        let bad = CostConstants { m_lx: 0.0, ..unit };
        assert!(error_matching_constant(&bad).is_err());
    }

    #[test]
    fn optimized_stage_cost_examples() {
        let c = QuadraticCost::identity(2, 1);
        assert_eq!(optimized_stage_cost(&c, &[0.0, 0.0]), 0.0);
        assert_eq!(optimized_stage_cost(&c, &[1.0, 1.0]), 2.0);
        assert!((optimized_stage_cost(&c, &[0.3, -0.4]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite_weights() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(QuadraticCost::new(q, DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn cost_bounds_pass_and_detect_wrong_constant() {
        let c = QuadraticCost::identity(2, 1);
        assert!(verify_cost_bounds(&c, 2000, 1).passed);
        let mut k = c.constants();
        k.l_lx /= 10.0;
        let wrong = c.with_constants(k);
        let r = verify_cost_bounds(&wrong, 2000, 1);
        assert!(!r.passed);
        assert!(r.state_perturbation_ratio > 1.0);
    }

    #[test]
    fn clf_constant_examples() {
        let cost = QuadraticCost::identity(1, 1);
        let half = LinearModel::constant(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0));
        let wide = InputConstraint::symmetric(1, 10.0).unwrap();
        let solver = Solver::default();
        let e = estimate_clf_constant(&cost, &half, &wide, &[0.0], &[vec![1.0]], &solver).unwrap();
        // min_u (0.5+u)² + 1 + u² at u = −0.25
        assert!((e.nu - 0.125).abs() < 1e-10, "{}", e.nu);
        let zero = estimate_clf_constant(&cost, &half, &wide, &[0.0], &[vec![0.0]], &solver).unwrap();
        assert_eq!(zero.nu, 0.0);
        let double = LinearModel::constant(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0));
        let tiny = InputConstraint::symmetric(1, 0.01).unwrap();
        let e = estimate_clf_constant(&cost, &double, &tiny, &[0.0], &[vec![1.0]], &solver).unwrap();
        assert!(e.nu > 3.9);
        assert!(estimate_clf_constant(&cost, &double, &tiny, &[0.0], &[], &solver).is_err());
    }
}
