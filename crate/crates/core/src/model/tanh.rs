use super::{Lipschitz, MismatchLipschitz, ParameterSpec, ParametricModel};
use nalgebra::DMatrix;

/// Second-order system with saturating feedback:
///
/// ```text
/// x₁⁺ = −c·x₂
/// x₂⁺ = w₁·tanh(x₁) + w₂·tanh(x₂) + b·u
/// ```
///
/// with parameter `θ = (w₁, w₂, b)` and fixed coupling `c` (0.99 by default).
///
/// Lipschitz constants follow the entry-wise convention: the bound is the largest
/// absolute Jacobian entry over the state space, i.e. `max(c, |w₁|, |w₂|)` in the
/// state and `|b|` in the input.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhModel {
    coupling: f64,
}

impl Default for TanhModel {
    fn default() -> Self {
        Self { coupling: 0.99 }
    }
}

impl TanhModel {
    pub fn with_coupling(coupling: f64) -> Self {
        Self { coupling }
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// Nominal parameter of the reference case study.
    pub fn reference_theta() -> Vec<f64> {
        vec![0.85, 0.995, 0.01]
    }
}

impl ParametricModel for TanhModel {
    fn name(&self) -> &str {
        "tanh"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], u: &[f64], theta: &[f64], next: &mut [f64]) {
        next[0] = -self.coupling * x[1];
        next[1] = theta[0] * x[0].tanh() + theta[1] * x[1].tanh() + theta[2] * u[0];
    }

    fn jacobians(&self, x: &[f64], _u: &[f64], theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let s1 = 1.0 - x[0].tanh().powi(2);
        let s2 = 1.0 - x[1].tanh().powi(2);
        let jx = DMatrix::from_row_slice(2, 2, &[0.0, -self.coupling, theta[0] * s1, theta[1] * s2]);
        let ju = DMatrix::from_row_slice(2, 1, &[0.0, theta[2]]);
        (jx, ju)
    }

    fn jacobian_theta(&self, x: &[f64], u: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, x[0].tanh(), x[1].tanh(), u[0]])
    }

    fn adjoint(
        &self,
        x: &[f64],
        _u: &[f64],
        theta: &[f64],
        lambda: &[f64],
        gx: &mut [f64],
        gu: &mut [f64],
    ) {
        let s1 = 1.0 - x[0].tanh().powi(2);
        let s2 = 1.0 - x[1].tanh().powi(2);
        gx[0] = theta[0] * s1 * lambda[1];
        gx[1] = -self.coupling * lambda[0] + theta[1] * s2 * lambda[1];
        gu[0] = theta[2] * lambda[1];
    }

    fn lipschitz_nominal(&self, theta_hat: &[f64]) -> Lipschitz {
        Lipschitz {
            state: self.coupling.abs().max(theta_hat[0].abs()).max(theta_hat[1].abs()),
            input: theta_hat[2].abs(),
        }
    }

    fn lipschitz_uniform(&self, spec: &ParameterSpec) -> Lipschitz {
        let t = spec.theta_hat();
        let e = spec.epsilon();
        Lipschitz {
            state: self.coupling.abs().max(t[0].abs() + e).max(t[1].abs() + e),
            input: t[2].abs() + e,
        }
    }

    /// `|Δθ·(tanh x₁, tanh x₂, u)| ≤ δ‖(x, u)‖ ≤ δ(‖x‖ + ‖u‖)`.
    fn analytic_mismatch(&self) -> Option<MismatchLipschitz> {
        Some(MismatchLipschitz::Linear { slope: 1.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::step;

    #[test]
    fn reference_step() {
        let m = TanhModel::default();
        let next = step(&m, &[0.0, 1.0], &[0.0], &TanhModel::reference_theta()).unwrap();
        assert_eq!(next[0], -0.99);
        assert!((next[1] - 0.995 * 1f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn reference_constants() {
        let m = TanhModel::default();
        let l = m.lipschitz_nominal(&TanhModel::reference_theta());
        assert_eq!(l.state, 0.995);
        assert_eq!(l.input, 0.01);
        let spec = ParameterSpec::new(TanhModel::reference_theta(), 0.01).unwrap();
        let lu = m.lipschitz_uniform(&spec);
        assert!((lu.state - 1.005).abs() < 1e-15);
        assert!((lu.input - 0.02).abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_jacobians() {
        let m = TanhModel::default();
        let (x, u, th) = ([0.3, -0.7], [0.02], [0.8, 1.1, 0.03]);
        let (jx, ju) = m.jacobians(&x, &u, &th);
        let lam = [1.5, -0.4];
        let (mut gx, mut gu) = ([0.0; 2], [0.0; 1]);
        m.adjoint(&x, &u, &th, &lam, &mut gx, &mut gu);
        for j in 0..2 {
            let e = jx[(0, j)] * lam[0] + jx[(1, j)] * lam[1];
            assert!((gx[j] - e).abs() < 1e-15);
        }
        assert!((gu[0] - (ju[(0, 0)] * lam[0] + ju[(1, 0)] * lam[1])).abs() < 1e-15);
    }
}
