use super::{Lipschitz, MismatchLipschitz, ModelError, ParameterSpec, ParametricModel};
use crate::linalg::spectral_norm;
use nalgebra::DMatrix;

/// Linear model with affine parameter dependence:
/// `A(θ) = A₀ + Σᵢ θᵢ Aᵢ`, `B(θ) = B₀ + Σᵢ θᵢ Bᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    a0: DMatrix<f64>,
    b0: DMatrix<f64>,
    a_basis: Vec<DMatrix<f64>>,
    b_basis: Vec<DMatrix<f64>>,
    mismatch_gain: f64,
}

impl LinearModel {
    pub fn new(
        a0: DMatrix<f64>,
        b0: DMatrix<f64>,
        a_basis: Vec<DMatrix<f64>>,
        b_basis: Vec<DMatrix<f64>>,
    ) -> Result<Self, ModelError> {
        let n = a0.nrows();
        if n == 0 || a0.ncols() != n {
            return Err(ModelError::Definition("A must be square and non-empty".into()));
        }
        if b0.nrows() != n || b0.ncols() == 0 {
            return Err(ModelError::Definition("B must have n rows and at least one column".into()));
        }
        if a_basis.is_empty() || a_basis.len() != b_basis.len() {
            return Err(ModelError::Definition(
                "need one (A, B) basis pair per parameter and at least one parameter".into(),
            ));
        }
        if a_basis.iter().any(|a| a.shape() != a0.shape()) || b_basis.iter().any(|b| b.shape() != b0.shape())
        {
            return Err(ModelError::Definition("basis matrix shape mismatch".into()));
        }
        let mismatch_gain = basis_gain(&a_basis).max(basis_gain(&b_basis));
        Ok(Self { a0, b0, a_basis, b_basis, mismatch_gain })
    }

    /// Every entry of `[A B]` is a parameter (row-major, A first). Returns the model
    /// and the nominal parameter reproducing `(a, b)`.
    pub fn entrywise(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Self, Vec<f64>), ModelError> {
        let (n, m) = (a.nrows(), b.ncols());
        let mut a_basis = Vec::new();
        let mut b_basis = Vec::new();
        let mut theta = Vec::new();
        for i in 0..n {
            for j in 0..a.ncols() {
                let mut e = DMatrix::zeros(n, a.ncols());
                e[(i, j)] = 1.0;
                a_basis.push(e);
                b_basis.push(DMatrix::zeros(b.nrows(), m));
                theta.push(a[(i, j)]);
            }
        }
        for i in 0..b.nrows() {
            for j in 0..m {
                let mut e = DMatrix::zeros(b.nrows(), m);
                e[(i, j)] = 1.0;
                a_basis.push(DMatrix::zeros(n, a.ncols()));
                b_basis.push(e);
                theta.push(b[(i, j)]);
            }
        }
        let model = Self::new(
            DMatrix::zeros(n, a.ncols()),
            DMatrix::zeros(b.nrows(), m),
            a_basis,
            b_basis,
        )?;
        Ok((model, theta))
    }

    /// Parameter-independent `(A, B)` with a single inert parameter.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let za = DMatrix::zeros(a.nrows(), a.ncols());
        let zb = DMatrix::zeros(b.nrows(), b.ncols());
        Self::new(a, b, vec![za], vec![zb]).expect("constant linear model is well-formed")
    }

    pub fn matrices(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut a = self.a0.clone();
        let mut b = self.b0.clone();
        for ((t, ai), bi) in theta.iter().zip(&self.a_basis).zip(&self.b_basis) {
            if *t != 0.0 {
                a += ai * *t;
                b += bi * *t;
            }
        }
        (a, b)
    }

    /// Analytic `e_AB` with `max(‖ΔA‖, ‖ΔB‖) ≤ e_AB·δ`.
    ///
    /// Uses `‖Σ dᵢAᵢ‖₂ ≤ ‖Σ dᵢAᵢ‖_F ≤ ‖[vec A₁ … vec A_p]‖₂‖d‖`; exact when each basis
    /// matrix selects a single entry.
    pub fn mismatch_gain(&self) -> f64 {
        self.mismatch_gain
    }
}

fn basis_gain(basis: &[DMatrix<f64>]) -> f64 {
    let rows = basis[0].len();
    let stacked = DMatrix::from_fn(rows, basis.len(), |r, c| basis[c].as_slice()[r]);
    spectral_norm(&stacked)
}

impl ParametricModel for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b0.ncols()
    }

    fn param_dim(&self) -> usize {
        self.a_basis.len()
    }

    fn eval(&self, x: &[f64], u: &[f64], theta: &[f64], next: &mut [f64]) {
        let (a, b) = self.matrices(theta);
        for (i, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += a[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += b[(i, j)] * uj;
            }
            *out = acc;
        }
    }

    fn jacobians(&self, _x: &[f64], _u: &[f64], theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        self.matrices(theta)
    }

    fn jacobian_theta(&self, x: &[f64], u: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        let n = self.state_dim();
        let xv = nalgebra::DVector::from_column_slice(x);
        let uv = nalgebra::DVector::from_column_slice(u);
        let mut j = DMatrix::zeros(n, self.param_dim());
        for (c, (ai, bi)) in self.a_basis.iter().zip(&self.b_basis).enumerate() {
            j.set_column(c, &(ai * &xv + bi * &uv));
        }
        j
    }

    fn lipschitz_nominal(&self, theta_hat: &[f64]) -> Lipschitz {
        let (a, b) = self.matrices(theta_hat);
        Lipschitz { state: spectral_norm(&a), input: spectral_norm(&b) }
    }

    fn lipschitz_uniform(&self, spec: &ParameterSpec) -> Lipschitz {
        let nominal = self.lipschitz_nominal(spec.theta_hat());
        let d = self.mismatch_gain * spec.epsilon();
        Lipschitz { state: nominal.state + d, input: nominal.input + d }
    }

    fn analytic_mismatch(&self) -> Option<MismatchLipschitz> {
        Some(MismatchLipschitz::Linear { slope: self.mismatch_gain })
    }

    fn as_linear(&self) -> Option<&LinearModel> {
        Some(self)
    }
}
