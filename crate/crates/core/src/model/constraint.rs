use super::ModelError;
use crate::qp::{solve_qp, QpOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Input set `U = {u | g(u) ≤ 1}` containing the origin strictly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputConstraint {
    /// Componentwise `lo < 0 < hi`; infinite bounds allowed.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `E u ≤ 1` with rows stored row-major.
    Polytope { rows: Vec<Vec<f64>> },
}

impl InputConstraint {
    pub fn bounds(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        let c = InputConstraint::Box { lo, hi };
        c.validate()?;
        Ok(c)
    }

    pub fn symmetric(dim: usize, bound: f64) -> Result<Self, ModelError> {
        Self::bounds(vec![-bound; dim], vec![bound; dim])
    }

    pub fn unbounded(dim: usize) -> Self {
        InputConstraint::Box { lo: vec![f64::NEG_INFINITY; dim], hi: vec![f64::INFINITY; dim] }
    }

    pub fn polytope(e: &DMatrix<f64>) -> Result<Self, ModelError> {
        let c = InputConstraint::Polytope { rows: crate::linalg::matrix_to_rows(e) };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            InputConstraint::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(ModelError::Constraint("box bounds must be non-empty and of equal length".into()));
                }
                for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if l.is_nan() || h.is_nan() || !(*l < 0.0 && 0.0 < *h) {
                        return Err(ModelError::Constraint(format!(
                            "bound {i}: need lo < 0 < hi, got [{l}, {h}]"
                        )));
                    }
                }
            }
            InputConstraint::Polytope { rows } => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
                    return Err(ModelError::Constraint("polytope rows must be non-empty and rectangular".into()));
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite("polytope matrix"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            InputConstraint::Box { lo, .. } => lo.len(),
            InputConstraint::Polytope { rows } => rows[0].len(),
        }
    }

    /// The constraint as `E u ≤ 1`. Infinite box bounds contribute no row.
    pub fn as_rows(&self) -> DMatrix<f64> {
        match self {
            InputConstraint::Box { lo, hi } => {
                let m = lo.len();
                let mut rows: Vec<Vec<f64>> = Vec::new();
                for i in 0..m {
                    for bound in [hi[i], lo[i]] {
                        if bound.is_finite() {
                            let mut r = vec![0.0; m];
                            r[i] = 1.0 / bound;
                            rows.push(r);
                        }
                    }
                }
                DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j])
            }
            InputConstraint::Polytope { rows } => {
                crate::linalg::matrix_from_rows(rows).expect("validated polytope")
            }
        }
    }

    /// `max_i g_i(u) − 1`; non-positive iff feasible.
    pub fn violation(&self, u: &[f64]) -> f64 {
        match self {
            InputConstraint::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v / h).max(v / l) - 1.0)
                .fold(f64::NEG_INFINITY, f64::max),
            InputConstraint::Polytope { rows } => rows
                .iter()
                .map(|r| r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() - 1.0)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn is_feasible(&self, u: &[f64], tol: f64) -> bool {
        self.violation(u) <= tol
    }

    /// Euclidean projection onto U, in place.
    pub fn project(&self, u: &mut [f64]) {
        match self {
            InputConstraint::Box { lo, hi } => {
                for (v, (l, h)) in u.iter_mut().zip(lo.iter().zip(hi)) {
                    *v = v.clamp(*l, *h);
                }
            }
            InputConstraint::Polytope { .. } => {
                if self.violation(u) <= 0.0 {
                    return;
                }
                let e = self.as_rows();
                let m = u.len();
                let y = DVector::from_column_slice(u);
                let sol = solve_qp(
                    &DMatrix::identity(m, m),
                    &(-y),
                    &e,
                    &DVector::from_element(e.nrows(), 1.0),
                    DVector::zeros(m),
                    QpOptions::default(),
                )
                .expect("least-distance problem from the origin is well-posed");
                u.copy_from_slice(sol.z.as_slice());
            }
        }
    }

    /// Largest `t ≥ 0` with `t·direction ∈ U` (`+∞` when unbounded).
    pub fn extent_along(&self, direction: &[f64]) -> f64 {
        let e = self.as_rows();
        let mut t = f64::INFINITY;
        for i in 0..e.nrows() {
            let s: f64 = e.row(i).iter().zip(direction).map(|(a, b)| a * b).sum();
            if s > 0.0 {
                t = t.min(1.0 / s);
            }
        }
        t
    }

    /// Largest input norm over U, capped at `cap` for unbounded sets.
    pub fn max_norm(&self, cap: f64) -> f64 {
        match self {
            InputConstraint::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l.abs().max(h.abs()).min(cap).powi(2))
                .sum::<f64>()
                .sqrt(),
            InputConstraint::Polytope { .. } => {
                let m = self.dim();
                let mut best: f64 = 0.0;
                for k in 0..512u64 {
                    let h = crate::sampling::halton_point(k, m);
                    let d: Vec<f64> = h.iter().map(|v| 2.0 * v - 1.0).collect();
                    let n = crate::linalg::norm(&d);
                    if n < 1e-9 {
                        continue;
                    }
                    let unit: Vec<f64> = d.iter().map(|v| v / n).collect();
                    best = best.max(self.extent_along(&unit).min(cap));
                }
                best
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rejects_origin_on_boundary() {
        assert!(InputConstraint::bounds(vec![0.0], vec![1.0]).is_err());
        assert!(InputConstraint::bounds(vec![-1.0], vec![1.0]).is_ok());
    }

    #[test]
    fn box_rows_match_violation() {
        let c = InputConstraint::bounds(vec![-0.05], vec![0.1]).unwrap();
        let e = c.as_rows();
        assert_eq!(e.nrows(), 2);
        assert!((c.violation(&[0.1])).abs() < 1e-15);
        assert!((c.violation(&[-0.1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polytope_projection_is_feasible() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.5, 0.0, -2.0]);
        let c = InputConstraint::polytope(&e).unwrap();
        let mut u = [3.0, -4.0];
        c.project(&mut u);
        assert!(c.violation(&u) <= 1e-12);
        let mut inside = [0.1, 0.1];
        c.project(&mut inside);
        assert_eq!(inside, [0.1, 0.1]);
    }

    #[test]
    fn extent_along_axis() {
        let c = InputConstraint::bounds(vec![-2.0], vec![0.5]).unwrap();
        assert!((c.extent_along(&[1.0]) - 0.5).abs() < 1e-15);
        assert!((c.extent_along(&[-1.0]) - 2.0).abs() < 1e-15);
    }
}
