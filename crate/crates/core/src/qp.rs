//! Dense primal active-set solver for strongly convex inequality-constrained QPs
//!
//! ```text
//! min ½ zᵀHz + gᵀz   s.t.   Cz ≤ d
//! ```
//!
//! started from a feasible point.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("starting point violates constraint {row} by {violation:e}")]
    InfeasibleStart { row: usize, violation: f64 },
    #[error("KKT system is singular (working set of size {0})")]
    Singular(usize),
    #[error("active-set iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub multiplier_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iterations: 0, feasibility_tol: 1e-12, multiplier_tol: 1e-12 }
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    start: DVector<f64>,
    opts: QpOptions,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    let rows = c.nrows();
    if h.ncols() != n || g.len() != n || start.len() != n || (rows > 0 && c.ncols() != n) || d.len() != rows {
        return Err(QpError::Dimension(format!(
            "H {:?}, g {}, C {:?}, d {}, start {}",
            h.shape(),
            g.len(),
            c.shape(),
            d.len(),
            start.len()
        )));
    }
    let scale = 1.0 + d.amax();
    for i in 0..rows {
        let v = c.row(i).dot(&start.transpose()) - d[i];
        if v > opts.feasibility_tol * scale {
            return Err(QpError::InfeasibleStart { row: i, violation: v });
        }
    }
    let max_iter = if opts.max_iterations == 0 { 50 * (n + rows) + 100 } else { opts.max_iterations };

    let mut z = start;
    let mut working: Vec<usize> = Vec::new();
    for iter in 0..max_iter {
        let grad = h * &z + g;
        let (p, lambda) = equality_step(h, c, &working, &grad)?;
        let step_scale = 1e-13 * (1.0 + z.amax());
        if p.amax() <= step_scale {
            let worst = lambda
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, v)| (i, *v));
            match worst {
                Some((i, v)) if v < -opts.multiplier_tol * (1.0 + grad.amax()) => {
                    working.remove(i);
                }
                _ => {
                    let mut multipliers = DVector::zeros(rows);
                    for (k, &row) in working.iter().enumerate() {
                        multipliers[row] = lambda[k].max(0.0);
                    }
                    let kkt_residual = kkt_residual(h, g, c, d, &z, &multipliers);
                    return Ok(QpSolution { z, multipliers, active: working, iterations: iter + 1, kkt_residual });
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..rows {
            if working.contains(&i) {
                continue;
            }
            let cp = c.row(i).dot(&p.transpose());
            if cp > 1e-14 * (1.0 + c.row(i).amax() * p.amax()) {
                let slack = (d[i] - c.row(i).dot(&z.transpose())).max(0.0);
                let t = slack / cp;
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        z += &p * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    Err(QpError::IterationLimit(max_iter))
}

/// Solves the equality-constrained step `[H Cᵂᵀ; Cᵂ 0][p; λ] = [−∇; 0]`.
fn equality_step(
    h: &DMatrix<f64>,
    c: &DMatrix<f64>,
    working: &[usize],
    grad: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let n = h.nrows();
    let w = working.len();
    let mut k = DMatrix::zeros(n + w, n + w);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    for (j, &row) in working.iter().enumerate() {
        for i in 0..n {
            k[(i, n + j)] = c[(row, i)];
            k[(n + j, i)] = c[(row, i)];
        }
    }
    let mut rhs = DVector::zeros(n + w);
    rhs.rows_mut(0, n).copy_from(&(-grad));
    let sol = k.lu().solve(&rhs).ok_or(QpError::Singular(w))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(QpError::Singular(w));
    }
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, w).into_owned()))
}

/// Max of stationarity, primal/dual feasibility and complementarity violations.
pub fn kkt_residual(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    z: &DVector<f64>,
    multipliers: &DVector<f64>,
) -> f64 {
    let mut stationarity = h * z + g;
    if c.nrows() > 0 {
        stationarity += c.transpose() * multipliers;
    }
    let mut r = stationarity.amax();
    for i in 0..c.nrows() {
        let slack = c.row(i).dot(&z.transpose()) - d[i];
        r = r.max(slack.max(0.0)).max((-multipliers[i]).max(0.0)).max((multipliers[i] * slack).abs());
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum_when_inactive() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let g = DVector::from_vec(vec![-1.0, -1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let d = DVector::from_vec(vec![5.0]);
        let s = solve_qp(&h, &g, &c, &d, DVector::zeros(2), QpOptions::default()).unwrap();
        assert!((s.z[0] - 0.5).abs() < 1e-14 && (s.z[1] - 0.5).abs() < 1e-14);
        assert!(s.active.is_empty());
    }

    #[test]
    fn projection_onto_halfspace() {
        let h = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![2.0, 2.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let d = DVector::from_vec(vec![1.0]);
        let s = solve_qp(&h, &(-&y), &c, &d, DVector::zeros(2), QpOptions::default()).unwrap();
        assert!((s.z[0] - 0.5).abs() < 1e-14 && (s.z[1] - 0.5).abs() < 1e-14);
        assert!((s.multipliers[0] - 1.5).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn box_corner() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-3.0, 4.0]);
        let c = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let d = DVector::from_element(4, 1.0);
        let s = solve_qp(&h, &g, &c, &d, DVector::zeros(2), QpOptions::default()).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-14 && (s.z[1] + 1.0).abs() < 1e-14);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn rejects_infeasible_start() {
        let h = DMatrix::identity(1, 1);
        let c = DMatrix::from_element(1, 1, 1.0);
        let r = solve_qp(
            &h,
            &DVector::zeros(1),
            &c,
            &DVector::from_element(1, 1.0),
            DVector::from_element(1, 2.0),
            QpOptions::default(),
        );
        assert!(matches!(r, Err(QpError::InfeasibleStart { .. })));
    }
}
