//! Certainty-equivalence MPC analysis toolkit.
//!
//! Finite-horizon solvers for parametric models, the stability and suboptimality
//! bounds of certainty-equivalence MPC under bounded parameter mismatch, and
//! Monte-Carlo closed-loop experiments.

pub mod bounds;
pub mod cost;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod ocp;
pub mod qp;
pub mod sampling;
