use super::{run_indexed, ExperimentError, Setup};
use crate::bounds::lq::{certify_lq_sensitivity, lq_specialize, CertifiedSensitivity, LqSpecialization};
use crate::bounds::{eta_bar_star, BoundInputs, BoundVariants, EdsConstants, EvaluationPoint};
use crate::cost::{estimate_clf_constant, ClfEstimate, CostConstants, QuadraticCost};
use crate::linalg::{distance, norm};
use crate::model::{
    fit_mismatch_lipschitz, max_one_step_deviation, DeviationEstimate, FitBudget, Lipschitz, MismatchFit, ParametricModel,
};
use crate::ocp::OcpError;
use crate::sampling::{scenario_seed, seeded_rng, uniform_in_ball, unit_direction};
use serde::{Deserialize, Serialize};

const EDS_AXIS: u64 = 1;
const GAMMA_AXIS: u64 = 2;
const ETA_AXIS: u64 = 3;

/// Sample budgets of [`estimate_empirical_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsBudget {
    /// Horizon of the sensitivity fits.
    pub horizon: usize,
    pub eds_pairs: usize,
    /// Distance between the two states of a sensitivity pair.
    pub eds_step: f64,
    pub percentile: f64,
    /// `γ̂_i` is estimated for `i = 1..=gamma_horizon`.
    pub gamma_horizon: usize,
    pub rings: usize,
    pub directions: usize,
    pub min_radius: f64,
    pub state_radius: f64,
    pub eta_samples: usize,
    /// Radius of the region Ω in which η̄ is sampled.
    pub omega_radius: f64,
    pub mismatch: FitBudget,
    pub deviation_budget: usize,
    pub parallel: bool,
}

impl Default for ConstantsBudget {
    fn default() -> Self {
        Self {
            horizon: 10,
            eds_pairs: 200,
            eds_step: 1e-3,
            percentile: 0.99,
            gamma_horizon: 25,
            rings: 6,
            directions: 16,
            min_radius: 1e-2,
            state_radius: std::f64::consts::SQRT_2,
            eta_samples: 100,
            omega_radius: 0.1,
            mismatch: FitBudget::default(),
            deviation_budget: 256,
            parallel: true,
        }
    }
}

/// `(C_K, ρ_K)` fitted to the upper percentile of measured stage sensitivities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdsFit {
    pub eds: EdsConstants,
    /// Percentile of `‖u_k(x′) − u_k(x″)‖/‖x′ − x″‖` per stage k.
    pub percentiles: Vec<f64>,
    pub pairs: usize,
    /// True when the fitted ratio was not below one and had to be clamped.
    pub decay_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    /// `γ̂_i` for `i = 1..`.
    pub gammas: Vec<f64>,
    pub gamma_bar: f64,
    pub samples: usize,
    pub min_radius: f64,
    pub max_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    /// Max of `‖u*_k(x; θ̂) − u*_k(x; θ)‖/(δ‖x‖)` over samples inside Ω.
    pub eta_bar: f64,
    pub samples: usize,
    /// Samples with `δ‖x‖ = 0`, which carry no information.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstants {
    pub epsilon: f64,
    pub eds: EdsFit,
    pub gamma: GammaEstimate,
    pub clf: ClfEstimate,
    pub eta: SensitivityEstimate,
    pub mismatch: MismatchFit,
    /// `R(0; ε)`.
    pub r0: DeviationEstimate,
    pub budget: ConstantsBudget,
}

impl EmpiricalConstants {
    pub fn bound_inputs(
        &self,
        cost: CostConstants,
        lipschitz: Lipschitz,
        variants: BoundVariants,
        point: Option<EvaluationPoint>,
    ) -> BoundInputs {
        BoundInputs {
            cost,
            lipschitz,
            eds: self.eds.eds,
            gammas: self.gamma.gammas.clone(),
            gamma_bar: self.gamma.gamma_bar,
            nu: self.clf.nu,
            law: self.mismatch.law().clone(),
            r0: self.r0.value,
            eta_bar_star: eta_bar_star(self.eds.eds, self.budget.omega_radius, self.eta.eta_bar),
            variants,
            point,
        }
    }
}

fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((p * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1;
    values[idx]
}

/// Log-linear fit of the percentiles, then the smallest gain that envelopes them.
fn fit_decay(percentiles: &[f64]) -> (EdsConstants, bool) {
    let pts: Vec<(f64, f64)> =
        percentiles.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(k, v)| (k as f64, v.ln())).collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx
    } else {
        f64::NEG_INFINITY
    };
    let raw = slope.exp();
    let clamped = raw >= 1.0;
    let decay = raw.clamp(1e-6, 0.999);
    let gain = percentiles
        .iter()
        .enumerate()
        .map(|(k, v)| v / decay.powi(k as i32))
        .fold(f64::EPSILON, f64::max);
    (EdsConstants { gain, decay }, clamped)
}

fn fit_eds(setup: &Setup, budget: &ConstantsBudget, seed: u64) -> Result<EdsFit, ExperimentError> {
    if budget.eds_pairs == 0 {
        return Err(ExperimentError::InsufficientSamples("eds_pairs must be positive"));
    }
    let n = setup.model.state_dim();
    let m = setup.model.input_dim();
    let theta_hat = setup.spec.theta_hat();
    let rows = run_indexed(budget.eds_pairs, budget.parallel, |i| -> Result<Vec<f64>, OcpError> {
        let mut rng = seeded_rng(scenario_seed(seed, EDS_AXIS, i as u64));
        let x1 = uniform_in_ball(&mut rng, n, budget.state_radius);
        let x2 = &x1 + unit_direction(&mut rng, n) * budget.eds_step;
        let u1 = setup.solve(budget.horizon, theta_hat, x1.as_slice())?.stacked_inputs();
        let u2 = setup.solve(budget.horizon, theta_hat, x2.as_slice())?.stacked_inputs();
        Ok((0..budget.horizon)
            .map(|k| distance(&u1[k * m..(k + 1) * m], &u2[k * m..(k + 1) * m]) / budget.eds_step)
            .collect())
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let percentiles: Vec<f64> = (0..budget.horizon)
        .map(|k| {
            let mut column: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            percentile(&mut column, budget.percentile)
        })
        .collect();
    let (eds, decay_clamped) = fit_decay(&percentiles);
    Ok(EdsFit { eds, percentiles, pairs: rows.len(), decay_clamped })
}

/// States on log-spaced rings between `min_radius` and `state_radius`.
pub(crate) fn ring_samples(budget: &ConstantsBudget, state_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let rings = budget.rings.max(1);
    let mut rng = seeded_rng(scenario_seed(seed, GAMMA_AXIS, 0));
    let ratio = budget.state_radius / budget.min_radius;
    (0..rings)
        .flat_map(|j| {
            let t = if rings == 1 { 1.0 } else { j as f64 / (rings - 1) as f64 };
            let r = budget.min_radius * ratio.powf(t);
            (0..budget.directions).map(move |_| r).collect::<Vec<_>>()
        })
        .map(|r| (unit_direction(&mut rng, state_dim) * r).as_slice().to_vec())
        .collect()
}

fn estimate_gamma(
    setup: &Setup,
    gamma_horizon: usize,
    parallel: bool,
    samples: &[Vec<f64>],
) -> Result<GammaEstimate, ExperimentError> {
    if samples.is_empty() || gamma_horizon == 0 {
        return Err(ExperimentError::InsufficientSamples("γ estimation needs states and horizons"));
    }
    let theta_hat = setup.spec.theta_hat();
    let m = setup.model.input_dim();
    let rows = run_indexed(samples.len(), parallel, |s| -> Result<Option<Vec<f64>>, OcpError> {
        let x = &samples[s];
        let lx = setup.cost.state_cost(x);
        if lx == 0.0 {
            return Ok(None);
        }
        let mut warm: Vec<f64> = Vec::new();
        let mut out = Vec::with_capacity(gamma_horizon);
        for i in 1..=gamma_horizon {
            warm.resize(i * m, 0.0);
            let sol = setup.solver.solve(&setup.problem(i, theta_hat)?, x, Some(&warm))?;
            warm = sol.stacked_inputs();
            out.push(sol.value / lx - 1.0);
        }
        Ok(Some(out))
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(ExperimentError::InsufficientSamples("every γ sample has zero stage cost"));
    }
    let gammas: Vec<f64> =
        (0..gamma_horizon).map(|i| rows.iter().map(|r| r[i]).fold(0.0, f64::max)).collect();
    let gamma_bar = gammas.iter().copied().fold(0.0, f64::max);
    let norms = samples.iter().map(|x| norm(x));
    Ok(GammaEstimate {
        gammas,
        gamma_bar,
        samples: rows.len(),
        min_radius: norms.clone().fold(f64::INFINITY, f64::min),
        max_radius: norms.fold(0.0, f64::max),
    })
}

fn estimate_eta(setup: &Setup, budget: &ConstantsBudget, seed: u64) -> Result<SensitivityEstimate, ExperimentError> {
    let eps = setup.spec.epsilon();
    let (n, m, p) = (setup.model.state_dim(), setup.model.input_dim(), setup.model.param_dim());
    let rows = run_indexed(budget.eta_samples, budget.parallel, |i| -> Result<Option<f64>, OcpError> {
        let mut rng = seeded_rng(scenario_seed(seed, ETA_AXIS, i as u64));
        let x = uniform_in_ball(&mut rng, n, budget.omega_radius);
        let theta = setup.spec.displaced(unit_direction(&mut rng, p).as_slice(), eps);
        let scale = setup.spec.mismatch(&theta) * x.norm();
        if scale == 0.0 {
            return Ok(None);
        }
        let u_hat = setup.solve(budget.horizon, setup.spec.theta_hat(), x.as_slice())?.stacked_inputs();
        let u = setup.solve(budget.horizon, &theta, x.as_slice())?.stacked_inputs();
        Ok(Some(
            (0..budget.horizon)
                .map(|k| distance(&u_hat[k * m..(k + 1) * m], &u[k * m..(k + 1) * m]) / scale)
                .fold(0.0, f64::max),
        ))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let used: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(SensitivityEstimate {
        eta_bar: used.iter().copied().fold(0.0, f64::max),
        samples: used.len(),
        excluded: rows.len() - used.len(),
    })
}

/// Estimates `(C_K, ρ_K)`, `γ̂_i`, `γ̄`, `ν̂`, `η̄`, `L_d` and `R(0; ε)` by sampling.
/// Deterministic for a fixed seed.
pub fn estimate_empirical_constants(
    setup: &Setup,
    budget: &ConstantsBudget,
    seed: u64,
) -> Result<EmpiricalConstants, ExperimentError> {
    if budget.horizon == 0 {
        return Err(ExperimentError::Config("constants horizon must be at least 1".into()));
    }
    let eds = fit_eds(setup, budget, seed)?;
    let samples = ring_samples(budget, setup.model.state_dim(), seed);
    let gamma = estimate_gamma(setup, budget.gamma_horizon, budget.parallel, &samples)?;
    let clf = estimate_clf_constant(
        setup.cost,
        setup.model,
        setup.constraint,
        setup.spec.theta_hat(),
        &samples,
        &setup.solver,
    )?;
    let eta = estimate_eta(setup, budget, seed)?;
    let mismatch = fit_mismatch_lipschitz(setup.model, setup.constraint, setup.spec, budget.mismatch, seed)?;
    let zero = vec![0.0; setup.model.state_dim()];
    let r0 = max_one_step_deviation(setup.model, &zero, setup.constraint, setup.spec, budget.deviation_budget, seed)?;
    Ok(EmpiricalConstants { epsilon: setup.spec.epsilon(), eds, gamma, clf, eta, mismatch, r0, budget: *budget })
}

/// Sample budgets of [`lq_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqBudget {
    pub horizon: usize,
    /// Radius of the initial-state ball the certificate covers.
    pub state_radius: f64,
    pub gamma_horizon: usize,
    /// States on the sphere of `state_radius` used for γ̂ and ν̂.
    pub sphere_points: usize,
    /// Random parameters on the ball boundary, on top of the axis directions.
    pub parameter_samples: usize,
    pub parallel: bool,
}

impl Default for LqBudget {
    fn default() -> Self {
        Self { horizon: 10, state_radius: 2.0, gamma_horizon: 25, sphere_points: 720, parameter_samples: 40, parallel: true }
    }
}

/// Constants of a linear model with quadratic cost and polytopic inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqConstants {
    pub inputs: BoundInputs,
    pub gamma: GammaEstimate,
    pub clf: ClfEstimate,
    pub sensitivity: CertifiedSensitivity,
    pub specialization: LqSpecialization,
    pub budget: LqBudget,
}

/// Evenly spaced on the circle in two dimensions, seeded uniform directions otherwise.
fn sphere_points(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if dim == 2 {
        return (0..count)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / count as f64;
                vec![radius * t.cos(), radius * t.sin()]
            })
            .collect();
    }
    let mut rng = seeded_rng(scenario_seed(seed, GAMMA_AXIS, 0));
    (0..count).map(|_| (unit_direction(&mut rng, dim) * radius).as_slice().to_vec()).collect()
}

/// Bound inputs from closed-form and certified quantities: the mismatch law is the
/// model's analytic one, `(C_K, ρ_K)` come from the certified sensitivity gains with
/// the decay ratio that maximizes the admissible mismatch, and `R(0; ε)` is
/// `‖ΔB‖·max‖u‖` over the ball and `U`. γ̂ and ν̂ are maxima over the sphere of
/// `state_radius`, where the constrained value-to-cost ratios peak.
pub fn lq_constants(
    setup: &Setup,
    budget: &LqBudget,
    variants: BoundVariants,
    seed: u64,
) -> Result<LqConstants, ExperimentError> {
    let model = setup
        .model
        .as_linear()
        .ok_or_else(|| ExperimentError::Config("the analytic constants need a linear model".into()))?;
    let (q, r) = setup
        .cost
        .quadratic_weights()
        .ok_or_else(|| ExperimentError::Config("the analytic constants need a quadratic cost".into()))?;
    let cost = QuadraticCost::new(q.clone(), r.clone())?;
    if budget.horizon == 0 || budget.sphere_points == 0 {
        return Err(ExperimentError::Config("lq horizon and sphere_points must be positive".into()));
    }
    let samples = sphere_points(model.state_dim(), budget.state_radius, budget.sphere_points, seed);
    let gamma = estimate_gamma(setup, budget.gamma_horizon, budget.parallel, &samples)?;
    let clf = estimate_clf_constant(
        setup.cost,
        setup.model,
        setup.constraint,
        setup.spec.theta_hat(),
        &samples,
        &setup.solver,
    )?;
    let sensitivity =
        certify_lq_sensitivity(model, &cost, budget.horizon, setup.spec, budget.parameter_samples, seed)?;
    let law = model.analytic_mismatch().expect("linear models carry an analytic law");
    let base = |eds: EdsConstants| BoundInputs {
        cost: setup.cost.constants(),
        lipschitz: model.lipschitz_uniform(setup.spec),
        eds,
        gammas: gamma.gammas.clone(),
        gamma_bar: gamma.gamma_bar,
        nu: clf.nu,
        law: law.clone(),
        r0: model.mismatch_gain() * setup.spec.epsilon() * setup.constraint.max_norm(f64::INFINITY),
        eta_bar_star: 0.0,
        variants,
        point: None,
    };
    let eds = sensitivity.best_eds(budget.state_radius, |eds| {
        base(eds).at_horizon(budget.horizon).and_then(|b| b.max_mismatch()).map_or(f64::INFINITY, |d| -d)
    })?;
    let e_u = setup.constraint.as_rows();
    let specialization = lq_specialize(
        model,
        &cost,
        &e_u,
        budget.horizon,
        setup.spec,
        eds,
        budget.parameter_samples,
        scenario_seed(seed, ETA_AXIS, 0),
    )?;
    let inputs = BoundInputs { eta_bar_star: specialization.eta_bar_star, ..base(eds) };
    Ok(LqConstants { inputs, gamma, clf, sensitivity, specialization, budget: *budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{eds_constants, SpectrumBounds};
    use crate::cost::QuadraticCost;
    use crate::linalg::spectral_norm;
    use crate::model::{InputConstraint, LinearModel, ParameterSpec};
    use crate::ocp::Solver;
    use nalgebra::{dmatrix, DMatrix};

    fn small_budget() -> ConstantsBudget {
        ConstantsBudget {
            horizon: 6,
            eds_pairs: 40,
            gamma_horizon: 6,
            rings: 3,
            directions: 6,
            eta_samples: 20,
            mismatch: FitBudget { levels: 3, samples_per_level: 50, ..FitBudget::default() },
            deviation_budget: 32,
            ..ConstantsBudget::default()
        }
    }

    #[test]
    fn fit_decay_recovers_geometric_sequence() {
        let seq: Vec<f64> = (0..8).map(|k| 3.0 * 0.6f64.powi(k)).collect();
        let (eds, clamped) = fit_decay(&seq);
        assert!(!clamped);
        assert!((eds.decay - 0.6).abs() < 1e-12 && (eds.gain - 3.0).abs() < 1e-9);
    }

    #[test]
    fn linear_model_fit_is_comparable_to_spectrum_formula() {
        let a = dmatrix![0.9, 0.2; 0.0, 0.8];
        let b = dmatrix![0.0; 1.0];
        let (model, theta_hat) = LinearModel::entrywise(&a, &b).unwrap();
        let cost = QuadraticCost::identity(2, 1);
        let u = InputConstraint::unbounded(1);
        let spec = ParameterSpec::new(theta_hat, 0.0).unwrap();
        let setup = Setup { model: &model, cost: &cost, constraint: &u, spec: &spec, solver: Solver::default() };
        let c = estimate_empirical_constants(&setup, &small_budget(), 11).unwrap();
        assert!(c.eds.eds.decay < 1.0);
        // Hessian of the sparse problem is 2·blkdiag(Q, R); the equality Jacobian [A B −I].
        let jac = DMatrix::from_fn(2, 5, |i, j| match j {
            0 | 1 => a[(i, j)],
            2 => b[(i, 0)],
            _ => if j - 3 == i { -1.0 } else { 0.0 },
        });
        let spectrum =
            eds_constants(&SpectrumBounds { hessian_upper: 2.0, jacobian_upper: spectral_norm(&jac), hessian_lower: 2.0 })
                .unwrap();
        let ratio = c.eds.eds.gain / spectrum.gain;
        assert!((1.0 / 3.0..=3.0).contains(&ratio), "fitted {} vs formula {}", c.eds.eds.gain, spectrum.gain);
        assert_eq!(c.eta.samples, 0);
        assert_eq!(c.eta.excluded, 20);
        assert!(c.gamma.gammas.iter().all(|g| *g <= c.gamma.gamma_bar));
    }

    #[test]
    fn estimates_are_deterministic() {
        let model = crate::model::TanhModel::default();
        let cost = QuadraticCost::identity(2, 1);
        let u = InputConstraint::symmetric(1, 0.05).unwrap();
        let spec = ParameterSpec::new(crate::model::TanhModel::reference_theta(), 0.01).unwrap();
        let setup = Setup { model: &model, cost: &cost, constraint: &u, spec: &spec, solver: Solver::default() };
        let serial = ConstantsBudget { parallel: false, ..small_budget() };
        let a = estimate_empirical_constants(&setup, &serial, 5).unwrap();
        let b = estimate_empirical_constants(&setup, &small_budget(), 5).unwrap();
        assert_eq!(a.eds, b.eds);
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.eta, b.eta);
        assert!(a.eta.eta_bar > 0.0);
        assert!((a.r0.value - 0.01 * 0.05).abs() < 1e-12);
    }
}
