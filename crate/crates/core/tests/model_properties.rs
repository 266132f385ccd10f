use cempc::model::{
    fit_mismatch_lipschitz, model_error, step, FitBudget, InputConstraint, LinearModel, ParameterSpec, ParametricModel,
    TanhModel,
};
use cempc::sampling::{seeded_rng, unit_direction};
use nalgebra::dmatrix;
use proptest::prelude::*;
use rand::Rng;

fn linear() -> (LinearModel, Vec<f64>) {
    LinearModel::entrywise(&dmatrix![0.5, 0.1; 0.0, 0.4], &dmatrix![0.0; 1.0]).unwrap()
}

fn models() -> Vec<(Box<dyn ParametricModel>, ParameterSpec, InputConstraint)> {
    let (lin, theta) = linear();
    vec![
        (
            Box::new(TanhModel::default()),
            ParameterSpec::new(TanhModel::reference_theta(), 0.01).unwrap(),
            InputConstraint::symmetric(1, 0.05).unwrap(),
        ),
        (Box::new(lin), ParameterSpec::new(theta, 0.05).unwrap(), InputConstraint::symmetric(1, 1.0).unwrap()),
    ]
}

#[test]
fn origin_is_an_equilibrium_for_every_boundary_parameter() {
    let mut rng = seeded_rng(1);
    for (model, spec, _) in models() {
        let zero_x = vec![0.0; model.state_dim()];
        let zero_u = vec![0.0; model.input_dim()];
        for _ in 0..1000 {
            let theta = spec.displaced(unit_direction(&mut rng, spec.dim()).as_slice(), spec.epsilon());
            let next = step(model.as_ref(), &zero_x, &zero_u, &theta).unwrap();
            assert!(next.iter().all(|v| *v == 0.0), "{}: {next:?}", model.name());
        }
    }
}

#[test]
fn fitted_envelope_bounds_model_error() {
    let mut rng = seeded_rng(2);
    for (model, spec, constraint) in models() {
        let fit = fit_mismatch_lipschitz(model.as_ref(), &constraint, &spec, FitBudget::default(), 3).unwrap();
        let law = fit.fitted.clone();
        let mut violations = 0;
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..model.state_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u: Vec<f64> = (0..model.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scale = rng.random_range(0.0..=1.0) * spec.epsilon();
            let theta = spec.displaced(unit_direction(&mut rng, spec.dim()).as_slice(), scale);
            let err = model_error(model.as_ref(), &spec, &x, &u, &theta).unwrap().norm();
            let bound = law.eval(spec.mismatch(&theta)) * (cempc::linalg::norm(&x) + cempc::linalg::norm(&u));
            if err > bound {
                violations += 1;
            }
        }
        assert_eq!(violations, 0, "{}", model.name());
    }
}

#[test]
fn tanh_nominal_constants_dominate_sampled_jacobians() {
    let model = TanhModel::default();
    let theta = TanhModel::reference_theta();
    let stated = model.lipschitz_nominal(&theta);
    let (mut state_max, mut input_max) = (0.0f64, 0.0f64);
    for i in 0..=60 {
        for j in 0..=60 {
            let x = [-3.0 + 0.1 * i as f64, -3.0 + 0.1 * j as f64];
            let (jx, ju) = model.jacobians(&x, &[0.0], &theta);
            state_max = state_max.max(jx.amax());
            input_max = input_max.max(ju.amax());
        }
    }
    assert!(state_max <= 0.995 + 1e-12 && stated.state == 0.995);
    assert!(input_max <= 0.01 + 1e-12 && stated.input == 0.01);
}

proptest! {
    #[test]
    fn model_error_vanishes_at_nominal(x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, u in -1.0..1.0f64) {
        for (model, spec, _) in models() {
            let e = model_error(model.as_ref(), &spec, &[x1, x2], &[u], spec.theta_hat()).unwrap();
            prop_assert!(e.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn analytic_linear_law_bounds_error(x1 in -3.0..3.0f64, x2 in -3.0..3.0f64, u in -1.0..1.0f64,
                                        d in proptest::collection::vec(-1.0..1.0f64, 6)) {
        let (model, theta_hat) = linear();
        let spec = ParameterSpec::new(theta_hat, 0.1).unwrap();
        let theta: Vec<f64> = spec.theta_hat().iter().zip(&d).map(|(t, v)| t + 0.05 * v).collect();
        let err = model_error(&model, &spec, &[x1, x2], &[u], &theta).unwrap().norm();
        let bound = model.mismatch_gain() * spec.mismatch(&theta) * ((x1 * x1 + x2 * x2).sqrt() + u.abs());
        prop_assert!(err <= bound * (1.0 + 1e-12) + 1e-15);
    }
}
