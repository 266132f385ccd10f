use cempc::cost::QuadraticCost;
use cempc::experiments::{
    aggregates_csv, records_csv, simulate_closed_loop, sweep_horizon, sweep_input_perturbation,
    sweep_scalable_perturbation, ClosedLoopOptions, RunHeader, Setup, SweepConfig, SweepResult,
};
use cempc::model::{InputConstraint, ParameterSpec, TanhModel};
use cempc::ocp::Solver;
use cempc::sampling::{seeded_rng, uniform_in_ball, unit_direction};

fn parts() -> (TanhModel, QuadraticCost, InputConstraint, ParameterSpec) {
    (
        TanhModel::default(),
        QuadraticCost::identity(2, 1),
        InputConstraint::symmetric(1, 0.05).unwrap(),
        ParameterSpec::new(TanhModel::reference_theta(), 1e-2).unwrap(),
    )
}

fn csvs(result: &SweepResult) -> (Vec<u8>, Vec<u8>) {
    let header = RunHeader { config_hash: "0".repeat(64), seed: result.seed };
    (records_csv(result, &header).unwrap(), aggregates_csv(result, &header).unwrap())
}

#[test]
fn sweeps_are_byte_identical_across_schedules() {
    let (m, c, u, s) = parts();
    let setup = Setup { model: &m, cost: &c, constraint: &u, spec: &s, solver: Solver::default() };
    let base = SweepConfig {
        levels: vec![1e-3, 1e-2],
        scenarios: 6,
        state_norms: vec![0.5, 1.0],
        horizons: vec![3, 5],
        seed: 17,
        ..SweepConfig::default()
    };
    let serial = SweepConfig { parallel: false, ..base.clone() };
    let runs: [fn(&Setup, &SweepConfig) -> Result<SweepResult, _>; 3] =
        [sweep_input_perturbation, sweep_scalable_perturbation, sweep_horizon];
    for run in runs {
        let a = csvs(&run(&setup, &base).unwrap());
        let b = csvs(&run(&setup, &serial).unwrap());
        let c = csvs(&run(&setup, &base).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

#[test]
fn closed_loop_traces_resimulate_exactly() {
    let (m, c, u, s) = parts();
    let setup = Setup { model: &m, cost: &c, constraint: &u, spec: &s, solver: Solver::default() };
    let mut rng = seeded_rng(4);
    for _ in 0..5 {
        let theta = s.displaced(unit_direction(&mut rng, 3).as_slice(), s.epsilon());
        let x0 = uniform_in_ball(&mut rng, 2, std::f64::consts::SQRT_2);
        let options = ClosedLoopOptions { steps: 60, ..ClosedLoopOptions::default() };
        let trace = simulate_closed_loop(&setup, &theta, s.theta_hat(), 8, x0.as_slice(), options).unwrap();
        assert_eq!(trace.resimulation_residual(&m, &theta), 0.0);
        assert!((trace.cost - trace.stage_costs.iter().sum::<f64>()).abs() <= 1e-12 * trace.cost.max(1.0));
    }
}
