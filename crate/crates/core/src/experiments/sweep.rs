use super::{
    estimate_infinite_cost, run_indexed, simulate_closed_loop, ClosedLoopOptions,
    ExperimentError, Setup, TailPolicy,
};
use crate::bounds::{BoundInputs, BoundsError};
use crate::linalg::distance;
use crate::sampling::{scenario_seed, seeded_rng, unit_direction};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    InputPerturb,
    Scalable,
    Ratio,
    Horizon,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [SweepKind::InputPerturb, SweepKind::Scalable, SweepKind::Ratio, SweepKind::Horizon];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::InputPerturb => "input-perturb",
            SweepKind::Scalable => "scalable",
            SweepKind::Ratio => "ratio",
            SweepKind::Horizon => "horizon",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            SweepKind::InputPerturb => "input_perturb",
            SweepKind::Scalable => "scalable",
            SweepKind::Ratio => "ratio",
            SweepKind::Horizon => "horizon",
        }
    }

    /// Meaning of the `axis_value` column.
    pub fn axis_label(self) -> &'static str {
        match self {
            SweepKind::InputPerturb | SweepKind::Ratio => "epsilon",
            SweepKind::Scalable => "state_norm",
            SweepKind::Horizon => "horizon",
        }
    }

    /// Meaning of the `measured_value` column.
    pub fn measured_label(self) -> &'static str {
        match self {
            SweepKind::InputPerturb | SweepKind::Scalable => "input_deviation",
            SweepKind::Ratio => "cost_ratio",
            SweepKind::Horizon => "closed_loop_cost",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sweep kind '{s}' (expected input-perturb, scalable, ratio or horizon)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Mismatch levels ε; every scenario puts θ* on the sphere `‖θ* − θ̂‖ = ε`.
    pub levels: Vec<f64>,
    pub scenarios: usize,
    pub horizon: usize,
    /// Horizons of the horizon sweep.
    pub horizons: Vec<usize>,
    /// Initial-state norms of the scalable sweep.
    pub state_norms: Vec<f64>,
    /// Radius of the initial-state disk.
    pub state_radius: f64,
    pub closed_loop: ClosedLoopOptions,
    /// Horizon of the oracle proxies in the ratio sweep.
    pub oracle_horizon: usize,
    /// Reuse each scenario's directions and initial state at every level.
    pub common_scenarios: bool,
    /// Relative tolerance under which closed-loop costs count as tied.
    pub tie_tolerance: f64,
    pub max_failure_fraction: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let root2 = std::f64::consts::SQRT_2;
        Self {
            levels: (1..=10).map(|i| i as f64 * 1e-3).collect(),
            scenarios: 100,
            horizon: 10,
            horizons: (10..=25).collect(),
            state_norms: (1..=10).map(|i| root2 * i as f64 / 10.0).collect(),
            state_radius: root2,
            closed_loop: ClosedLoopOptions::default(),
            oracle_horizon: 60,
            common_scenarios: true,
            tie_tolerance: 1e-9,
            max_failure_fraction: 0.05,
            seed: 0,
            parallel: true,
        }
    }
}

impl SweepConfig {
    fn validate(&self, kind: SweepKind) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.scenarios == 0 {
            return bad("scenarios must be at least 1");
        }
        if self.levels.is_empty() || self.levels.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return bad("levels must be a nonempty list of finite nonnegative numbers");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        match kind {
            SweepKind::Horizon if self.horizons.is_empty() || self.horizons.contains(&0) => {
                bad("horizons must be a nonempty list of positive integers")
            }
            SweepKind::Scalable if self.state_norms.is_empty() || self.state_norms.iter().any(|r| !(*r >= 0.0)) => {
                bad("state_norms must be a nonempty list of nonnegative numbers")
            }
            SweepKind::Ratio if self.oracle_horizon < self.horizon => bad("oracle_horizon must be at least horizon"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    /// Mismatch level ε.
    pub level: f64,
    pub axis_value: f64,
    pub scenario: usize,
    pub theta_seed: u64,
    pub theta: Vec<f64>,
    pub x0: Vec<f64>,
    pub value: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub level: f64,
    pub axis_value: f64,
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub theoretical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub seed: u64,
    pub scenarios: usize,
    pub records: Vec<ScenarioRecord>,
    pub aggregates: Vec<Aggregate>,
    pub failures: usize,
    pub max_failure_fraction: f64,
}

impl SweepResult {
    /// Errors when more than the configured fraction of scenarios failed.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let total = self.records.len();
        if self.failures as f64 > self.max_failure_fraction * total as f64 {
            return Err(ExperimentError::TooManyFailures {
                failed: self.failures,
                total,
                limit: 100.0 * self.max_failure_fraction,
            });
        }
        Ok(())
    }

    pub fn aggregates_at_level(&self, level: f64) -> impl Iterator<Item = &Aggregate> {
        self.aggregates.iter().filter(move |a| a.level == level)
    }
}

fn aggregate(records: &[ScenarioRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.level, r.axis_value)) {
            keys.push((r.level, r.axis_value));
        }
    }
    keys.into_iter()
        .map(|(level, axis_value)| {
            let group = records.iter().filter(|r| r.level == level && r.axis_value == axis_value);
            let failures = group.clone().filter(|r| r.failed).count();
            let values: Vec<f64> = group.filter(|r| !r.failed).map(|r| r.value).collect();
            let count = values.len();
            let (mean, variance, min, max) = if count == 0 {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = values.iter().sum::<f64>() / count as f64;
                let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (mean, variance, min, max)
            };
            Aggregate { level, axis_value, count, failures, mean, variance, min, max, theoretical: None }
        })
        .collect()
}

struct Draw {
    seed: u64,
    theta_direction: Vec<f64>,
    state_direction: Vec<f64>,
    radial: f64,
}

fn draw(cfg: &SweepConfig, level_index: usize, scenario: usize, param_dim: usize, state_dim: usize) -> Draw {
    let axis = if cfg.common_scenarios { 0 } else { level_index as u64 + 1 };
    let seed = scenario_seed(cfg.seed, axis, scenario as u64);
    let mut rng = seeded_rng(seed);
    let theta_direction = unit_direction(&mut rng, param_dim).as_slice().to_vec();
    let state_direction = unit_direction(&mut rng, state_dim).as_slice().to_vec();
    let radial = rng.random::<f64>().powf(1.0 / state_dim as f64);
    Draw { seed, theta_direction, state_direction, radial }
}

/// One unit of work: level index, axis value, scenario.
#[derive(Clone, Copy)]
struct Task {
    level: usize,
    axis_value: f64,
    scenario: usize,
}

fn run_tasks(
    setup: &Setup,
    cfg: &SweepConfig,
    kind: SweepKind,
    tasks: Vec<Task>,
    measure: impl Fn(&Task, &[f64], &[f64]) -> Result<f64, ExperimentError> + Sync + Send,
    initial_state: impl Fn(&Task, &Draw) -> Vec<f64> + Sync + Send,
) -> SweepResult {
    let (p, n) = (setup.model.param_dim(), setup.model.state_dim());
    let records = run_indexed(tasks.len(), cfg.parallel, |i| {
        let task = tasks[i];
        let eps = cfg.levels[task.level];
        let d = draw(cfg, task.level, task.scenario, p, n);
        let theta = setup.spec.displaced(&d.theta_direction, eps);
        let x0 = initial_state(&task, &d);
        let outcome = measure(&task, &theta, &x0);
        if let Err(e) = &outcome {
            log::warn!("{} scenario {} at ε = {eps} failed: {e}", kind.name(), task.scenario);
        }
        ScenarioRecord {
            level: eps,
            axis_value: task.axis_value,
            scenario: task.scenario,
            theta_seed: d.seed,
            theta,
            x0,
            value: *outcome.as_ref().unwrap_or(&f64::NAN),
            failed: outcome.is_err(),
        }
    });
    let failures = records.iter().filter(|r| r.failed).count();
    SweepResult {
        kind,
        seed: cfg.seed,
        scenarios: cfg.scenarios,
        aggregates: aggregate(&records),
        records,
        failures,
        max_failure_fraction: cfg.max_failure_fraction,
    }
}

fn disk_state(cfg: &SweepConfig, d: &Draw) -> Vec<f64> {
    d.state_direction.iter().map(|v| v * cfg.state_radius * d.radial).collect()
}

fn input_deviation(setup: &Setup, horizon: usize, theta: &[f64], x0: &[f64]) -> Result<f64, ExperimentError> {
    let nominal = setup.solve(horizon, setup.spec.theta_hat(), x0)?;
    let perturbed = setup.solve(horizon, theta, x0)?;
    Ok(distance(&nominal.stacked_inputs(), &perturbed.stacked_inputs()))
}

/// `‖u*_N(x₀; θ*) − u*_N(x₀; θ̂)‖` per level and scenario, x₀ in the disk.
pub fn sweep_input_perturbation(setup: &Setup, cfg: &SweepConfig) -> Result<SweepResult, ExperimentError> {
    cfg.validate(SweepKind::InputPerturb)?;
    let tasks = (0..cfg.levels.len())
        .flat_map(|level| (0..cfg.scenarios).map(move |scenario| Task { level, axis_value: 0.0, scenario }))
        .map(|t| Task { axis_value: cfg.levels[t.level], ..t })
        .collect();
    Ok(run_tasks(
        setup,
        cfg,
        SweepKind::InputPerturb,
        tasks,
        |_, theta, x0| input_deviation(setup, cfg.horizon, theta, x0),
        |_, d| disk_state(cfg, d),
    ))
}

/// Input deviation over the grid of levels × initial-state norms.
pub fn sweep_scalable_perturbation(setup: &Setup, cfg: &SweepConfig) -> Result<SweepResult, ExperimentError> {
    cfg.validate(SweepKind::Scalable)?;
    let tasks = (0..cfg.levels.len())
        .flat_map(|level| {
            cfg.state_norms
                .iter()
                .flat_map(move |&r| (0..cfg.scenarios).map(move |scenario| Task { level, axis_value: r, scenario }))
        })
        .collect();
    Ok(run_tasks(
        setup,
        cfg,
        SweepKind::Scalable,
        tasks,
        |_, theta, x0| input_deviation(setup, cfg.horizon, theta, x0),
        |t, d| d.state_direction.iter().map(|v| v * t.axis_value).collect(),
    ))
}

/// Closed-loop cost over the oracle lower proxy `V_{N_long}(x₀; θ*)`; `+∞` when the
/// closed loop does not decay. `theoretical` supplies the `R_N(ε)` overlay.
pub fn sweep_competitive_ratio(
    setup: &Setup,
    cfg: &SweepConfig,
    theoretical: Option<&BoundInputs>,
) -> Result<SweepResult, ExperimentError> {
    cfg.validate(SweepKind::Ratio)?;
    let overlay = match theoretical {
        Some(inputs) => {
            let b = inputs.at_horizon(cfg.horizon)?;
            let ratios = cfg
                .levels
                .iter()
                .map(|&e| {
                    let s = b.stability(e);
                    if s.holds {
                        b.ratio(e)
                    } else {
                        Err(BoundsError::Unstable { margin: s.margin })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(ratios)
        }
        None => None,
    };
    let tasks = (0..cfg.levels.len())
        .flat_map(|level| (0..cfg.scenarios).map(move |scenario| Task { level, axis_value: 0.0, scenario }))
        .map(|t| Task { axis_value: cfg.levels[t.level], ..t })
        .collect();
    let mut result = run_tasks(
        setup,
        cfg,
        SweepKind::Ratio,
        tasks,
        |_, theta, x0| {
            let trace = simulate_closed_loop(setup, theta, setup.spec.theta_hat(), cfg.horizon, x0, cfg.closed_loop)?;
            if let Some(f) = trace.failure {
                return Err(ExperimentError::Config(f));
            }
            let est = estimate_infinite_cost(&trace, TailPolicy::default());
            if !est.tail.is_finite() {
                return Ok(f64::INFINITY);
            }
            let lower = setup.solve(cfg.oracle_horizon, theta, x0)?.value;
            Ok(if lower > 0.0 { est.cost / lower } else { 1.0 })
        },
        |_, d| disk_state(cfg, d),
    );
    if let Some(ratios) = overlay {
        for a in &mut result.aggregates {
            let i = cfg.levels.iter().position(|&e| e == a.level).expect("aggregate level is configured");
            a.theoretical = Some(ratios[i]);
        }
    }
    Ok(result)
}

/// Closed-loop cost per horizon; scenarios are shared across horizons within a level.
pub fn sweep_horizon(setup: &Setup, cfg: &SweepConfig) -> Result<SweepResult, ExperimentError> {
    cfg.validate(SweepKind::Horizon)?;
    let tasks = (0..cfg.levels.len())
        .flat_map(|level| {
            cfg.horizons
                .iter()
                .flat_map(move |&n| (0..cfg.scenarios).map(move |scenario| Task { level, axis_value: n as f64, scenario }))
        })
        .collect();
    Ok(run_tasks(
        setup,
        cfg,
        SweepKind::Horizon,
        tasks,
        |t, theta, x0| {
            let trace =
                simulate_closed_loop(setup, theta, setup.spec.theta_hat(), t.axis_value as usize, x0, cfg.closed_loop)?;
            match trace.failure {
                Some(f) => Err(ExperimentError::Config(f)),
                None => Ok(trace.cost),
            }
        },
        |_, d| disk_state(cfg, d),
    ))
}

/// Horizon with the smallest mean closed-loop cost at `level`; costs within
/// `tie_tolerance` (relative) of the minimum count as tied and go to the smaller horizon.
pub fn best_horizon(result: &SweepResult, level: f64, tie_tolerance: f64) -> Option<usize> {
    let candidates: Vec<(usize, f64)> = result
        .aggregates_at_level(level)
        .filter(|a| a.count > 0 && a.mean.is_finite())
        .map(|a| (a.axis_value as usize, a.mean))
        .collect();
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|c| c.1 <= best * (1.0 + tie_tolerance))
        .map(|c| c.0)
        .min()
}

/// Least-squares line through `(axis, value)` points with its worst residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearEnvelope {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub max_value: f64,
}

impl LinearEnvelope {
    /// Worst residual relative to the largest value.
    pub fn relative_residual(&self) -> f64 {
        if self.max_value > 0.0 {
            self.max_residual / self.max_value
        } else {
            0.0
        }
    }
}

pub fn linear_envelope(points: &[(f64, f64)]) -> LinearEnvelope {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let max_residual = points.iter().map(|p| (p.1 - slope * p.0 - intercept).abs()).fold(0.0, f64::max);
    let max_value = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    LinearEnvelope { slope, intercept, max_residual, max_value }
}
