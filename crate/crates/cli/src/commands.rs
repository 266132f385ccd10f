use crate::config::{ConfigError, ConstantsSource, Parts, RunConfig};
use anyhow::Context;
use cempc::bounds::{optimal_horizon, BoundInputs, BoundReport, BoundsError, EvaluationPoint};
use cempc::cost::StageCost;
use cempc::experiments::{
    estimate_empirical_constants, estimate_infinite_cost, lq_constants, simulate_closed_loop, sweep_competitive_ratio,
    sweep_horizon, sweep_input_perturbation, sweep_scalable_perturbation, write_sweep, ExperimentError, RunHeader,
    Setup, SweepKind, TailPolicy,
};
use cempc::linalg::norm;
use cempc::ocp::Solver;
use cempc::sampling::{scenario_seed, seeded_rng, unit_direction};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Seed axis of the true parameter drawn by `simulate`.
const SIMULATE_AXIS: u64 = 11;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("stability condition violated: {0}")]
    Unstable(String),
    #[error("failure budget exceeded: {0}")]
    Failures(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Unstable(_) => 3,
            CliError::Failures(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::TooManyFailures { .. } => CliError::Failures(e.to_string()),
            ExperimentError::Bounds(b) => b.into(),
            ExperimentError::Config(m) => CliError::Config(ConfigError::Invalid { field: "sweep".into(), message: m }),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::Unstable { .. } | BoundsError::NoStableHorizon { .. } => CliError::Unstable(e.to_string()),
            other => CliError::Other(other.into()),
        }
    }
}

/// CSV number cell; negative zero prints as `0`.
fn cell(v: f64) -> String {
    (v + 0.0).to_string()
}

/// A validated configuration with its instantiated problem data.
pub struct Run {
    pub config: RunConfig,
    parts: Parts,
    hash: String,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let parts = config.build()?;
        let hash = config.hash();
        Ok(Self { config, parts, hash })
    }

    fn setup(&self) -> Setup<'_> {
        Setup {
            model: self.parts.model.as_ref(),
            cost: &self.parts.cost,
            constraint: &self.parts.constraint,
            spec: &self.parts.spec,
            solver: Solver::new(self.config.solver),
        }
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let dir = self.config.output_dir.as_path();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn header(&self, command: &str) -> String {
        format!("# config_hash={}, seed={}, command={command}\n", self.hash, self.config.seed)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Writes the effective configuration next to the results.
    fn write_config(&self) -> Result<(), CliError> {
        self.write("config.toml", self.config.to_toml()).map(|_| ())
    }

    fn point(&self) -> EvaluationPoint {
        let x0 = &self.config.x0;
        EvaluationPoint { state_norm: norm(x0), ell_star: self.parts.cost.state_cost(x0), v_inf: None }
    }

    /// Bound inputs from the configured constants source, plus the raw constants.
    fn constants(&self, point: Option<EvaluationPoint>, horizon_cap: usize) -> Result<(BoundInputs, Value), CliError> {
        let setup = self.setup();
        let variants = self.config.variants;
        match self.config.constants_source() {
            ConstantsSource::Empirical => {
                let mut budget = self.config.constants_budget();
                budget.gamma_horizon = budget.gamma_horizon.max(horizon_cap);
                let c = estimate_empirical_constants(&setup, &budget, self.config.seed)?;
                let inputs = c.bound_inputs(
                    self.parts.cost.constants(),
                    self.parts.model.lipschitz_uniform(&self.parts.spec),
                    variants,
                    point,
                );
                Ok((inputs, serde_json::to_value(&c).context("serializing constants")?))
            }
            ConstantsSource::Analytic => {
                let mut budget = self.config.lq_budget();
                budget.gamma_horizon = budget.gamma_horizon.max(horizon_cap);
                let c = lq_constants(&setup, &budget, variants, self.config.seed)?;
                let inputs = BoundInputs { point, ..c.inputs.clone() };
                Ok((inputs, serde_json::to_value(&c).context("serializing constants")?))
            }
        }
    }

    fn source_label(&self) -> &'static str {
        match self.config.constants_source() {
            ConstantsSource::Analytic => "analytic",
            ConstantsSource::Empirical => "empirical",
        }
    }

    pub fn bounds(&self) -> Result<(), CliError> {
        let n = self.config.horizon;
        let (inputs, _) = self.constants(Some(self.point()), n)?;
        let bounds = inputs.at_horizon(n)?;
        let mut report = BoundReport::new(&inputs, &bounds, self.config.epsilon)?;
        report.text("run.config_hash", &self.hash);
        report.insert("run.seed", json!(self.config.seed));
        report.text("constants.source", self.source_label());
        self.write_config()?;
        let path = self.write("bounds.json", report.to_json() + "\n")?;
        let check = bounds.stability(self.config.epsilon);
        println!("wrote {}", path.display());
        println!("epsilon_n = {:.6e}, alpha = {:.6e}, margin = {:.6e}", bounds.epsilon_n(), bounds.alpha.eval(self.config.epsilon), check.margin);
        if check.holds {
            println!("ratio = {:.6e}", bounds.ratio(self.config.epsilon)?);
            Ok(())
        } else {
            Err(CliError::Unstable(format!("margin {:.6e} at epsilon {}", check.margin, self.config.epsilon)))
        }
    }

    pub fn solve(&self) -> Result<(), CliError> {
        let setup = self.setup();
        let sol = setup
            .solve(self.config.horizon, self.parts.spec.theta_hat(), &self.config.x0)
            .context("solving the finite-horizon problem")?;
        let (n, m) = (self.config.x0.len(), self.parts.model.input_dim());
        let mut out = self.header("solve");
        out += &format!(
            "# value={:e}, converged={}, iterations={}\n",
            sol.value, sol.diagnostics.converged, sol.diagnostics.iterations
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["k".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.extend((1..=m).map(|j| format!("u{j}")));
        head.push("stage_cost".into());
        w.write_record(&head).context("writing csv")?;
        for (k, x) in sol.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| cell(*v)));
            match sol.inputs.get(k) {
                Some(u) => {
                    row.extend(u.iter().map(|v| cell(*v)));
                    row.push(cell(cempc::cost::stage_cost(&self.parts.cost, x.as_slice(), u.as_slice())));
                }
                None => {
                    row.extend((0..m).map(|_| String::new()));
                    row.push(cell(self.parts.cost.state_cost(x.as_slice())));
                }
            }
            w.write_record(&row).context("writing csv")?;
        }
        out += &String::from_utf8(w.into_inner().context("flushing csv")?).context("csv is utf-8")?;
        self.write_config()?;
        let path = self.write("solve.csv", out)?;
        println!("wrote {} (value {:e})", path.display(), sol.value);
        Ok(())
    }

    fn theta_true(&self) -> Vec<f64> {
        match &self.config.theta_true {
            Some(t) => t.clone(),
            None => {
                let spec = &self.parts.spec;
                let mut rng = seeded_rng(scenario_seed(self.config.seed, SIMULATE_AXIS, 0));
                spec.displaced(unit_direction(&mut rng, spec.dim()).as_slice(), spec.epsilon())
            }
        }
    }

    pub fn simulate(&self) -> Result<(), CliError> {
        let setup = self.setup();
        let theta = self.theta_true();
        let trace = simulate_closed_loop(
            &setup,
            &theta,
            self.parts.spec.theta_hat(),
            self.config.horizon,
            &self.config.x0,
            self.config.simulation,
        )?;
        let est = estimate_infinite_cost(&trace, TailPolicy::default());
        let (n, m) = (self.config.x0.len(), self.parts.model.input_dim());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.extend((1..=m).map(|j| format!("u{j}")));
        head.extend(["stage_cost".to_string(), "planned_value".to_string()]);
        w.write_record(&head).context("writing csv")?;
        for (t, x) in trace.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| cell(*v)));
            match trace.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(|v| cell(*v))),
                None => row.extend((0..m).map(|_| String::new())),
            }
            row.push(trace.stage_costs.get(t).map_or(String::new(), |c| cell(*c)));
            row.push(trace.planned_values.get(t).map_or(String::new(), |c| cell(*c)));
            w.write_record(&row).context("writing csv")?;
        }
        let mut out = self.header("simulate");
        out += &String::from_utf8(w.into_inner().context("flushing csv")?).context("csv is utf-8")?;
        let summary = json!({
            "config_hash": self.hash,
            "seed": self.config.seed,
            "theta_true": theta,
            "mismatch": self.parts.spec.mismatch(&theta),
            "cost": est.cost,
            "tail_bound": if est.tail.is_finite() { json!(est.tail) } else { json!("inf") },
            "steps": trace.inputs.len(),
            "terminated_early": trace.terminated_early,
            "final_state_norm": norm(trace.final_state()),
            "unconverged_solves": trace.unconverged_solves,
            "failure": trace.failure,
        });
        self.write_config()?;
        let path = self.write("simulate.csv", out)?;
        self.write("simulate.json", serde_json::to_string_pretty(&summary).context("serializing")? + "\n")?;
        println!("wrote {} (J_T {:e}, tail {:e})", path.display(), est.cost, est.tail);
        match trace.failure {
            Some(f) => Err(CliError::Failures(format!("solver failed at step {}: {f}", trace.inputs.len()))),
            None => Ok(()),
        }
    }

    pub fn sweep(&self, kind: SweepKind) -> Result<(), CliError> {
        let setup = self.setup();
        let cfg = self.config.sweep_config();
        if let Some(level) = cfg.levels.iter().find(|&&e| e > self.config.epsilon) {
            return Err(ConfigError::Invalid {
                field: "sweep.levels".into(),
                message: format!("level {level} exceeds epsilon {}", self.config.epsilon),
            }
            .into());
        }
        let result = match kind {
            SweepKind::InputPerturb => sweep_input_perturbation(&setup, &cfg)?,
            SweepKind::Scalable => sweep_scalable_perturbation(&setup, &cfg)?,
            SweepKind::Ratio => {
                let (inputs, _) = self.constants(None, cfg.horizon)?;
                sweep_competitive_ratio(&setup, &cfg, Some(&inputs))?
            }
            SweepKind::Horizon => sweep_horizon(&setup, &cfg)?,
        };
        self.write_config()?;
        let header = RunHeader { config_hash: self.hash.clone(), seed: self.config.seed };
        let files = write_sweep(&result, self.out_dir()?, &header)?;
        for f in &files {
            println!("wrote {}", f.display());
        }
        println!("{} records, {} failed scenarios", result.records.len(), result.failures);
        Ok(())
    }

    pub fn optimal_horizon(&self) -> Result<(), CliError> {
        let [lo, hi] = self.config.horizon_range;
        let (inputs, _) = self.constants(None, hi)?;
        let choice = optimal_horizon(&inputs, self.config.epsilon, lo..=hi)?;
        let mut out = self.header("optimal-horizon");
        out += &format!("# optimal_horizon={}, ratio={:e}\nhorizon,ratio\n", choice.horizon, choice.ratio);
        for (n, r) in &choice.table {
            out += &format!("{n},{}\n", r.map_or(String::new(), |r| r.to_string()));
        }
        self.write_config()?;
        let path = self.write("optimal_horizon.csv", out)?;
        println!("wrote {}", path.display());
        println!("N* = {} (R_N = {:.6e})", choice.horizon, choice.ratio);
        Ok(())
    }

    pub fn constants_bundle(&self) -> Result<(), CliError> {
        let (_, raw) = self.constants(None, self.config.horizon_range[1])?;
        let doc = json!({
            "config_hash": self.hash,
            "seed": self.config.seed,
            "source": self.source_label(),
            "constants": raw,
        });
        self.write_config()?;
        let path = self.write("constants.json", serde_json::to_string_pretty(&doc).context("serializing")? + "\n")?;
        println!("wrote {}", path.display());
        Ok(())
    }
}
