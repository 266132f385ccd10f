//! Run configuration: a single TOML document with every knob of a run.

use cempc::bounds::{BoundVariants, FormulaVariant};
use cempc::cost::QuadraticCost;
use cempc::experiments::{ClosedLoopOptions, ConstantsBudget, LqBudget, SweepConfig};
use cempc::linalg::matrix_from_rows;
use cempc::model::{InputConstraint, LinearModel, ParameterSpec, ParametricModel, TanhModel};
use cempc::ocp::SolverSettings;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Saturating second-order system; `theta_hat` defaults to the reference parameter.
    Tanh {
        #[serde(default = "default_coupling")]
        coupling: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_hat: Option<Vec<f64>>,
    },
    /// `x⁺ = A x + B u` with every entry of `[A B]` a parameter; the nominal
    /// parameter is `(A, B)` itself.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

fn default_coupling() -> f64 {
    TanhModel::default().coupling()
}

/// Where the constants feeding the bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    /// Closed-form and certified quantities (linear model, quadratic cost).
    Analytic,
    /// Sampled estimates.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    /// Defaults to `analytic` for linear models and `empirical` otherwise.
    pub source: Option<ConstantsSource>,
    pub empirical: ConstantsBudget,
    pub analytic: LqBudget,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self { source: None, empirical: ConstantsBudget::default(), analytic: LqBudget::default() }
    }
}

/// Sweep settings; the seed and the MPC horizon come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub levels: Vec<f64>,
    pub scenarios: usize,
    pub horizons: Vec<usize>,
    pub state_norms: Vec<f64>,
    pub state_radius: f64,
    pub oracle_horizon: usize,
    pub common_scenarios: bool,
    pub tie_tolerance: f64,
    pub max_failure_fraction: f64,
    pub parallel: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            levels: d.levels,
            scenarios: d.scenarios,
            horizons: d.horizons,
            state_norms: d.state_norms,
            state_radius: d.state_radius,
            oracle_horizon: d.oracle_horizon,
            common_scenarios: d.common_scenarios,
            tie_tolerance: d.tie_tolerance,
            max_failure_fraction: d.max_failure_fraction,
            parallel: d.parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required so no run depends on the clock.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Radius of the parameter ball around `theta_hat`.
    pub epsilon: f64,
    pub horizon: usize,
    /// Inclusive `[lo, hi]` searched by `optimal-horizon`.
    #[serde(default = "default_horizon_range")]
    pub horizon_range: [usize; 2],
    /// Initial state of `solve`, `simulate` and the state-dependent bounds.
    pub x0: Vec<f64>,
    /// True parameter of `simulate`; a seeded point on the ball boundary when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    pub model: ModelConfig,
    /// Quadratic weights; identity matrices when absent.
    #[serde(default)]
    pub cost: CostConfig,
    pub constraint: InputConstraint,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub variants: BoundVariants,
    #[serde(default)]
    pub simulation: ClosedLoopOptions,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_horizon_range() -> [usize; 2] {
    [10, 25]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Saturating tanh system with a scalar input bounded by 0.05.
    Tanh,
    /// Two-state linear system with a scalar input bounded by 0.1.
    Lq,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let common = |model, constraint, epsilon, x0| RunConfig {
            seed: 0,
            output_dir: default_output_dir(),
            epsilon,
            horizon: 10,
            horizon_range: default_horizon_range(),
            x0,
            theta_true: None,
            model,
            cost: CostConfig::default(),
            constraint,
            solver: SolverSettings::default(),
            variants: BoundVariants::default(),
            simulation: ClosedLoopOptions::default(),
            constants: ConstantsConfig::default(),
            sweep: SweepSection::default(),
        };
        match preset {
            Preset::Tanh => common(
                ModelConfig::Tanh { coupling: default_coupling(), theta_hat: None },
                InputConstraint::Box { lo: vec![-0.05], hi: vec![0.05] },
                0.01,
                vec![1.0, 1.0],
            ),
            Preset::Lq => common(
                ModelConfig::Linear { a: vec![vec![0.5, 0.1], vec![0.0, 0.4]], b: vec![vec![0.0], vec![1.0]] },
                InputConstraint::Box { lo: vec![-0.1], hi: vec![0.1] },
                0.02,
                vec![1.0, 1.0],
            ),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical serialization with `output_dir` blanked, so the
    /// same run written to two places carries the same hash.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn constants_source(&self) -> ConstantsSource {
        self.constants.source.unwrap_or(match self.model {
            ModelConfig::Linear { .. } => ConstantsSource::Analytic,
            ModelConfig::Tanh { .. } => ConstantsSource::Empirical,
        })
    }

    pub fn set_variant(&mut self, toggle: &str, value: FormulaVariant) -> Result<(), ConfigError> {
        let slot = match toggle {
            "alpha_first_order" => &mut self.variants.alpha_first_order,
            "beta_cross_term" => &mut self.variants.beta_cross_term,
            "beta_star_scaling" => &mut self.variants.beta_star_scaling,
            other => {
                return Err(invalid(
                    "variants",
                    format!("unknown toggle '{other}' (alpha_first_order, beta_cross_term, beta_star_scaling)"),
                ))
            }
        };
        *slot = value;
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let s = &self.sweep;
        SweepConfig {
            levels: s.levels.clone(),
            scenarios: s.scenarios,
            horizon: self.horizon,
            horizons: s.horizons.clone(),
            state_norms: s.state_norms.clone(),
            state_radius: s.state_radius,
            closed_loop: self.simulation,
            oracle_horizon: s.oracle_horizon,
            common_scenarios: s.common_scenarios,
            tie_tolerance: s.tie_tolerance,
            max_failure_fraction: s.max_failure_fraction,
            seed: self.seed,
            parallel: s.parallel,
        }
    }

    pub fn constants_budget(&self) -> ConstantsBudget {
        ConstantsBudget { horizon: self.horizon, ..self.constants.empirical }
    }

    pub fn lq_budget(&self) -> LqBudget {
        LqBudget { horizon: self.horizon, ..self.constants.analytic }
    }

    /// Instantiates the model, cost, input set and parameter ball.
    pub fn build(&self) -> Result<Parts, ConfigError> {
        let (model, theta_hat): (Box<dyn ParametricModel>, Vec<f64>) = match &self.model {
            ModelConfig::Tanh { coupling, theta_hat } => (
                Box::new(TanhModel::with_coupling(*coupling)),
                theta_hat.clone().unwrap_or_else(TanhModel::reference_theta),
            ),
            ModelConfig::Linear { a, b } => {
                let a = matrix_from_rows(a).ok_or_else(|| invalid("model.a", "rows must be nonempty and equally long"))?;
                let b = matrix_from_rows(b).ok_or_else(|| invalid("model.b", "rows must be nonempty and equally long"))?;
                let (model, theta) = LinearModel::entrywise(&a, &b).map_err(|e| invalid("model", e.to_string()))?;
                (Box::new(model), theta)
            }
        };
        let (n, m) = (model.state_dim(), model.input_dim());
        if theta_hat.len() != model.param_dim() {
            return Err(invalid("model.theta_hat", format!("expected {} entries", model.param_dim())));
        }
        let spec = ParameterSpec::new(theta_hat, self.epsilon).map_err(|e| invalid("epsilon", e.to_string()))?;
        let weight = |field: &str, rows: &Option<Vec<Vec<f64>>>, dim: usize| match rows {
            None => Ok(DMatrix::identity(dim, dim)),
            Some(rows) => {
                let w = matrix_from_rows(rows).ok_or_else(|| invalid(field, "rows must be nonempty and equally long"))?;
                if w.shape() != (dim, dim) {
                    return Err(invalid(field, format!("expected a {dim}×{dim} matrix")));
                }
                Ok(w)
            }
        };
        let cost = QuadraticCost::new(weight("cost.q", &self.cost.q, n)?, weight("cost.r", &self.cost.r, m)?)
            .map_err(|e| invalid("cost", e.to_string()))?;
        self.constraint.validate().map_err(|e| invalid("constraint", e.to_string()))?;
        if self.constraint.dim() != m {
            return Err(invalid("constraint", format!("expected input dimension {m}")));
        }
        if self.x0.len() != n {
            return Err(invalid("x0", format!("expected {n} entries")));
        }
        if let Some(theta) = &self.theta_true {
            if theta.len() != spec.dim() {
                return Err(invalid("theta_true", format!("expected {} entries", spec.dim())));
            }
            if spec.mismatch(theta) > spec.epsilon() * (1.0 + 1e-12) {
                return Err(invalid("theta_true", "outside the parameter ball"));
            }
        }
        if self.constants_source() == ConstantsSource::Analytic && model.as_linear().is_none() {
            return Err(invalid("constants.source", "analytic constants need a linear model"));
        }
        Ok(Parts { model, cost, constraint: self.constraint.clone(), spec })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be finite and nonnegative"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        let [lo, hi] = self.horizon_range;
        if lo == 0 || lo > hi {
            return Err(invalid("horizon_range", "expected 1 ≤ lo ≤ hi"));
        }
        if self.simulation.steps == 0 {
            return Err(invalid("simulation.steps", "must be at least 1"));
        }
        if self.sweep.scenarios == 0 {
            return Err(invalid("sweep.scenarios", "must be at least 1"));
        }
        if self.sweep.levels.iter().any(|e| !(*e >= 0.0 && e.is_finite())) || self.sweep.levels.is_empty() {
            return Err(invalid("sweep.levels", "expected a nonempty list of finite nonnegative numbers"));
        }
        if !(0.0..=1.0).contains(&self.sweep.max_failure_fraction) {
            return Err(invalid("sweep.max_failure_fraction", "must lie in [0, 1]"));
        }
        self.build().map(|_| ())
    }
}

/// Instantiated problem data.
#[derive(Debug)]
pub struct Parts {
    pub model: Box<dyn ParametricModel>,
    pub cost: QuadraticCost,
    pub constraint: InputConstraint,
    pub spec: ParameterSpec,
}

/// Documentation of every key, emitted above the defaults by `config-reference`.
pub const REFERENCE: &str = "\
# cempc run configuration (TOML). Keys without a default are required.
#
# seed              master seed (u64); every sample is derived from it
# output_dir        directory for all output files (default \"out\")
# epsilon           radius of the parameter ball around theta_hat
# horizon           MPC horizon N
# horizon_range     [lo, hi] searched by optimal-horizon (default [10, 25])
# x0                initial state of solve/simulate and of state-dependent bounds
# theta_true        true parameter of simulate (default: seeded point at distance epsilon)
#
# [model]           kind = \"tanh\" (coupling, optional theta_hat)
#                   or kind = \"linear\" (a, b as lists of rows; every entry is a parameter)
# [cost]            q, r as lists of rows (default identity)
# [constraint]      kind = \"box\" with lo, hi, or kind = \"polytope\" with rows of E in E u <= 1
# [solver]          method (auto | projected_gradient | quadratic_program), tolerance,
#                   max_iterations, armijo, contraction, restarts, restart_seed
# [variants]        alpha_first_order, beta_cross_term, beta_star_scaling: printed | corrected
# [simulation]      steps, stop_tol (stop once |x| <= stop_tol), warm_start
# [constants]       source = analytic | empirical (default: analytic for linear models)
# [constants.empirical]  sampling budget of the estimated constants; its horizon is
#                   replaced by the top-level horizon
# [constants.analytic]   budget of the certified linear-quadratic constants; its horizon
#                   is replaced by the top-level horizon
# [sweep]           levels (mismatch levels, each <= epsilon), scenarios, horizons,
#                   state_norms, state_radius, oracle_horizon, common_scenarios,
#                   tie_tolerance, max_failure_fraction, parallel
#
# Exit codes: 0 success, 2 configuration error, 3 stability condition violated,
# 4 solver failure budget exceeded.
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for p in [Preset::Tanh, Preset::Lq] {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let back = RunConfig::parse(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn diagnostics_name_the_field() {
        let mut c = RunConfig::preset(Preset::Lq);
        c.x0 = vec![1.0];
        assert!(c.validate().unwrap_err().to_string().starts_with("x0:"));
        let text: String = RunConfig::preset(Preset::Tanh)
            .to_toml()
            .lines()
            .filter(|l| !l.starts_with("seed ="))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(RunConfig::parse(&text).unwrap_err().to_string().contains("seed"));
        let text = RunConfig::preset(Preset::Tanh).to_toml() + "\n[extra]\nkey = 1\n";
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::preset(Preset::Tanh);
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        let c = RunConfig { output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
