use super::{InputConstraint, ModelError, ParameterSpec, ParametricModel};
use crate::linalg::norm;
use crate::sampling::{halton_point, scenario_seed, seeded_rng, unit_direction};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Class-K bound `L_d` with `‖Δf(x, u; θ)‖ ≤ L_d(δ(θ))·(‖x‖ + ‖u‖)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MismatchLipschitz {
    Linear { slope: f64 },
    /// Knots `(δ, L_d(δ))` with increasing δ; `(0, 0)` is implicit. Extended
    /// beyond the last knot along the ray through it.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

impl MismatchLipschitz {
    pub fn eval(&self, delta: f64) -> f64 {
        match self {
            MismatchLipschitz::Linear { slope } => slope * delta,
            MismatchLipschitz::PiecewiseLinear { knots } => {
                let mut prev = (0.0, 0.0);
                for &(d, v) in knots {
                    if delta <= d {
                        let w = if d > prev.0 { (delta - prev.0) / (d - prev.0) } else { 1.0 };
                        return prev.1 + w * (v - prev.1);
                    }
                    prev = (d, v);
                }
                if prev.0 > 0.0 {
                    prev.1 * delta / prev.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Smallest `δ ≥ 0` with `L_d(δ) ≥ value`; `None` when `L_d ≡ 0`.
    pub fn inverse(&self, value: f64) -> Option<f64> {
        if value <= 0.0 {
            return Some(0.0);
        }
        match self {
            MismatchLipschitz::Linear { slope } => (*slope > 0.0).then(|| value / slope),
            MismatchLipschitz::PiecewiseLinear { knots } => {
                let mut prev = (0.0, 0.0);
                for &(d, v) in knots {
                    if value <= v && v > prev.1 {
                        return Some(prev.0 + (value - prev.1) / (v - prev.1) * (d - prev.0));
                    }
                    prev = (d, v);
                }
                (prev.1 > 0.0).then(|| value * prev.0 / prev.1)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            MismatchLipschitz::Linear { slope } => *slope == 0.0,
            MismatchLipschitz::PiecewiseLinear { knots } => knots.iter().all(|k| k.1 == 0.0),
        }
    }

    /// Slope of the smallest linear law dominating this one on its knots.
    pub fn linear_hull(&self) -> f64 {
        match self {
            MismatchLipschitz::Linear { slope } => *slope,
            MismatchLipschitz::PiecewiseLinear { knots } => knots
                .iter()
                .filter(|k| k.0 > 0.0)
                .map(|k| k.1 / k.0)
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchSource {
    Analytic,
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBudget {
    /// Number of mismatch levels `δ_j = ε·j/levels`.
    pub levels: usize,
    pub samples_per_level: usize,
    /// States are drawn from the box `[−r, r]^n`.
    pub state_radius: f64,
    /// Cap on input magnitude for unbounded input sets.
    pub input_cap: f64,
}

impl Default for FitBudget {
    fn default() -> Self {
        Self { levels: 8, samples_per_level: 500, state_radius: 2.0, input_cap: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchFit {
    /// Smallest linear law over the samples (max ratio), with a rounding guard.
    pub fitted: MismatchLipschitz,
    /// Per-level sample maxima, made monotone.
    pub envelope: MismatchLipschitz,
    pub analytic: Option<MismatchLipschitz>,
    pub samples: usize,
    pub skipped_zero: usize,
}

impl MismatchFit {
    /// The analytic law when the model provides one, otherwise the fitted one.
    pub fn law(&self) -> &MismatchLipschitz {
        self.analytic.as_ref().unwrap_or(&self.fitted)
    }

    pub fn source(&self) -> MismatchSource {
        if self.analytic.is_some() {
            MismatchSource::Analytic
        } else {
            MismatchSource::Fitted
        }
    }
}

const ROUNDING_GUARD: f64 = 1.0 + 1e-12;

fn random_input<R: Rng + ?Sized>(rng: &mut R, constraint: &InputConstraint, cap: f64) -> Vec<f64> {
    match constraint {
        InputConstraint::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| {
                let (l, h) = (l.max(-cap), h.min(cap));
                l + (h - l) * rng.random::<f64>()
            })
            .collect(),
        InputConstraint::Polytope { .. } => {
            let d = unit_direction(rng, constraint.dim());
            let t = constraint.extent_along(d.as_slice()).min(cap) * rng.random::<f64>();
            (d * t).as_slice().to_vec()
        }
    }
}

/// Largest-norm vertex of a box (or the farthest sampled boundary point of a polytope).
fn extreme_input(constraint: &InputConstraint, cap: f64) -> Vec<f64> {
    match constraint {
        InputConstraint::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| if h.min(cap) >= (-l).min(cap) { h.min(cap) } else { l.max(-cap) })
            .collect(),
        InputConstraint::Polytope { .. } => {
            let m = constraint.dim();
            let mut best = vec![0.0; m];
            let mut best_norm = 0.0;
            for k in 0..256u64 {
                let d: Vec<f64> = halton_point(k, m).iter().map(|v| 2.0 * v - 1.0).collect();
                let n = norm(&d);
                if n < 1e-9 {
                    continue;
                }
                let t = constraint.extent_along(&d).min(cap * n) / n;
                if t * n > best_norm {
                    best_norm = t * n;
                    best = d.iter().map(|v| v * t).collect();
                }
            }
            best
        }
    }
}

/// Fits `L_d` from samples of `‖Δf‖/(δ(‖x‖+‖u‖))` over mismatch levels up to ε.
///
/// The sample design includes the extreme cases `x = 0` (largest input) and
/// `u = 0` (small state) along every parameter axis, which is where the ratio
/// peaks for models affine in θ.
pub fn fit_mismatch_lipschitz(
    model: &dyn ParametricModel,
    constraint: &InputConstraint,
    spec: &ParameterSpec,
    budget: FitBudget,
    seed: u64,
) -> Result<MismatchFit, ModelError> {
    if budget.levels < 2 {
        return Err(ModelError::Spec("mismatch fit needs at least two levels".into()));
    }
    super::check_dim("parameter", model.param_dim(), spec.dim())?;
    super::check_dim("constraint", model.input_dim(), constraint.dim())?;
    let analytic = model.analytic_mismatch();
    let eps = spec.epsilon();
    if eps == 0.0 {
        let zero = MismatchLipschitz::Linear { slope: 0.0 };
        return Ok(MismatchFit { fitted: zero.clone(), envelope: zero, analytic, samples: 0, skipped_zero: 0 });
    }
    let (n, p) = (model.state_dim(), model.param_dim());
    let mut rng = seeded_rng(seed);
    let u_extreme = extreme_input(constraint, budget.input_cap);
    let mut next_nom = vec![0.0; n];
    let mut next_pert = vec![0.0; n];
    let mut knots = Vec::with_capacity(budget.levels);
    let (mut samples, mut skipped, mut running) = (0usize, 0usize, 0.0f64);
    for level in 1..=budget.levels {
        let delta = eps * level as f64 / budget.levels as f64;
        let mut level_max: f64 = 0.0;
        for i in 0..budget.samples_per_level {
            let (x, u, dir): (Vec<f64>, Vec<f64>, Vec<f64>) = if i < 2 * p {
                let mut d = vec![0.0; p];
                d[i / 2] = if i % 2 == 0 { 1.0 } else { -1.0 };
                (vec![0.0; n], u_extreme.clone(), d)
            } else if i < 4 * p {
                let j = i - 2 * p;
                let mut d = vec![0.0; p];
                d[j / 2] = if j % 2 == 0 { 1.0 } else { -1.0 };
                let x = unit_direction(&mut rng, n) * (1e-3 * budget.state_radius);
                (x.as_slice().to_vec(), vec![0.0; model.input_dim()], d)
            } else {
                let x: Vec<f64> =
                    (0..n).map(|_| budget.state_radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
                let u = random_input(&mut rng, constraint, budget.input_cap);
                (x, u, unit_direction(&mut rng, p).as_slice().to_vec())
            };
            let theta = spec.displaced(&dir, delta);
            let scale = norm(&x) + norm(&u);
            if scale == 0.0 {
                skipped += 1;
                continue;
            }
            model.eval(&x, &u, spec.theta_hat(), &mut next_nom);
            model.eval(&x, &u, &theta, &mut next_pert);
            let err = crate::linalg::distance(&next_pert, &next_nom);
            let actual = spec.mismatch(&theta);
            if actual > 0.0 {
                level_max = level_max.max(err / (actual * scale));
            }
            samples += 1;
        }
        running = running.max(delta * level_max * ROUNDING_GUARD);
        knots.push((delta, running));
    }
    if samples == 0 {
        return Err(ModelError::DegenerateSampling);
    }
    let envelope = MismatchLipschitz::PiecewiseLinear { knots };
    let fitted = MismatchLipschitz::Linear { slope: envelope.linear_hull() };
    Ok(MismatchFit { fitted, envelope, analytic, samples, skipped_zero: skipped })
}

/// Sample-maximum estimate of `R(x; ε) = max_{u ∈ U, θ ∈ ∂Θ} ‖Δf(x, u; θ)‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    /// `max(sample_max, polished)`.
    pub value: f64,
    /// Maximum over the first `budget` samples; nondecreasing in the budget.
    pub sample_max: f64,
    /// Result of coordinate ascent from the best sample.
    pub polished: f64,
    pub budget: usize,
}

fn unpair(i: u64) -> (u64, u64) {
    let w = (((8 * i + 1) as f64).sqrt() as u64 - 1) / 2;
    let w = if (w + 1) * (w + 2) / 2 <= i { w + 1 } else { w };
    let t = w * (w + 1) / 2;
    let k = i - t;
    (w - k, k)
}

fn input_point(constraint: &InputConstraint, k: u64, cap: f64) -> Vec<f64> {
    let m = constraint.dim();
    match constraint {
        InputConstraint::Box { lo, hi } => {
            let corners = 1u64 << m.min(4);
            let lo: Vec<f64> = lo.iter().map(|l| l.max(-cap)).collect();
            let hi: Vec<f64> = hi.iter().map(|h| h.min(cap)).collect();
            if k < corners {
                (0..m).map(|i| if i < 4 && (k >> i) & 1 == 1 { hi[i] } else { lo[i] }).collect()
            } else {
                halton_point(k - corners, m).iter().enumerate().map(|(i, h)| lo[i] + h * (hi[i] - lo[i])).collect()
            }
        }
        InputConstraint::Polytope { .. } => {
            let axis = 2 * m as u64;
            let (dir, t) = if k < axis {
                let mut d = vec![0.0; m];
                d[(k / 2) as usize] = if k % 2 == 0 { 1.0 } else { -1.0 };
                (d, 1.0)
            } else {
                let h = halton_point(k - axis, m + 1);
                let d: Vec<f64> = h[..m].iter().map(|v| 2.0 * v - 1.0).collect();
                (d, h[m])
            };
            let n = norm(&dir);
            if n < 1e-12 {
                return vec![0.0; m];
            }
            let unit: Vec<f64> = dir.iter().map(|v| v / n).collect();
            let r = constraint.extent_along(&unit).min(cap) * t;
            unit.iter().map(|v| v * r).collect()
        }
    }
}

fn param_direction(p: usize, j: u64, seed: u64) -> Vec<f64> {
    if j < 2 * p as u64 {
        let mut d = vec![0.0; p];
        d[(j / 2) as usize] = if j % 2 == 0 { 1.0 } else { -1.0 };
        d
    } else {
        let mut rng = seeded_rng(scenario_seed(seed, 0x5eed, j));
        unit_direction(&mut rng, p).as_slice().to_vec()
    }
}

/// Deterministic low-discrepancy sampling over `U × ∂Θ` followed by coordinate ascent.
pub fn max_one_step_deviation(
    model: &dyn ParametricModel,
    x: &[f64],
    constraint: &InputConstraint,
    spec: &ParameterSpec,
    budget: usize,
    seed: u64,
) -> Result<DeviationEstimate, ModelError> {
    super::check_dim("state", model.state_dim(), x.len())?;
    super::check_dim("parameter", model.param_dim(), spec.dim())?;
    super::check_dim("constraint", model.input_dim(), constraint.dim())?;
    let budget = budget.max(1);
    let eps = spec.epsilon();
    if eps == 0.0 {
        return Ok(DeviationEstimate { value: 0.0, sample_max: 0.0, polished: 0.0, budget });
    }
    let cap = 1.0;
    let (n, p) = (model.state_dim(), model.param_dim());
    let mut nom = vec![0.0; n];
    let mut pert = vec![0.0; n];
    let mut deviation = |u: &[f64], dir: &[f64]| -> f64 {
        let dn = norm(dir);
        let unit: Vec<f64> = dir.iter().map(|d| d / dn).collect();
        let theta = spec.displaced(&unit, eps);
        model.eval(x, u, spec.theta_hat(), &mut nom);
        model.eval(x, u, &theta, &mut pert);
        crate::linalg::distance(&pert, &nom)
    };
    let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
    for i in 0..budget as u64 {
        let (j, k) = unpair(i);
        let u = input_point(constraint, k, cap);
        let d = param_direction(p, j, seed);
        let v = deviation(&u, &d);
        if v > best.0 {
            best = (v, u, d);
        }
    }
    let sample_max = best.0;
    let (mut value, mut u, mut d) = best;
    let mut step_u = 0.25 * constraint.max_norm(cap).max(1e-12);
    let mut step_d = 0.25;
    for _ in 0..60 {
        let mut improved = false;
        for i in 0..u.len() {
            for s in [step_u, -step_u] {
                let mut cand = u.clone();
                cand[i] += s;
                constraint.project(&mut cand);
                let v = deviation(&cand, &d);
                if v > value {
                    (value, u, improved) = (v, cand, true);
                }
            }
        }
        for i in 0..p {
            for s in [step_d, -step_d] {
                let mut cand = d.clone();
                cand[i] += s;
                if norm(&cand) < 1e-12 {
                    continue;
                }
                let v = deviation(&u, &cand);
                if v > value {
                    (value, d, improved) = (v, cand, true);
                }
            }
        }
        if !improved {
            step_u *= 0.5;
            step_d *= 0.5;
        }
    }
    Ok(DeviationEstimate { value: value.max(sample_max), sample_max, polished: value, budget })
}
