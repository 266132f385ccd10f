use super::{asymptotic_class, BoundInputs, BoundsError, HorizonBounds};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;

/// Points of the δ-grids emitted for α*, β* and β.
const GRID_POINTS: usize = 11;

/// Flat key-value document with every constant, coefficient and evaluated bound.
///
/// Keys are dotted paths; non-finite numbers are written as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BoundReport {
    entries: BTreeMap<String, Value>,
}

fn number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(number).collect())
}

impl BoundReport {
    pub fn new(inputs: &BoundInputs, bounds: &HorizonBounds, epsilon: f64) -> Result<Self, BoundsError> {
        let mut r = Self { entries: BTreeMap::new() };
        let v = inputs.variants;
        r.text("variant.alpha_first_order", v.alpha_first_order.as_str());
        r.text("variant.beta_cross_term", v.beta_cross_term.as_str());
        r.text("variant.beta_star_scaling", v.beta_star_scaling.as_str());

        r.insert("horizon", json!(bounds.horizon));
        r.num("epsilon", epsilon);
        r.num("cost.m_lx", inputs.cost.m_lx);
        r.num("cost.l_lx", inputs.cost.l_lx);
        r.num("cost.m_lu", inputs.cost.m_lu);
        r.num("cost.l_lu", inputs.cost.l_lu);
        r.num("c_m", bounds.c_m);
        r.num("lipschitz.state", inputs.lipschitz.state);
        r.num("lipschitz.input", inputs.lipschitz.input);
        r.num("eds.gain", inputs.eds.gain);
        r.num("eds.decay", inputs.eds.decay);
        r.num("gamma_n", bounds.gamma_n);
        r.num("gamma_bar", bounds.gamma_bar);
        r.num("nu", inputs.nu);
        r.num("epsilon_n", bounds.epsilon_n());
        r.insert("horizon_floor", json!(bounds.nominal.horizon_floor));
        r.insert("gamma_sequence", numbers(&bounds.gamma));
        r.num("p", bounds.p);
        r.text("mismatch_law", &serde_json::to_string(&inputs.law).expect("law serializes"));
        r.num("mismatch_law.at_epsilon", inputs.law.eval(epsilon));
        r.num("r0", inputs.r0);
        r.num("eta_bar_star", inputs.eta_bar_star);

        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| epsilon * i as f64 / (GRID_POINTS - 1) as f64).collect();
        r.insert("delta_grid", numbers(&grid));

        r.num("alpha.pi_2", bounds.alpha.second_order);
        r.num("alpha.pi_1", bounds.alpha.first_order);
        r.num("alpha.value", bounds.alpha.eval(epsilon));
        r.insert("alpha.grid", numbers(&grid.iter().map(|&d| bounds.alpha.eval(d)).collect::<Vec<_>>()));

        let bs = &bounds.beta_star;
        r.num("beta_star.pi_2", bs.pi_second);
        r.num("beta_star.pi_1", bs.pi_first);
        r.num("beta_star.zeta_2", bs.zeta_second);
        r.num("beta_star.zeta_1", bs.zeta_first);
        r.num("beta_star.value", bs.eval(epsilon));
        r.insert("beta_star.grid", numbers(&grid.iter().map(|&d| bs.eval(d)).collect::<Vec<_>>()));

        if let Some(b) = &bounds.beta_general {
            r.num("beta.pi_2", b.pi_second);
            r.num("beta.pi_1", b.pi_first);
            r.num("beta.zeta_2", b.zeta_second);
            r.num("beta.zeta_1", b.zeta_first);
            r.text("beta.region", if b.region == super::BallRegion::Inside { "inside" } else { "outside" });
            r.num("beta.omega_bar", b.omega(epsilon)?);
            r.num("beta.value", b.eval(epsilon)?);
            let values = grid.iter().map(|&d| b.eval(d)).collect::<Result<Vec<_>, _>>()?;
            r.insert("beta.grid", numbers(&values));
        }
        if let Some(pt) = bounds.point {
            r.num("point.state_norm", pt.state_norm);
            r.num("point.ell_star", pt.ell_star);
            if let Some(v) = pt.v_inf {
                r.num("point.v_inf", v);
            }
        }

        let s = bounds.stability(epsilon);
        r.insert("stability.holds", json!(s.holds));
        r.num("stability.margin", s.margin);
        match bounds.max_mismatch() {
            Ok(d) => r.num("max_mismatch", d),
            Err(_) => r.insert("max_mismatch", Value::Null),
        }
        if s.holds {
            r.num("ratio", bounds.ratio(epsilon)?);
            if let Some(a) = bounds.affine(epsilon)? {
                r.num("affine_bound", a);
            }
        } else {
            r.insert("ratio", Value::Null);
        }
        let class = asymptotic_class(inputs.lipschitz.state);
        r.text("asymptotic.class", class.label());
        r.text("asymptotic.ratio_growth", class.ratio_growth());
        r.text("asymptotic.p_growth", class.p_growth());
        Ok(r)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Value) {
        self.entries.insert(key.into(), value);
    }

    pub fn num(&mut self, key: impl Into<String>, value: f64) {
        self.insert(key, number(value));
    }

    pub fn text(&mut self, key: impl Into<String>, value: &str) {
        self.insert(key, json!(value));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> &BTreeMap<String, Value> {
        &self.entries
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("string keys and JSON values serialize")
    }
}
