use cempc::bounds::{
    lambda_factor, nominal_stability, BoundInputs, BoundVariants, ControllabilityConstants, EdsConstants,
    EvaluationPoint, FormulaVariant,
};
use cempc::cost::CostConstants;
use cempc::model::{Lipschitz, MismatchLipschitz};
use proptest::prelude::*;

fn variant() -> impl Strategy<Value = FormulaVariant> {
    prop_oneof![Just(FormulaVariant::Printed), Just(FormulaVariant::Corrected)]
}

prop_compose! {
    fn inputs()(m_lx in 0.1..4.0f64, dx in 0.0..4.0f64, m_lu in 0.1..4.0f64, du in 0.0..4.0f64,
                lx in 0.1..1.5f64, lu in 0.0..1.0f64, gain in 0.01..5.0f64, decay in 0.0..0.99f64,
                gamma_bar in 0.0..5.0f64, nu in 0.0..5.0f64, slope in 0.0..3.0f64, r0 in 0.0..1.0f64,
                eta in 0.0..10.0f64, norm in 0.0..2.0f64,
                v in (variant(), variant(), variant())) -> BoundInputs {
        BoundInputs {
            cost: CostConstants { m_lx, l_lx: m_lx + dx, m_lu, l_lu: m_lu + du },
            lipschitz: Lipschitz { state: lx, input: lu },
            eds: EdsConstants::new(gain, decay).unwrap(),
            gammas: vec![],
            gamma_bar,
            nu,
            law: MismatchLipschitz::Linear { slope },
            r0,
            eta_bar_star: eta,
            variants: BoundVariants { alpha_first_order: v.0, beta_cross_term: v.1, beta_star_scaling: v.2 },
            point: Some(EvaluationPoint { state_norm: norm, ell_star: norm * norm, v_inf: None }),
        }
    }
}

proptest! {
    #[test]
    fn bounds_vanish_at_zero_mismatch(inp in inputs(), horizon in 1usize..30) {
        let b = inp.at_horizon(horizon).unwrap();
        prop_assert_eq!(b.alpha.eval(0.0), 0.0);
        prop_assert_eq!(b.beta_star.eval(0.0), 0.0);
        prop_assert_eq!(b.beta_general.as_ref().unwrap().eval(0.0).unwrap(), 0.0);
    }

    #[test]
    fn bounds_nondecreasing_in_mismatch(inp in inputs(), horizon in 1usize..30, eps in 1e-4..0.5f64) {
        let b = inp.at_horizon(horizon).unwrap();
        let (mut alpha, mut beta) = (0.0, 0.0);
        for j in 0..50 {
            let delta = eps * j as f64 / 49.0;
            let (a, s) = (b.alpha.eval(delta), b.beta_star.eval(delta));
            prop_assert!(a >= alpha && s >= beta, "at {}: {} < {} or {} < {}", delta, a, alpha, s, beta);
            alpha = a;
            beta = s;
        }
    }

    #[test]
    fn lambda_factor_is_capped(decay in 0.0..0.999f64, horizon in 1usize..=50) {
        for k in 0..horizon {
            prop_assert!(lambda_factor(horizon, k, decay).unwrap() <= 2.0 / (1.0 - decay));
        }
    }

    #[test]
    fn stability_margin_matches_its_definition(inp in inputs(), horizon in 2usize..30, eps in 0.0..0.2f64) {
        let b = inp.at_horizon(horizon).unwrap();
        let check = b.stability(eps);
        prop_assert_eq!(check.margin, 1.0 - b.epsilon_n() - b.alpha.eval(eps));
        prop_assert_eq!(check.holds, b.ratio(eps).is_ok());
    }
}

#[test]
fn epsilon_n_decays_like_one_over_horizon() {
    for (gamma, nu) in [(0.5, 0.3), (2.0, 1.0), (10.0, 2.4)] {
        let c = ControllabilityConstants { gamma_n: gamma, gamma_bar: gamma, nu };
        let scaled = |n: usize| n as f64 * nominal_stability(n, &c).unwrap().epsilon_n;
        let (a, b) = (scaled(1000), scaled(2000));
        assert!(((a - b) / b).abs() < 0.01, "N·ε_N: {a} vs {b}");
    }
}
