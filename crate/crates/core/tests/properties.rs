use std::sync::OnceLock;

use nalgebra::DMatrix;
use nlsg::campaign::trial_field;
use nlsg::costs::RunningCost;
use nlsg::dynamics::{LevyTriplet, OUModel};
use nlsg::engine::{Family, GridConfig, Instance, LevyControlProblem, MCConfig, Propagator, RobustOUProblem};
use nlsg::lattice::{lattice_abs, lattice_join, lattice_meet, LatticeFunction, SamplePlan};
use proptest::prelude::*;

fn plan() -> &'static SamplePlan {
    static P: OnceLock<SamplePlan> = OnceLock::new();
    P.get_or_init(|| SamplePlan::build(1, 2.0, 41, 0, 0).unwrap())
}

fn mc() -> MCConfig {
    MCConfig { n_paths: 500, steps: 4, ..MCConfig::default() }
}

fn grid() -> GridConfig {
    GridConfig { half_width: 6.0, dx: 0.02 }
}

fn levy() -> &'static Propagator {
    static P: OnceLock<Propagator> = OnceLock::new();
    P.get_or_init(|| {
        let prob = LevyControlProblem::new(LevyTriplet::brownian(1, 0.7), RunningCost::quadratic(1, 1.0).unwrap(), 4.0).unwrap();
        Propagator::new(Instance::Levy(prob), mc(), &grid()).unwrap()
    })
}

fn ou() -> &'static Propagator {
    static P: OnceLock<Propagator> = OnceLock::new();
    P.get_or_init(|| {
        let model = OUModel::new(
            DMatrix::from_element(1, 1, -1.0),
            |_x, a| a.to_vec(),
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            1.0,
            vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, 1.0),
            2.0,
        )
        .unwrap();
        Propagator::new(Instance::Ou(RobustOUProblem::new(model)), mc(), &grid()).unwrap()
    })
}

fn field(seed: u64) -> LatticeFunction {
    trial_field(seed, 1).unwrap().to_lattice()
}

fn on_plan(u: &LatticeFunction) -> Vec<f64> {
    u.eval_plan(plan()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lattice_identities(s1 in 0u64..1000, s2 in 0u64..1000) {
        let (u, v) = (field(s1), field(s2));
        let j = on_plan(&lattice_join(&u, &v).unwrap());
        let m = on_plan(&lattice_meet(&u, &v).unwrap());
        let a = on_plan(&lattice_abs(&u));
        let (uu, vv) = (on_plan(&u), on_plan(&v));
        for i in 0..uu.len() {
            prop_assert!(j[i] >= uu[i].max(vv[i]) - 1e-15);
            prop_assert!(m[i] <= uu[i].min(vv[i]) + 1e-15);
            prop_assert!((j[i] + m[i] - uu[i] - vv[i]).abs() < 1e-12);
            prop_assert!((a[i] - uu[i].abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn cost_fenchel_young(scale in 0.2f64..3.0, a in -3.0f64..3.0, b in -3.0f64..3.0, lam in 0.0f64..1.0) {
        let c = RunningCost::quadratic(1, scale).unwrap();
        prop_assert!(c.eval(&[0.0]).abs() < 1e-12);
        prop_assert!(c.cstar(&[b]) >= a * b - c.eval(&[a]) - 1e-9);
        let mid = c.eval(&[lam * a + (1.0 - lam) * b]);
        prop_assert!(mid <= lam * c.eval(&[a]) + (1.0 - lam) * c.eval(&[b]) + 1e-12);
    }

    #[test]
    fn quartic_cost_is_convex_and_nonnegative(coef in 0.1f64..2.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let c = RunningCost::quartic(1, coef).unwrap();
        prop_assert!(c.eval(&[a]) >= 0.0);
        prop_assert!(c.eval(&[0.5 * (a + b)]) <= 0.5 * (c.eval(&[a]) + c.eval(&[b])) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn engine_is_monotone_and_translation_invariant(seed in 0u64..500, c in 0.0f64..0.5, ou_case: bool, upper: bool) {
        let prop = if ou_case { ou() } else { levy() };
        let family = if upper && ou_case { Family::K } else { Family::S };
        let u = field(seed);
        let v = lattice_join(&u, &field(seed + 1000)).unwrap();
        let su = on_plan(&prop.apply(family, 0.5, &u).unwrap());
        let sv = on_plan(&prop.apply(family, 0.5, &v).unwrap());
        let sc = on_plan(&prop.apply(family, 0.5, &u.shift(c)).unwrap());
        for i in 0..su.len() {
            prop_assert!(su[i] <= sv[i] + 1e-12);
            prop_assert!((sc[i] - su[i] - c).abs() < 1e-12);
        }
    }
}

#[test]
fn ou_upper_family_dominates_and_differs() {
    let u = field(7);
    let s = on_plan(&ou().apply(Family::S, 0.5, &u).unwrap());
    let k = on_plan(&ou().apply(Family::K, 0.5, &u).unwrap());
    let gap = s.iter().zip(&k).map(|(a, b)| b - a).fold(f64::NEG_INFINITY, f64::max);
    assert!(s.iter().zip(&k).all(|(a, b)| *b >= *a - 1e-12));
    assert!(gap > 1e-3, "K should exceed S somewhere, gap {gap}");
}

#[test]
fn levy_upper_family_is_the_semigroup() {
    let u = field(11);
    let s = on_plan(&levy().apply(Family::S, 0.5, &u).unwrap());
    let k = on_plan(&levy().apply(Family::K, 0.5, &u).unwrap());
    assert_eq!(s, k);
}

#[test]
fn constants_are_fixed_points() {
    for prop in [levy(), ou()] {
        let out = on_plan(&prop.apply(Family::S, 1.0, &LatticeFunction::constant(1, -0.3)).unwrap());
        assert!(out.iter().all(|v| (v + 0.3).abs() < 1e-12));
    }
}
