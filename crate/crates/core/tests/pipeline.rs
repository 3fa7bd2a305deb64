// End-to-end checks through the public API only.

use limitlab::limits::{limit_target, sweep, SweepConfig};
use limitlab::lorentz::PointSet;
use limitlab::{Dimension, EvalDomain, EvalOptions, FracOrder, HomogeneousKernel, Measure, OperatorSpec, RadialProfile};
use proptest::prelude::*;

fn dim(n: usize) -> Dimension {
    Dimension::new(n).unwrap()
}

#[test]
fn operator_approaches_target_pointwise() {
    let o = EvalOptions::default();
    let v = Measure::uniform_probability(dim(2), 1.0).unwrap();
    let spec = OperatorSpec::RadialMaximal {
        profile: RadialProfile::poisson(dim(2)),
        alpha: FracOrder::zero(),
    };
    let target = limit_target(&spec, &v).unwrap();
    let x = [1.5, -0.5];
    let err = |t: f64| (spec.eval(&v.dilate(t).unwrap(), &x, &o).unwrap() - target.eval(&x).unwrap()).abs();
    let (a, b) = (err(0.1), err(0.01));
    assert!(b < a && b < 1e-2 * target.eval(&x).unwrap(), "{a} {b}");
}

#[test]
fn atomic_fractional_integral_converges_to_signed_target() {
    let o = EvalOptions::default();
    let v = Measure::atomic(dim(1), vec![vec![-1.0], vec![0.5]], vec![0.25, 0.75]).unwrap();
    let spec = OperatorSpec::FracIntegral {
        kernel: HomogeneousKernel::sign(),
        alpha: FracOrder::new(0.5, dim(1)).unwrap(),
    };
    let target = limit_target(&spec, &v).unwrap();
    for x in [-3.0, 2.0] {
        let got = spec.eval(&v.dilate(1e-6).unwrap(), &[x], &o).unwrap();
        let want = target.eval(&[x]).unwrap();
        assert!((got - want).abs() < 1e-5 * want.abs());
    }
}

#[test]
fn sweep_reports_serialize() {
    let v = Measure::uniform_ball(dim(1), 1.0, 1.0).unwrap();
    let spec = OperatorSpec::RadialMaximal {
        profile: RadialProfile::indicator(dim(1)),
        alpha: FracOrder::new(0.3, dim(1)).unwrap(),
    };
    let cfg = SweepConfig {
        t_values: vec![0.04, 0.01],
        rho: 0.5,
        outer: 10.0,
        lambdas: vec![0.5, 2.0],
        type1_lambda_range: (1e-4, 10.0),
        type1_lambda_points: 32,
        budget: 2000,
        seed: 9,
    };
    let rep = sweep(&spec, &v, &cfg, &EvalOptions::default()).unwrap();
    let back: limitlab::limits::SweepReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    assert_eq!(rep.to_csv().lines().count(), 1 + 4);
    for r in &rep.records {
        assert!(r.usable && r.beta_t.unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dilation_preserves_mass(t in 1e-3f64..10.0, r in 0.1f64..3.0, n in 1usize..=3) {
        let v = Measure::uniform_ball(dim(n), r, 0.7).unwrap();
        let m0 = v.total_mass();
        let m1 = v.dilate(t).unwrap().total_mass();
        prop_assert!((m0 - m1).abs() <= 1e-12 * m0);
    }

    #[test]
    fn split_mass_adds_up(t in 1e-3f64..4.0, n in 1usize..=3) {
        let v = Measure::radial_from_fn(dim(n), |r| (-r * r).exp(), 4.0, 64).unwrap();
        let s = v.split(t).unwrap();
        let total = v.total_mass();
        prop_assert!((s.inner.total_mass() + s.eps_t * total - total).abs() <= 1e-10 * total);
        prop_assert!((s.r_t - t.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn level_set_estimates_are_nonincreasing(seed in 0u64..1000, l in 0.1f64..3.0) {
        let d = EvalDomain::exterior(dim(2), 0.0, 4.0).unwrap();
        let s = PointSet::sample(&d, 1000, seed, 1).unwrap()
            .evaluate(|x| Ok(1.0 / (x[0] * x[0] + x[1] * x[1]))).unwrap();
        let a = s.level_set(l);
        let b = s.level_set(2.0 * l);
        prop_assert!(b.estimate <= a.estimate);
        prop_assert!(a.std_error >= 0.0);
    }
}
