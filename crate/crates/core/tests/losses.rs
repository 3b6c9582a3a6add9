use proptest::prelude::*;
use unaligned_cp::{LossKind, LossSpec};

fn spec(kind: LossKind, beta: f64) -> LossSpec<f64> {
    match kind {
        LossKind::BetaDivergence => LossSpec::beta_divergence(beta, 1e-6),
        k => LossSpec::of_kind(k),
    }
}

fn kinds() -> impl Strategy<Value = LossKind> {
    prop_oneof![
        Just(LossKind::Gaussian),
        Just(LossKind::BernoulliLogit),
        Just(LossKind::Poisson),
        Just(LossKind::BetaDivergence),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dmodel_matches_central_difference(
        kind in kinds(),
        beta in prop_oneof![Just(0.5), Just(1.5), Just(2.0), Just(3.0)],
        m in 0.1f64..10.0,
        x in 0.0f64..10.0,
    ) {
        let l = spec(kind, beta);
        let h = 1e-6;
        let fd = (l.value(m + h, x).unwrap() - l.value(m - h, x).unwrap()) / (2.0 * h);
        let g = l.dmodel(m, x).unwrap();
        let scale = g.abs().max(1e-2);
        prop_assert!((fd - g).abs() / scale < 1e-5, "{kind} m={m} x={x}: fd {fd} vs {g}");
    }

    #[test]
    fn analytic_minimizer_is_minimal(
        kind in kinds(),
        beta in prop_oneof![Just(0.5), Just(1.5), Just(2.0)],
        m in 0.01f64..10.0,
        x in 0.01f64..0.99,
        scale in 0.1f64..10.0,
    ) {
        let l = spec(kind, beta);
        let (x, best) = match kind {
            LossKind::BernoulliLogit => (x, (x / (1.0 - x)).ln()),
            _ => (x * scale, x * scale),
        };
        let m = if kind == LossKind::BernoulliLogit { m - 5.0 } else { m };
        prop_assert!(l.value(m, x).unwrap() >= l.value(best, x).unwrap() - 1e-12);
    }

    #[test]
    fn gaussian_swap_symmetry(m in -10.0f64..10.0, x in -10.0f64..10.0) {
        let l = LossSpec::<f64>::gaussian();
        prop_assert_eq!(l.value(m, x).unwrap(), l.value(x, m).unwrap());
        prop_assert_eq!(l.dmodel(m, x).unwrap(), -l.dmodel(x, m).unwrap());
    }

    #[test]
    fn clipped_norm_is_bounded(v in proptest::collection::vec(-100.0f64..100.0, 1..20), c in 0.01f64..10.0) {
        let mut g = ndarray::Array1::from(v);
        unaligned_cp::losses::clip_gradient(&mut g, c);
        prop_assert!(g.dot(&g).sqrt() <= c * (1.0 + 1e-12));
    }
}

#[test]
fn nonnegativity_flags() {
    assert!(LossSpec::<f64>::poisson(1e-10).nonneg);
    assert!(LossSpec::<f64>::beta_divergence(0.5, 1e-6).nonneg);
    assert!(!LossSpec::<f64>::gaussian().nonneg);
    assert!(!LossSpec::<f64>::bernoulli().nonneg);
}
