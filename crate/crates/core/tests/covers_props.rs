use advcover::covers::{
    adversarial_cover_bound, ceil_sq_ratio, maurey_cover_params, maurey_round, CoverProfile, UniformCoverSpec,
};
use advcover::linalg::{entrywise_p_norm, Exponent, Matrix};
use advcover::rng::StreamKey;
use proptest::prelude::*;

fn profile() -> impl Strategy<Value = CoverProfile> {
    (1usize..4).prop_flat_map(|l| {
        (
            prop::collection::vec(0.2f64..3.0, l),
            prop::collection::vec(0.1f64..4.0, l),
            prop::collection::vec(1usize..6, l + 1),
            0.5f64..3.0,
        )
            .prop_map(move |(s, ratio, widths, loss_rho)| CoverProfile {
                a: s.iter().zip(&ratio).map(|(s, r)| s * r).collect(),
                s,
                rho: vec![1.0; l],
                widths,
                loss_rho,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn k_is_the_least_integer_above_the_ratio(a in 0.01f64..10.0, b in 0.01f64..10.0, eps in 0.01f64..5.0) {
        let k = ceil_sq_ratio(a, b, eps).unwrap() as f64;
        let r = (a * b / eps).powi(2);
        // float screen; the exact check lives in the unit tests
        prop_assert!(k >= r * (1.0 - 1e-12));
        prop_assert!(k - 1.0 < r * (1.0 + 1e-12));
    }

    #[test]
    fn cover_params_match_formula(a in 0.1f64..3.0, b in 0.1f64..3.0, eps in 0.2f64..2.0, d in 1usize..5, m in 1usize..5) {
        let spec = UniformCoverSpec::new(a, b, eps, d, m).unwrap();
        let p = maurey_cover_params(&spec).unwrap();
        prop_assert_eq!(p.ln_cardinality_bound, p.k as f64 * (2.0 * d as f64 * m as f64).ln());
    }

    #[test]
    fn rounded_elements_stay_in_budget(seed in any::<u64>(), m in 1usize..4, d in 1usize..4, k in 1u64..40) {
        let mut s = StreamKey::new(seed).stream();
        let w = Matrix::from_fn(m, d, |_, _| s.next_gaussian());
        let x = Matrix::from_fn(d, 3, |_, _| s.next_gaussian());
        let a = entrywise_p_norm(&w, Exponent::ONE) * 1.25;
        let r = maurey_round(&w, &x, a, k, 4, StreamKey::new(seed ^ 1)).unwrap();
        prop_assert!(r.element.l1_within_budget());
        prop_assert!(entrywise_p_norm(&r.element.realize(), Exponent::ONE) <= a * (1.0 + 1e-12));
        prop_assert!(r.residual <= r.zero_residual);
        prop_assert!(r.residual <= r.greedy_residual);
    }

    #[test]
    fn assembled_bound_is_monotone(p in profile(), b in 0.5f64..4.0, eps in 0.05f64..1.0) {
        let base = adversarial_cover_bound(&p, b, eps).unwrap().assembled;
        prop_assert!(adversarial_cover_bound(&p, b, eps * 1.5).unwrap().assembled <= base);
        prop_assert!(adversarial_cover_bound(&p, b * 1.5, eps).unwrap().assembled >= base);
        let mut bigger_a = p.clone();
        bigger_a.a[0] *= 1.5;
        prop_assert!(adversarial_cover_bound(&bigger_a, b, eps).unwrap().assembled >= base);
        let mut bigger_s = p.clone();
        bigger_s.s[0] *= 1.5;
        bigger_s.a[0] *= 1.5;
        prop_assert!(adversarial_cover_bound(&bigger_s, b, eps).unwrap().assembled >= base);
    }

    #[test]
    fn unceiled_never_exceeds_consistent_closed_form(p in profile(), b in 0.5f64..4.0, eps in 0.05f64..1.0) {
        let c = adversarial_cover_bound(&p, b, eps).unwrap();
        prop_assert!(c.unceiled <= c.closed_form * (1.0 + 1e-10));
        prop_assert!(c.assembled <= c.unceiled + c.ceiling_slack * (1.0 + 1e-12));
    }
}
