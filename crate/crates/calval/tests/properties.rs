//! Property-based invariants over randomized inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use calval::bayes_factor::{
    aggregate_bayes_factors, bf_from_log_evidence, Aggregation, BayesFactorRow,
};
use calval::bma::{bma_weights, mixture_moments};
use calval::copula::GaussianCopula;
use calval::data::{Dataset, DomainTag, Observation};
use calval::iuq::mcmc::{run_mcmc, McmcConfig};
use calval::iuq::{gaussian_log_likelihood, normalized_distance, UncertaintyBudget};
use calval::model::correction::{
    correct_void_fraction, distort_void_fraction, CorrectionFamily,
};
use calval::model::{DesignPoint, PriorSpec, QoIVector};
use calval::stats::{latin_hypercube, spearman};

fn any_family() -> impl Strategy<Value = CorrectionFamily> {
    prop_oneof![
        Just(CorrectionFamily::Standard),
        Just(CorrectionFamily::HighBurnup),
    ]
}

proptest! {
    #[test]
    fn correction_is_increasing_and_reduces_readings(
        family in any_family(),
        a in 20.0f64..90.0,
        bump in 1e-6f64..5.0,
    ) {
        let b = (a + bump).min(90.0);
        let ca = correct_void_fraction(a, family).unwrap();
        let cb = correct_void_fraction(b, family).unwrap();
        prop_assert!(ca < a, "corrected {ca} not below measured {a}");
        if b > a {
            prop_assert!(cb > ca, "correction not increasing on [{a}, {b}]");
        }
    }

    #[test]
    fn correction_passes_through_outside_the_window(
        family in any_family(),
        low in 0.0f64..20.0,
        high in 90.0f64..100.0,
    ) {
        let eps = 1e-9;
        prop_assert!((correct_void_fraction(low * (1.0 - eps), family).unwrap()
            - low * (1.0 - eps)).abs() == 0.0);
        if high > 90.0 {
            prop_assert_eq!(correct_void_fraction(high, family).unwrap(), high);
        }
    }

    #[test]
    fn distortion_inverts_the_correction(
        family in any_family(),
        a in 20.0f64..90.0,
    ) {
        let distorted = distort_void_fraction(a, family).unwrap();
        if distorted > 100.0 {
            prop_assert!(correct_void_fraction(distorted, family).is_err(),
                "unphysical reading {} must be rejected", distorted);
        } else {
            let back = correct_void_fraction(distorted, family).unwrap();
            if (20.0..=90.0).contains(&distorted) {
                prop_assert!((back - a).abs() <= 1e-9 * a.max(1.0),
                    "correct(distort({a})) = {back}");
            } else {
                prop_assert_eq!(back, distorted,
                    "reading {} left the window but was not passed through",
                    distorted);
            }
        }
    }

    #[test]
    fn weights_normalize_and_grow_with_the_bayes_factor(
        bf in 1e-6f64..1e6,
        factor in 1.0001f64..100.0,
    ) {
        let (w0, w1) = bma_weights(bf).unwrap();
        prop_assert!(((w0 + w1) - 1.0).abs() <= 1e-12);
        prop_assert!(w0 > 0.0 && w1 > 0.0);
        let (_, w1_bigger) = bma_weights(bf * factor).unwrap();
        prop_assert!(w1_bigger > w1, "weight not increasing in B");
    }

    #[test]
    fn mixture_moments_stay_between_components(
        w in 0.0f64..=1.0,
        m0 in -50.0f64..50.0,
        s0 in 0.01f64..10.0,
        dm in -20.0f64..20.0,
        s1 in 0.01f64..10.0,
    ) {
        let m1 = m0 + dm;
        let (mu, sd) = mixture_moments(1.0 - w, m0, s0, w, m1, s1).unwrap();
        prop_assert!(mu >= m0.min(m1) - 1e-9 && mu <= m0.max(m1) + 1e-9);
        prop_assert!(sd >= s0.min(s1) - 1e-9,
            "mixture std {sd} fell below both components {s0}, {s1}");
    }

    #[test]
    fn gaussian_log_likelihood_decays_with_residual_size(
        r in 0.0f64..20.0,
        grow in 1.0001f64..10.0,
        var in 0.01f64..25.0,
    ) {
        let budget = UncertaintyBudget {
            experimental: vec![var],
            bias: vec![0.0],
            code: vec![0.0],
        };
        let near = gaussian_log_likelihood(&[r], &budget).unwrap();
        let far = gaussian_log_likelihood(&[r * grow + 1e-6], &budget).unwrap();
        prop_assert!(far < near);
    }

    #[test]
    fn identical_log_evidence_gives_exactly_one(
        le in -700.0f64..700.0,
        se in 0.0f64..0.5,
    ) {
        let (bf, _) = bf_from_log_evidence(le, le, se, se);
        prop_assert_eq!(bf, 1.0);
    }

    #[test]
    fn aggregated_factor_lies_within_the_per_test_range(
        bfs in proptest::collection::vec(1e-3f64..1e3, 1..12),
    ) {
        let rows: Vec<BayesFactorRow> = bfs
            .iter()
            .enumerate()
            .map(|(i, bf)| BayesFactorRow {
                dataset: "d".into(),
                bias_mode: "off".into(),
                test_id: format!("T{i}"),
                qoi: "q".into(),
                bf: *bf,
                mc_se: 0.0,
                n0: 10,
                n1: 10,
            })
            .collect();
        let lo = bfs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = bfs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for how in [Aggregation::Arithmetic, Aggregation::Geometric] {
            let agg = aggregate_bayes_factors(&rows, how);
            prop_assert_eq!(agg.len(), 1);
            prop_assert!(agg[0].bf >= lo - 1e-12 && agg[0].bf <= hi + 1e-12,
                "aggregate {} outside [{lo}, {hi}]", agg[0].bf);
        }
    }

    #[test]
    fn normalized_distance_is_zero_only_at_the_target(
        target in proptest::collection::vec(0.1f64..4.9, 3),
        offset in 0.01f64..1.0,
    ) {
        let prior = PriorSpec::new(vec![0.0; 3], vec![5.0; 3], vec![1.0; 3]).unwrap();
        let zero = normalized_distance(&target, &target, &prior).unwrap();
        prop_assert!(zero == 0.0);
        let mut moved = target.clone();
        moved[1] += offset;
        let d = normalized_distance(&moved, &target, &prior).unwrap();
        prop_assert!((d - offset / 5.0).abs() <= 1e-12);
    }

    #[test]
    fn latin_hypercube_fills_every_stratum(
        seed in 0u64..1000,
        n in 2usize..30,
    ) {
        let bounds = [(0.0, 1.0), (-2.0, 3.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = latin_hypercube(&bounds, n, &mut rng).unwrap();
        prop_assert_eq!(pts.len(), n);
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| {
                    prop_assert!(p[d] >= *lo && p[d] <= *hi);
                    Ok((((p[d] - lo) / (hi - lo)) * n as f64).floor() as usize)
                })
                .collect::<Result<_, TestCaseError>>()?;
            strata.sort_unstable();
            let expect: Vec<usize> = (0..n).collect();
            prop_assert_eq!(strata, expect, "dimension {} misses a stratum", d);
        }
    }

    #[test]
    fn split_partitions_every_observation(
        n in 1usize..40,
        seed in 0u64..500,
    ) {
        let mut ds = Dataset::new(vec!["x".into()], vec!["q".into()]);
        for i in 0..n {
            ds.observations.push(Observation {
                test_id: format!("E{i:03}"),
                design: DesignPoint::new(vec![i as f64]),
                measured: QoIVector::new(vec![i as f64]),
                measurement_variance: vec![1.0],
                domain: DomainTag::Validation,
            });
        }
        let (val, pred) = ds.split(seed).unwrap();
        prop_assert_eq!(val.len(), n.div_ceil(2));
        prop_assert_eq!(val.len() + pred.len(), n);
        let mut ids: Vec<&String> = val
            .observations
            .iter()
            .chain(pred.observations.iter())
            .map(|o| &o.test_id)
            .collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n, "split duplicated or dropped a test");
        prop_assert!(val.observations.iter().all(|o| o.domain == DomainTag::Validation));
        prop_assert!(pred.observations.iter().all(|o| o.domain == DomainTag::Prediction));
    }

    #[test]
    fn spearman_is_invariant_under_monotone_maps(
        xs in proptest::collection::vec(-100.0f64..100.0, 5..40),
        shift in -10.0f64..10.0,
    ) {
        let ys: Vec<f64> = xs.iter().map(|x| x * 0.5 + shift).collect();
        let rho = spearman(&xs, &ys).unwrap();
        prop_assert!((rho - 1.0).abs() <= 1e-9, "rho = {rho}");
        let zs: Vec<f64> = xs.iter().map(|x| (x / 30.0).exp()).collect();
        let rho2 = spearman(&xs, &zs).unwrap();
        prop_assert!((rho2 - 1.0).abs() <= 1e-9, "rho after monotone map = {rho2}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn copula_samples_stay_inside_the_source_hull(
        seed in 0u64..200,
        n in 60usize..120,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = rand::Rng::random_range(&mut rng, -3.0..3.0);
                let b: f64 = a * 0.5 + rand::Rng::random_range(&mut rng, 0.0..1.0);
                vec![a, b]
            })
            .collect();
        let cop = GaussianCopula::fit(&source).unwrap();
        let samples = cop.sample(80, seed + 1).unwrap();
        for d in 0..2 {
            let lo = source.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
            let hi = source.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
            for s in &samples {
                prop_assert!(s[d] >= lo && s[d] <= hi);
            }
        }
    }

    #[test]
    fn mcmc_respects_the_prior_support(
        seed in 0u64..100,
        center in 1.0f64..4.0,
    ) {
        let prior = PriorSpec::new(vec![0.0; 2], vec![5.0; 2], vec![2.5; 2]).unwrap();
        let cfg = McmcConfig::new(400, 150, seed, vec![2.5, 2.5]);
        let chain = run_mcmc(
            &prior,
            |th| Ok(-((th[0] - center).powi(2) + (th[1] - center).powi(2))),
            &cfg,
        )
        .unwrap();
        for s in &chain.samples {
            prop_assert!(s.iter().all(|v| (0.0..=5.0).contains(v)));
        }
    }
}
