use std::sync::Arc;

use proptest::prelude::*;

use influence_lab::cli::parse_spec_arg;
use influence_lab::distributions::{empirical, mixture_at, Column, Dataset, DiscreteDistribution, Kind, MixturePath, Role, Schema};
use influence_lab::estimands::{eif_at, exact_nuisances, plugin_value, EstimandSpec};
use influence_lab::estimation::{fit_and_estimate, make_folds, wald_interval, LearnerConfig, Method};
use influence_lab::gateaux::{ate_remainder_bound, random_law, reweighted, von_mises_remainder};
use influence_lab::seed::rng_from;

fn y_schema() -> Arc<Schema> {
    Arc::new(Schema::new(vec![Column::new("y", Role::Outcome, Kind::Continuous)]).unwrap())
}

fn law(ys: &[f64], weights: &[f64]) -> DiscreteDistribution {
    let mut ys = ys.to_vec();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let w = &weights[..ys.len()];
    let s: f64 = w.iter().sum();
    DiscreteDistribution::from_values(
        y_schema(),
        ys.iter().map(|&y| vec![y]).collect(),
        w.iter().map(|v| v / s).collect(),
    )
    .unwrap()
}

fn atoms() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|k| {
        (
            prop::collection::vec((-20i32..20).prop_map(|v| v as f64 / 2.0), k),
            prop::collection::vec(0.05f64..1.0, k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mixtures_are_laws((a, wa) in atoms(), (b, wb) in atoms(), t in 0.0f64..=1.0) {
        let (p, q) = (law(&a, &wa), law(&b, &wb));
        let m = mixture_at(&MixturePath::new(p.clone(), q.clone()).unwrap(), t).unwrap();
        prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (o, w) in p.atoms() {
            let expect = (1.0 - t) * w + t * q.prob_of(o.values());
            prop_assert!((m.prob_of(o.values()) - expect).abs() < 1e-12);
        }
        // Linear functionals are linear along the path.
        let mean = |d: &DiscreteDistribution| d.expect(|o| o.y());
        prop_assert!((mean(&m) - ((1.0 - t) * mean(&p) + t * mean(&q))).abs() < 1e-9);
    }

    #[test]
    fn empirical_weights_count_duplicates(ys in prop::collection::vec((-5i32..5).prop_map(f64::from), 1..30)) {
        let data = Dataset::from_values(y_schema(), ys.iter().map(|&y| vec![y]).collect()).unwrap();
        let e = empirical(&data);
        prop_assert!((e.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (o, w) in e.atoms() {
            let count = ys.iter().filter(|&&y| y == o.y()).count();
            prop_assert!((w - count as f64 / ys.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn folds_partition_rows(n in 1usize..200, k in 1usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let plan = make_folds(n, k, seed).unwrap();
        let sizes = plan.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let test = plan.test_rows(f);
            let train = plan.train_rows(f);
            if k > 1 {
                prop_assert!(test.iter().all(|i| !train.contains(i)));
                prop_assert_eq!(test.len() + train.len(), n);
            } else {
                prop_assert_eq!(train.len(), n);
            }
        }
        prop_assert_eq!(make_folds(n, k, seed).unwrap(), plan);
    }

    #[test]
    fn wald_intervals_nest(values in prop::collection::vec(-10.0f64..10.0, 2..50), psi in -5.0f64..5.0) {
        let wide = wald_interval(&values, psi, 0.01).unwrap();
        let narrow = wald_interval(&values, psi, 0.2).unwrap();
        prop_assert!(wide.lo <= narrow.lo && narrow.lo <= psi && psi <= narrow.hi && narrow.hi <= wide.hi);
        prop_assert!((wide.hi + wide.lo - 2.0 * psi).abs() < 1e-9);
    }

    /// Influence functions have mean zero under the law they are computed at.
    #[test]
    fn eif_is_centred(seed in any::<u64>()) {
        let p = random_law(20, &mut rng_from(seed)).unwrap();
        for spec in EstimandSpec::discrete_catalog() {
            let nuis = exact_nuisances(&spec, &p).unwrap();
            let psi = plugin_value(&spec, &p).unwrap();
            let mean = p.try_expect(|o| eif_at(&spec, o, &nuis, psi)).unwrap();
            prop_assert!(mean.abs() < 1e-10, "{} has mean {}", spec, mean);
        }
    }

    /// The ATE remainder obeys its Cauchy-Schwarz bound along a mixture
    /// path, and the bound is eventually quadratic in the step.
    #[test]
    fn remainder_is_second_order(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let p = random_law(16, &mut rng).unwrap();
        let q = reweighted(&p, &mut rng).unwrap();
        let path = MixturePath::new(p.clone(), q).unwrap();
        let mut bounds = Vec::new();
        for k in 0..9 {
            let pt = path.at(0.01 / 2f64.powi(k)).unwrap();
            let r = von_mises_remainder(&EstimandSpec::Ate, &p, &pt).unwrap().remainder;
            let b = ate_remainder_bound(&p, &pt).unwrap();
            prop_assert!(r.abs() <= b + 1e-12, "step {}: |R| = {} > {}", k, r.abs(), b);
            bounds.push(b);
        }
        prop_assert!(bounds[8] <= 0.3 * bounds[7], "{:?}", bounds);
    }

    #[test]
    fn quantile_args_round_trip(tau in 0.001f64..0.999) {
        prop_assert_eq!(parse_spec_arg(&format!("quantile(tau={tau})")).unwrap(), EstimandSpec::Quantile { tau });
    }

    /// With no nuisances the one-step mean is the sample mean, whatever the
    /// folds.
    #[test]
    fn one_step_mean_is_sample_mean(ys in prop::collection::vec(-100.0f64..100.0, 2..40), k in 1usize..3, seed in any::<u64>()) {
        let spec = EstimandSpec::PopulationMean;
        let data = Dataset::from_values(y_schema(), ys.iter().map(|&y| vec![y]).collect()).unwrap();
        let config = LearnerConfig::defaults(&spec).unwrap();
        let r = fit_and_estimate(Method::OneStep, &spec, &data, &config, k, seed, 0.05).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        prop_assert!((r.psi_hat - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        let ee = fit_and_estimate(Method::EstimatingEquation, &spec, &data, &config, k, seed, 0.05).unwrap();
        prop_assert!((ee.psi_hat - r.psi_hat).abs() <= 1e-12 * (1.0 + mean.abs()));
    }
}
