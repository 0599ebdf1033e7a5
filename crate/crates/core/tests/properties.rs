mod common;

use std::sync::Arc;

use common::random_instance;
use nphmm::density::kld;
use nphmm::estimation::ModelSpec;
use nphmm::hmm::{forecast_state_probs, log_likelihood, viterbi};
use nphmm::scalar::softmax;
use nphmm::selection::make_partitions;
use nphmm::{rng, SplineBasis, SplineDensity, StateDensity};
use proptest::collection::vec;
use proptest::prelude::*;

fn basis_strategy() -> impl Strategy<Value = SplineBasis> {
    (-10.0f64..0.0, 0.1f64..10.0, 2usize..12).prop_map(|(lo, width, k)| SplineBasis::new(lo, lo + width, k).unwrap())
}

fn spline_strategy() -> impl Strategy<Value = SplineDensity> {
    basis_strategy().prop_flat_map(|b| {
        let b = Arc::new(b);
        vec(-3.0f64..3.0, b.len() - 1).prop_map(move |free| SplineDensity::from_free_logits(b.clone(), &free).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn basis_values_are_local_and_nonnegative(b in basis_strategy(), u in 0.0f64..1.0) {
        let (a, z) = b.total_support();
        let x = a + u * (z - a);
        let v = b.eval(x);
        prop_assert!(v.iter().all(|&y| y >= 0.0));
        prop_assert!(v.iter().filter(|&&y| y > 0.0).count() <= 4);
    }

    #[test]
    fn spline_pdf_integrates_to_one(d in spline_strategy()) {
        let (a, b) = d.basis().total_support();
        let knots = d.basis().grid().knots();
        let total: f64 = knots.windows(2)
            .filter(|w| w[0] >= a && w[1] <= b)
            .map(|w| common::gauss5(|x| d.pdf(x), w[0], w[1]))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(d.cdf(a).abs() < 1e-12 && (d.cdf(b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_derivative_is_pdf(d in spline_strategy(), u in 0.02f64..0.98) {
        let (a, b) = d.basis().total_support();
        let x = a + u * (b - a);
        let h = 1e-6 * (b - a);
        let slope = (d.cdf(x + h) - d.cdf(x - h)) / (2.0 * h);
        prop_assert!((slope - d.pdf(x)).abs() < 1e-4 * (1.0 + d.pdf(x)));
    }

    #[test]
    fn softmax_lies_on_the_simplex(logits in vec(-50.0f64..50.0, 1..30)) {
        let w = softmax(&logits);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn kld_is_nonnegative(d in spline_strategy(), shift in vec(-1.0f64..1.0, 30)) {
        let free: Vec<f64> = d.free_logits().iter().zip(&shift).map(|(l, s)| l + s).collect();
        let e = SplineDensity::from_free_logits(d.basis().clone(), &free).unwrap();
        let (p, q) = (StateDensity::Spline(d), StateDensity::Spline(e));
        prop_assert!(kld(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kld(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn trailing_missing_values_are_neutral(seed in any::<u64>(), n in 1usize..4, t in 1usize..40, extra in 1usize..5) {
        let (model, mut series) = random_instance(n, t, &mut rng::seeded(seed));
        let before = log_likelihood(&model, &series).unwrap();
        series.extend(std::iter::repeat_n(None, extra));
        let after = log_likelihood(&model, &series).unwrap();
        prop_assert!((before - after).abs() < 1e-12 * (1.0 + before.abs()));
    }

    #[test]
    fn viterbi_bounded_by_likelihood(seed in any::<u64>(), n in 1usize..4, t in 1usize..60) {
        let (model, series) = random_instance(n, t, &mut rng::seeded(seed));
        let v = viterbi(&model, &series).unwrap();
        prop_assert_eq!(v.states.len(), t);
        prop_assert!(v.log_prob <= log_likelihood(&model, &series).unwrap() + 1e-10);
    }

    #[test]
    fn forecast_probabilities_are_distributions(seed in any::<u64>(), n in 1usize..4, t in 1usize..60) {
        let (model, series) = random_instance(n, t, &mut rng::seeded(seed));
        let fw = forecast_state_probs(&model, &series).unwrap();
        prop_assert_eq!(&fw.predicted[0], &model.delta().as_slice().to_vec());
        for z in fw.predicted.iter().chain(&fw.filtered) {
            prop_assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relabelling_states_leaves_likelihood_unchanged(seed in any::<u64>(), t in 1usize..40) {
        let (model, series) = random_instance(3, t, &mut rng::seeded(seed));
        let ll = log_likelihood(&model, &series).unwrap();
        for order in [[0, 2, 1], [1, 0, 2], [2, 0, 1]] {
            let p = model.permuted(&order);
            prop_assert!((log_likelihood(&p, &series).unwrap() - ll).abs() < 1e-10 * (1.0 + ll.abs()));
            prop_assert!((viterbi(&p, &series).unwrap().log_prob - viterbi(&model, &series).unwrap().log_prob).abs() < 1e-10 * (1.0 + ll.abs()));
        }
    }

    #[test]
    fn pack_unpack_round_trip(seed in any::<u64>(), n in 1usize..4) {
        let (model, _) = random_instance(n, 2, &mut rng::seeded(seed));
        let spec = ModelSpec::of_model(&model);
        let theta = spec.pack(&model).unwrap();
        prop_assert_eq!(theta.len(), spec.num_params());
        let back = spec.unpack(&theta).unwrap();
        for (a, b) in model.gamma().as_slice().iter().zip(back.gamma().as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in model.delta().as_slice().iter().zip(back.delta().as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for x in [-2.5, -0.3, 0.0, 1.1, 2.9] {
            for (a, b) in model.emissions().iter().zip(back.emissions()) {
                prop_assert!((a.pdf(x) - b.pdf(x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn partitions_have_the_requested_shape(len in 10usize..500, c in 1usize..12, frac in 0.5f64..0.95, seed in any::<u64>()) {
        let parts = make_partitions(len, c, frac, &mut rng::seeded(seed)).unwrap();
        let v = (len as f64 * (1.0 - frac)).round() as usize;
        prop_assert_eq!(parts.len(), c);
        let series: Vec<Option<f64>> = (0..len).map(|i| Some(i as f64)).collect();
        for p in &parts {
            let mut val = p.validation().to_vec();
            val.sort_unstable();
            val.dedup();
            prop_assert_eq!(val.len(), v);
            prop_assert_eq!(p.calibration().len(), len - v);
            let fit = p.fit_series(&series);
            let score = p.score_series(&series);
            for i in 0..len {
                prop_assert!(fit[i].is_some() != score[i].is_some());
            }
        }
    }
}
