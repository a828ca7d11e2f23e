use chrono::NaiveDate;
use proptest::prelude::*;

use rbc_core::classifiers::gmm::{fit_with, ComponentChoice, GmmSettings};
use rbc_core::classifiers::index::SpectralIndexKind;
use rbc_core::classifiers::{gmm_likelihood, lr_fit, lr_posterior, sic_from_thresholds, sic_posterior, Samples, Thresholds};
use rbc_core::evaluation::stats::quantile;
use rbc_core::evaluation::{balanced_accuracy, summarize_distribution};
use rbc_core::pipeline::{bias_correct, filter_frames, resample_nearest, ReferenceRegion};
use rbc_core::recursion::{predict_prior, rbdm_step, rbgm_step, regularize};
use rbc_core::types::{
    Band, Frame, Grid, ImageStack, LabelRaster, LikelihoodVector, MultibandImage, ProbabilityVector, TransitionModel,
};

fn pmf_strategy(k: usize) -> impl Strategy<Value = ProbabilityVector> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|w| ProbabilityVector::from_weights(&w).unwrap())
}

fn assert_pmf(p: &ProbabilityVector) {
    let s: f64 = p.as_slice().iter().sum();
    assert!((s - 1.0).abs() < 1e-9, "sum {s}");
    assert!(p.as_slice().iter().all(|&v| v >= 0.0));
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

#[test]
fn transition_rows_are_stochastic() {
    for k in 2..=10 {
        for eps in [0.001, 0.01, 0.1, 0.49] {
            let t = TransitionModel::new(k, eps).unwrap();
            for i in 0..k {
                let s: f64 = t.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "K={k} eps={eps} row {i}: {s}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chains_stay_normalized(
        k in 2usize..5,
        eps in 0.001f64..0.999,
        lambda in 0.0f64..3.0,
        steps in prop::collection::vec((prop::collection::vec(1e-9f64..1.0, 4), 0u8..4), 1..12),
    ) {
        let t = TransitionModel::new(k, eps).unwrap();
        let marginal = ProbabilityVector::uniform(k).unwrap();
        let mut post = ProbabilityVector::uniform(k).unwrap();
        for (w, op) in steps {
            let w = &w[..k];
            post = match op {
                0 => predict_prior(&post, &t).unwrap(),
                1 => rbgm_step(&LikelihoodVector::new(w.to_vec()).unwrap(), &post, &t).unwrap(),
                2 => rbdm_step(&ProbabilityVector::from_weights(w).unwrap(), &marginal, &post, &t).unwrap(),
                _ => regularize(&post, lambda).unwrap(),
            };
            assert_pmf(&post);
        }
    }

    #[test]
    fn rbdm_matches_rbgm_under_uniform_marginal(k in 2usize..5, eps in 0.001f64..0.999, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let w: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, 1e-6..1.0)).collect();
        let prev_w: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, 1e-6..1.0)).collect();
        let inst = ProbabilityVector::from_weights(&w).unwrap();
        let prev = ProbabilityVector::from_weights(&prev_w).unwrap();
        let t = TransitionModel::new(k, eps).unwrap();
        let lik = LikelihoodVector::new(inst.as_slice().to_vec()).unwrap();
        let a = rbdm_step(&inst, &ProbabilityVector::uniform(k).unwrap(), &prev, &t).unwrap();
        let b = rbgm_step(&lik, &prev, &t).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn half_epsilon_returns_instantaneous(inst in pmf_strategy(2), prev in pmf_strategy(2)) {
        let t = TransitionModel::new(2, 0.5).unwrap();
        let out = rbdm_step(&inst, &ProbabilityVector::uniform(2).unwrap(), &prev, &t).unwrap();
        for (x, y) in out.as_slice().iter().zip(inst.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_grows_with_lambda(p in pmf_strategy(3), lambdas in prop::collection::vec(0.0f64..10.0, 2..6)) {
        let mut lambdas = lambdas;
        lambdas.sort_by(f64::total_cmp);
        let mut last = f64::NEG_INFINITY;
        for l in lambdas {
            let h = entropy(regularize(&p, l).unwrap().as_slice());
            prop_assert!(h >= last - 1e-12);
            last = h;
        }
    }

    #[test]
    fn sic_posterior_is_a_pmf(y in -1.0f64..=1.0, which in 0usize..3) {
        let tau: &[f64] = match which {
            0 => &[-1.0, 0.13, 1.0],
            1 => &[-1.0, 0.65, 1.0],
            _ => &[-1.0, -0.05, 0.35, 1.0],
        };
        let m = sic_from_thresholds(tau, SpectralIndexKind::Mndwi).unwrap();
        assert_pmf(&sic_posterior(y, &m));
    }

    #[test]
    fn pseudo_labels_partition(y in -1.5f64..1.5) {
        let tau = Thresholds::new(vec![-1.0, -0.05, 0.35, 1.0]).unwrap();
        let t = tau.as_slice();
        let c = tau.classify(y);
        let containing: Vec<usize> = (0..3)
            .filter(|&i| (i == 0 && y <= t[1]) || (i == 2 && y > t[2]) || (y > t[i] && y <= t[i + 1]))
            .collect();
        prop_assert_eq!(containing, vec![c]);
    }

    #[test]
    fn balanced_accuracy_ignores_label_names(
        pairs in prop::collection::vec((0u8..3, 0u8..3), 1..60),
        perm in Just([0u8, 1, 2]).prop_shuffle(),
    ) {
        let n = pairs.len();
        let pred: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let a = balanced_accuracy(
            &LabelRaster::new(n, 1, 3, pred.clone()).unwrap(),
            &LabelRaster::new(n, 1, 3, truth.clone()).unwrap(),
        ).unwrap();
        let relabel = |v: &[u8]| v.iter().map(|&l| perm[l as usize]).collect::<Vec<_>>();
        let b = balanced_accuracy(
            &LabelRaster::new(n, 1, 3, relabel(&pred)).unwrap(),
            &LabelRaster::new(n, 1, 3, relabel(&truth)).unwrap(),
        ).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn balanced_accuracy_extremes(k in 2usize..6, extra in prop::collection::vec(0u8..6, 0..40), constant in 0u8..6) {
        let mut truth: Vec<u8> = (0..k as u8).collect();
        truth.extend(extra.iter().map(|&l| l % k as u8));
        let n = truth.len();
        let t = LabelRaster::new(n, 1, k, truth).unwrap();
        prop_assert_eq!(balanced_accuracy(&t, &t).unwrap(), 1.0);
        let c = LabelRaster::filled(n, 1, k, constant % k as u8).unwrap();
        prop_assert!((balanced_accuracy(&c, &t).unwrap() - 1.0 / k as f64).abs() < 1e-12);
    }

    #[test]
    fn quartiles_match_sort_and_interpolate(values in prop::collection::vec(-100.0f64..100.0, 1..50)) {
        let s = summarize_distribution(&values).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let oracle = |q: f64| {
            let h = (sorted.len() - 1) as f64 * q;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        prop_assert_eq!(s.q1, oracle(0.25));
        prop_assert_eq!(s.median, oracle(0.5));
        prop_assert_eq!(s.q3, oracle(0.75));
        prop_assert_eq!(quantile(&sorted, 0.5), s.median);
    }

    #[test]
    fn resampling_composes(w in 1usize..5, h in 1usize..5, a in 1usize..4, b in 1usize..4, seed in any::<u32>()) {
        let data: Vec<u32> = (0..w * h).map(|i| seed.wrapping_mul(i as u32 + 1)).collect();
        let g = Grid::new(w, h, data).unwrap();
        let twice = resample_nearest(&resample_nearest(&g, a).unwrap(), b).unwrap();
        prop_assert_eq!(twice, resample_nearest(&g, a * b).unwrap());
    }

    #[test]
    fn bias_correction_is_idempotent(
        offsets in prop::collection::vec(-0.2f64..0.2, 1..5),
        base in prop::collection::vec(0.0f64..1.0, 12),
        rx in 0usize..3, ry in 0usize..2,
    ) {
        let frames: Vec<Frame> = std::iter::once(0.0).chain(offsets).enumerate().map(|(i, off)| {
            let img = MultibandImage::new(4, 3, vec![
                (Band::Green, base.iter().map(|v| v + off).collect()),
                (Band::Swir1, base.iter().rev().map(|v| v - off * 0.5).collect()),
            ]).unwrap();
            Frame::new(NaiveDate::from_ymd_opt(2020, 1, 1 + i as u32).unwrap(), img)
        }).collect();
        let stack = ImageStack::new(frames).unwrap();
        let region = ReferenceRegion::new(rx, ry, 2, 1);
        let once = bias_correct(&stack, &region).unwrap();
        let twice = bias_correct(&once, &region).unwrap();
        for (f1, f2) in once.frames().iter().zip(twice.frames()) {
            for b in 0..2 {
                for (x, y) in f1.image.band_at(b).iter().zip(f2.image.band_at(b)) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn filtering_preserves_order(
        clouds in prop::collection::vec(prop::option::of(0.0f64..1.0), 1..15),
        threshold in 0.0f64..1.0,
        drop in prop::collection::vec(0u32..15, 0..5),
    ) {
        let frames: Vec<Frame> = clouds.iter().enumerate().map(|(i, &c)| {
            let img = MultibandImage::new(1, 1, vec![(Band::Green, vec![0.1])]).unwrap();
            let mut f = Frame::new(NaiveDate::from_ymd_opt(2021, 3, 1 + i as u32).unwrap(), img);
            f.cloud_fraction = c;
            f
        }).collect();
        let stack = ImageStack::new(frames).unwrap();
        let excluded: Vec<NaiveDate> = drop.iter().map(|&d| NaiveDate::from_ymd_opt(2021, 3, 1 + d).unwrap()).collect();
        let kept = filter_frames(&stack, threshold, &excluded).unwrap();
        let dates = kept.dates();
        prop_assert!(dates.windows(2).all(|w| w[0] < w[1]));
        for f in kept.frames() {
            prop_assert!(f.cloud_fraction.is_none_or(|c| c <= threshold));
            prop_assert!(!excluded.contains(&f.date));
        }
    }
}

#[test]
fn classifier_outputs_are_pure() {
    let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 7) as f64 * 0.1, (i % 5) as f64 * 0.2 + (i / 100) as f64]).collect();
    let labels: Vec<u8> = (0..200).map(|i| (i / 100) as u8).collect();
    let x = Samples::from_rows(&rows).unwrap();
    let lr = lr_fit(&x, &labels, 2, 9).unwrap();
    let classes: Vec<Samples> = (0..2)
        .map(|c| Samples::from_rows(&rows[c * 100..(c + 1) * 100]).unwrap())
        .collect();
    let gmm = fit_with(&classes, &GmmSettings::new(ComponentChoice::Fixed(vec![1, 1]), 9)).unwrap().model;
    for r in &rows[..20] {
        assert_eq!(lr_posterior(&lr, r).unwrap(), lr_posterior(&lr, r).unwrap());
        assert_eq!(gmm_likelihood(&gmm, r).unwrap(), gmm_likelihood(&gmm, r).unwrap());
    }
}

#[test]
fn em_log_likelihood_never_decreases() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let mut data = Vec::new();
    for i in 0..900 {
        let c = [-2.0, 0.0, 2.5][i % 3];
        data.extend([c + noise.sample(&mut rng), c * 0.5 + noise.sample(&mut rng)]);
    }
    let a = Samples::new(2, data).unwrap();
    let b = Samples::new(2, (0..400).map(|_| 10.0 + noise.sample(&mut rng)).collect()).unwrap();
    for seed in 0..5 {
        let fit = fit_with(&[a.clone(), b.clone()], &GmmSettings::new(ComponentChoice::Fixed(vec![3, 2]), seed)).unwrap();
        for trace in &fit.log_likelihood {
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} then {}", w[0], w[1]);
            }
        }
    }
}
