mod common;

use common::*;
use ndarray::Array3;
use ocdl::synthetic::{generator_dictionary, synthetic_set, SyntheticSpec};
use ocdl::{
    cbpdn_objective, cbpdn_solve, evaluate_dictionary, fista_d_update, forgetting_factor,
    online_train, online_train_with, preprocess, train_step, Accumulator, CbpdnConfig,
    CoefficientMaps, Dictionary, Error, Fft2d, ForgettingSchedule, Preprocess, RegionStrategy,
    SampleMode, Signal, TrainConfig, TrainState,
};

fn small_config(steps: u64) -> TrainConfig {
    TrainConfig {
        seed: 9,
        ..TrainConfig::new(2, (3, 3), 0.1, steps)
    }
}

fn stream(images: &[Signal]) -> impl Iterator<Item = ocdl::Result<Signal>> + '_ {
    images.iter().cloned().map(Ok)
}

#[test]
fn zero_sample_leaves_dictionary_alone() {
    let cfg = small_config(3);
    let mut state = TrainState::new(&cfg).unwrap();
    let d0 = state.dictionary().clone();
    let rec = train_step(&mut state, &Signal::zeros((8, 8)), &cfg).unwrap();
    assert!(rec.cbpdn_iters >= 1);
    assert_eq!(rec.fista_iters, 0);
    assert_eq!(rec.alpha, 0.0);
    assert_eq!(state.dictionary(), &d0);
    assert_eq!(state.t(), 1);

    // A real sample, then a zero one: the blocks only decay.
    let s = normal_signal((8, 8), &mut rng(1));
    train_step(&mut state, &s, &cfg).unwrap();
    let before = state.accumulator().unwrap().clone();
    let rec = train_step(&mut state, &Signal::zeros((8, 8)), &cfg).unwrap();
    let after = state.accumulator().unwrap();
    let alpha = forgetting_factor(3, cfg.schedule).unwrap();
    assert_eq!(rec.alpha, alpha);
    for (a, b) in after.a_blocks().iter().zip(before.a_blocks()) {
        assert_eq!(*a, b * alpha);
    }
    for (a, b) in after.b_vecs().iter().zip(before.b_vecs()) {
        assert_eq!(*a, b * alpha);
    }
    assert!(state.dictionary().max_norm_error() <= 1e-12);
}

/// The loop body spelled out with the public sub-operations.
fn unrolled(cfg: &TrainConfig, samples: &[Signal]) -> Dictionary {
    let mut state = TrainState::new(cfg).unwrap();
    let mut dict = state.dictionary().clone();
    let dims = samples[0].dims();
    let plan = Fft2d::new(dims).unwrap();
    let mut acc = Accumulator::new(cfg.filters, dims).unwrap();
    let _ = state.rng_mut();
    for (k, s) in samples.iter().enumerate() {
        let (maps, _) = cbpdn_solve(s, &dict, &cfg.cbpdn).unwrap();
        let x_hat = maps.spectra(&plan).unwrap();
        let s_hat = plan.forward(s.view()).unwrap();
        let alpha = forgetting_factor(k as u64 + 1, cfg.schedule).unwrap();
        acc.accumulate(&x_hat, &s_hat, alpha).unwrap();
        dict = fista_d_update(&acc, &dict, dims, &cfg.fista).unwrap().0;
    }
    dict
}

#[test]
fn two_steps_equal_the_unrolled_composition() {
    let cfg = small_config(2);
    let mut r = rng(2);
    let samples = vec![normal_signal((8, 8), &mut r), normal_signal((8, 8), &mut r)];
    let mut state = TrainState::new(&cfg).unwrap();
    for s in &samples {
        train_step(&mut state, s, &cfg).unwrap();
    }
    let want = unrolled(&cfg, &samples);
    assert!(max_abs_diff(state.dictionary().filters(), want.filters()) <= 1e-12);
}

#[test]
fn first_step_sees_only_the_current_sample() {
    for p in [
        ForgettingSchedule::new(5.0).unwrap(),
        ForgettingSchedule::Infinite,
    ] {
        let cfg = TrainConfig {
            schedule: p,
            ..small_config(1)
        };
        let s = normal_signal((8, 8), &mut rng(3));
        let mut state = TrainState::new(&cfg).unwrap();
        let rec = train_step(&mut state, &s, &cfg).unwrap();
        assert_eq!(rec.alpha, 0.0);
        assert_eq!(state.dictionary(), &unrolled(&cfg, &[s]));
    }
}

#[test]
fn single_step_run_equals_one_train_step() {
    let cfg = small_config(1);
    let img = normal_signal((8, 8), &mut rng(4));
    let out = online_train(stream(std::slice::from_ref(&img)), &[], &cfg).unwrap();
    assert_eq!(out.records.len(), 1);
    let mut state = TrainState::new(&cfg).unwrap();
    train_step(&mut state, &preprocess(&img, cfg.preprocess), &cfg).unwrap();
    assert_eq!(&out.dictionary, state.dictionary());
}

#[test]
fn runs_are_reproducible() {
    let mut r = rng(5);
    let images: Vec<_> = (0..4).map(|_| normal_signal((8, 8), &mut r)).collect();
    let test: Vec<_> = (0..2).map(|_| normal_signal((8, 8), &mut r)).collect();
    let cfg = TrainConfig {
        eval_every: 2,
        ..small_config(4)
    };
    let a = online_train(stream(&images), &test, &cfg).unwrap();
    let b = online_train(stream(&images), &test, &cfg).unwrap();
    assert_eq!(a.dictionary, b.dictionary);
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(
            (x.t, x.alpha, x.cbpdn_iters, x.fista_iters),
            (y.t, y.alpha, y.cbpdn_iters, y.fista_iters)
        );
        assert_eq!(
            x.test_functional.map(f64::to_bits),
            y.test_functional.map(f64::to_bits)
        );
    }
}

#[test]
fn log_is_strictly_increasing() {
    let mut r = rng(6);
    let images: Vec<_> = (0..6).map(|_| normal_signal((8, 8), &mut r)).collect();
    let out = online_train(stream(&images), &[], &small_config(6)).unwrap();
    for w in out.records.windows(2) {
        assert!(w[1].t == w[0].t + 1);
        assert!(w[1].elapsed_seconds > w[0].elapsed_seconds);
    }
    let evaluated: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.test_functional.is_some())
        .map(|r| r.t)
        .collect();
    assert_eq!(evaluated, vec![5, 6]);
}

#[test]
fn learning_halves_the_test_functional() {
    // Generator support smaller than the learned one, so shifted copies fit.
    let generator = generator_dictionary(2, (2, 2), 70).unwrap();
    let spec = SyntheticSpec {
        dims: (64, 64),
        density: 0.01,
        noise: 0.0,
    };
    let train = synthetic_set(&generator, &spec, 5, 71).unwrap();
    let test = synthetic_set(&generator, &spec, 3, 72).unwrap();
    let cfg = TrainConfig {
        seed: 73,
        ..TrainConfig::new(2, (3, 3), 0.1, 5)
    };
    let initial = TrainState::new(&cfg).unwrap().dictionary().clone();
    let test_pre: Vec<_> = test.iter().map(|s| preprocess(s, cfg.preprocess)).collect();
    let before = evaluate_dictionary(&initial, &test_pre, &cfg.cbpdn)
        .unwrap()
        .value;
    let out = online_train(stream(&train), &test, &cfg).unwrap();
    let after = out.records.last().unwrap().test_functional.unwrap();
    assert!(after <= 0.5 * before, "{after} vs {before}");
}

#[test]
fn evaluation_of_one_image_is_its_objective() {
    let dict = random_dictionary(2, (3, 3), 8);
    let s = normal_signal((10, 9), &mut rng(8));
    let cfg = CbpdnConfig::new(0.1);
    let eval = evaluate_dictionary(&dict, std::slice::from_ref(&s), &cfg).unwrap();
    let (maps, _) = cbpdn_solve(&s, &dict, &cfg).unwrap();
    assert_eq!(eval.value, cbpdn_objective(&s, &dict, &maps, 0.1).unwrap());
    assert!(!eval.empty_test_set);

    let empty = evaluate_dictionary(&dict, &[], &cfg).unwrap();
    assert_eq!(empty.value, 0.0);
    assert!(empty.empty_test_set);
}

#[test]
fn representable_image_costs_about_its_code() {
    let dict = random_dictionary(2, (3, 3), 9);
    let mut r = rng(9);
    let mut code = Array3::zeros((2, 12, 12));
    for (k, v) in code.iter_mut().enumerate() {
        if k % 17 == 0 {
            *v = 0.5 * normal_array((1, 1), &mut r)[(0, 0)];
        }
    }
    let s = Signal::new(synthesize(&dict.padded((12, 12)).unwrap(), &code)).unwrap();
    let lambda = 1e-3;
    let oracle = cbpdn_objective(
        &s,
        &dict,
        &CoefficientMaps::new(code.clone()).unwrap(),
        lambda,
    )
    .unwrap();
    assert!((oracle - lambda * code.iter().map(|v| v.abs()).sum::<f64>()).abs() < 1e-12);
    let value = evaluate_dictionary(&dict, &[s], &CbpdnConfig::new(lambda))
        .unwrap()
        .value;
    assert!(value <= 1.1 * oracle, "{value} vs {oracle}");
}

#[test]
fn state_footprint_does_not_grow() {
    let cfg = small_config(100);
    let mut state = TrainState::new(&cfg).unwrap();
    let mut r = rng(10);
    let mut at = Vec::new();
    for t in 1..=100 {
        train_step(&mut state, &normal_signal((8, 8), &mut r), &cfg).unwrap();
        if t == 10 || t == 100 {
            at.push((
                state.footprint_bytes(),
                state.accumulator().unwrap().footprint_bytes(),
            ));
        }
    }
    assert_eq!(at[0], at[1]);
}

#[test]
fn region_mode_shrinks_the_accumulator_by_the_frequency_ratio() {
    let whole = Accumulator::new(4, (256, 256)).unwrap();
    let region = Accumulator::new(4, (64, 64)).unwrap();
    assert_eq!(whole.freq_count(), 256 * 129);
    assert_eq!(region.freq_count(), 64 * 33);
    assert_eq!(
        whole.payload_bytes() * 64 * 33,
        region.payload_bytes() * 256 * 129
    );
}

#[test]
fn regions_enter_the_stream_in_tile_order() {
    let mut r = rng(11);
    let images: Vec<_> = (0..2).map(|_| normal_signal((16, 16), &mut r)).collect();
    let cfg = TrainConfig {
        sample_mode: SampleMode::Regions {
            size: (8, 8),
            strategy: RegionStrategy::Grid,
        },
        preprocess: Preprocess::None,
        ..small_config(8)
    };
    let mut seen = Vec::new();
    let out = online_train_with(stream(&images), &[], &cfg, |state, rec| {
        seen.push((rec.t, state.working_dims()));
    })
    .unwrap();
    assert_eq!(out.records.len(), 8);
    assert!(seen.iter().all(|(_, d)| *d == Some((8, 8))));
}

#[test]
fn mismatched_sample_is_a_step_error() {
    let cfg = small_config(2);
    let mut state = TrainState::new(&cfg).unwrap();
    train_step(&mut state, &normal_signal((8, 8), &mut rng(12)), &cfg).unwrap();
    let err = train_step(&mut state, &normal_signal((8, 9), &mut rng(13)), &cfg).unwrap_err();
    assert!(matches!(err, Error::Step { step: 2, .. }), "{err}");
    assert!(online_train(std::iter::empty(), &[], &cfg).is_err());
}
