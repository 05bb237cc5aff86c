mod common;

use common::{arb_params, brute_force_riccati, conditioning_oracle};
use proptest::prelude::*;
use trust_dynamics::estimator::{
    filter_step, filter_trajectory, predict, steady_state_variance, update,
};
use trust_dynamics::model::{
    emit_observation, simulate_trial, Event, Observation, ObservationVector, TrustState,
};
use trust_dynamics::{FilterConfig, FilterState, ModelParameters};

fn obs_at(params: &ModelParameters, trust: f64) -> ObservationVector {
    emit_observation(params, TrustState(trust), [0.0; 3]).unwrap()
}

#[test]
fn update_pulls_towards_observation_and_matches_oracle() {
    let p = ModelParameters::table1();
    let y = obs_at(&p, 60.0);
    let post = update(&p, FilterState::new(50.0, 1.26), &y.into()).unwrap();
    let (m, v) = conditioning_oracle(&p, 50.0, 1.26, y.to_array());
    assert!(post.mean > 50.0 && post.mean < 60.0);
    assert!((post.mean - m).abs() < 1e-9);
    assert!((post.variance - v).abs() < 1e-9);
}

#[test]
fn filter_step_with_poor_prior_matches_oracle() {
    let p = ModelParameters::table1();
    let y = obs_at(&p, 50.224);
    let post = filter_step(
        &p,
        FilterState::new(20.0, 100.0),
        Event::TrueAlarm,
        &y.into(),
    )
    .unwrap();
    let (m, v) = conditioning_oracle(&p, 20.224, 100.26, y.to_array());
    assert!(post.mean > 20.224);
    assert!((post.mean - m).abs() < 1e-9);
    assert!((post.variance - v).abs() < 1e-9);
}

#[test]
fn steady_state_matches_brute_force() {
    let p = ModelParameters::table1();
    let fixed = steady_state_variance(&p).unwrap();
    let brute = brute_force_riccati(&p, 0.0, 1_000_000);
    assert!((fixed - brute).abs() < 1e-9, "{fixed} vs {brute}");

    let noisy = p.with_r_scaled(4.0);
    let brute_noisy = brute_force_riccati(&noisy, 0.0, 1_000_000);
    assert!(brute_noisy > brute);
    assert!((steady_state_variance(&noisy).unwrap() - brute_noisy).abs() < 1e-9);
}

#[test]
fn filter_variance_converges_regardless_of_events() {
    let p = ModelParameters::table1();
    let fixed = steady_state_variance(&p).unwrap();
    let s: f64 = (0..3).map(|i| p.c[i] * p.c[i] / p.r[i]).sum();
    let posterior_fixed = fixed / (1.0 + fixed * s);

    let schedules = [
        vec![Event::TrueAlarm; 400],
        (0..400).map(|t| Event::ALL[t % 3]).collect::<Vec<_>>(),
    ];
    let mut finals = Vec::new();
    for events in &schedules {
        let sim = simulate_trial(&p, 50.0, events, 8, true).unwrap();
        let est = filter_trajectory(&p, &FilterConfig::default(), &sim.log).unwrap();
        let last = est.last().unwrap().variance;
        assert!((last - posterior_fixed).abs() < 1e-6);
        finals.push(est.iter().map(|e| e.variance).collect::<Vec<_>>());
    }
    assert_eq!(finals[0], finals[1]);
}

#[test]
fn zero_noise_estimates_equal_truth() {
    let mut p = ModelParameters::table1();
    p.q = 0.0;
    let events: Vec<Event> = (0..30).map(|t| Event::ALL[(t * 7) % 3]).collect();
    let sim = simulate_trial(&p, 37.0, &events, 0, false).unwrap();
    let est = filter_trajectory(&p, &FilterConfig::new(37.0, 5.0).unwrap(), &sim.log).unwrap();
    for (e, truth) in est.iter().zip(&sim.latent) {
        assert!((e.mean - truth).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn update_agrees_with_conditioning(
        params in arb_params(),
        mean in -50.0f64..150.0,
        var in 1e-3f64..400.0,
        y in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let post = update(&params, FilterState::new(mean, var), &ObservationVector::from_array(y).into()).unwrap();
        let (m, v) = conditioning_oracle(&params, mean, var, y);
        prop_assert!((post.mean - m).abs() < 1e-9, "mean {} vs {}", post.mean, m);
        prop_assert!((post.variance - v).abs() < 1e-9, "var {} vs {}", post.variance, v);
    }

    #[test]
    fn variance_stays_nonnegative_and_update_never_grows_it(
        params in arb_params(),
        var in 0.0f64..400.0,
        steps in prop::collection::vec((0usize..3, prop::array::uniform3(-2.0f64..2.0), prop::array::uniform3(any::<bool>())), 1..30),
    ) {
        let mut belief = FilterState::new(50.0, var);
        for (e, y, present) in steps {
            let predicted = predict(&params, belief, Event::ALL[e]).unwrap();
            prop_assert!(predicted.variance >= 0.0);
            let obs = Observation { channels: std::array::from_fn(|i| present[i].then_some(y[i])) };
            belief = update(&params, predicted, &obs).unwrap();
            prop_assert!(belief.variance >= 0.0);
            prop_assert!(belief.variance <= predicted.variance);
        }
    }

    #[test]
    fn predict_grows_variance_for_random_walk(
        mut params in arb_params(),
        q in 1e-6f64..5.0,
        var in 0.0f64..100.0,
        e in 0usize..3,
    ) {
        params.a = 1.0;
        params.q = q;
        let next = predict(&params, FilterState::new(10.0, var), Event::ALL[e]).unwrap();
        prop_assert!(next.variance > var);
    }

    #[test]
    fn steady_state_is_a_fixed_point(params in arb_params()) {
        let p = steady_state_variance(&params).unwrap();
        prop_assert!(p >= 0.0);
        let next = brute_force_riccati(&params, p, 1);
        prop_assert!((next - p).abs() < 1e-9 * p.max(1.0));
    }
}
