use std::collections::BTreeMap;

use trust_dynamics::model::{simulate_corpus, CorpusDesign};
use trust_dynamics::sysid::{dynamics_residuals, fit_all, fit_dynamics, fit_observation};
use trust_dynamics::{ModelParameters, TrialLog};

fn corpus(participants: usize, seed: u64) -> Vec<TrialLog> {
    let design = CorpusDesign {
        participants,
        ..CorpusDesign::study_scale()
    };
    simulate_corpus(&ModelParameters::table1(), &design, seed)
        .unwrap()
        .into_iter()
        .map(|s| s.log)
        .collect()
}

#[test]
fn residual_means_equal_intercepts() {
    let logs = corpus(30, 1);
    let fit = fit_dynamics(&logs).unwrap();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (id, r) in dynamics_residuals(&logs, &fit).unwrap() {
        let e = sums.entry(id).or_default();
        e.0 += r;
        e.1 += 1;
    }
    assert_eq!(sums.len(), fit.intercepts.len());
    for (id, (s, n)) in sums {
        assert!((s / n as f64 - fit.intercepts[&id]).abs() < 1e-6, "{id}");
    }
}

#[test]
fn fit_ignores_log_order() {
    let logs = corpus(20, 2);
    let base = fit_all(&logs).unwrap();
    let mut reversed = logs.clone();
    reversed.reverse();
    let mut rotated = logs.clone();
    rotated.rotate_left(13);
    for permuted in [reversed, rotated] {
        let fit = fit_all(&permuted).unwrap();
        assert!((fit.params.a - base.params.a).abs() <= 1e-12);
        for k in 0..3 {
            assert!((fit.params.b[k] - base.params.b[k]).abs() <= 1e-12);
            assert!((fit.params.c[k] - base.params.c[k]).abs() <= 1e-12);
            assert!((fit.params.r[k] - base.params.r[k]).abs() <= 1e-12);
        }
        assert!((fit.params.q - base.params.q).abs() <= 1e-12);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn b_error_shrinks_with_more_participants() {
    let truth = ModelParameters::table1();
    let medians: Vec<f64> = [10, 40, 160]
        .iter()
        .map(|&n| {
            median(
                (0..10)
                    .map(|seed| {
                        let fit = fit_dynamics(&corpus(n, 100 + seed)).unwrap();
                        (0..3)
                            .map(|k| (fit.b[k] - truth.b[k]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect(),
            )
        })
        .collect();
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "{medians:?}"
    );
}

#[test]
fn c_within_three_sem_in_most_seeds() {
    let truth = ModelParameters::table1();
    let mut hits = [0usize; 3];
    for seed in 0..20 {
        let fit = fit_observation(&corpus(80, 500 + seed)).unwrap();
        for (k, hit) in hits.iter_mut().enumerate() {
            if (fit.c[k] - truth.c[k]).abs() <= 3.0 * fit.sem_c[k] {
                *hit += 1;
            }
        }
    }
    assert!(hits.iter().all(|&h| h >= 18), "{hits:?}");
}
