//! Parameter recovery from trial logs.
//!
//! The dynamics are fit as
//!
//! ```text
//! T_i(t+1) = a·T_i(t) + b·[L, M, F]ᵀ + α_i + ε
//! ```
//!
//! with a per-participant intercept `α_i`. Intercepts are found by
//! backfitting: least squares for `(a, b)` on `y − α`, then `α_i` set to the
//! participant's mean residual, re-centred so the row-weighted mean of `α` is
//! zero (the one-hot event columns already span the constant). This is a
//! two-stage approximation of a random-intercept mixed model, not REML.
//!
//! Standard errors come from the least-squares covariance of the full design
//! `[T, L, M, F, centred participant dummies]`, so they include the
//! uncertainty of the intercepts.
//!
//! The output equation has no intercept, so each channel of `c` is a
//! through-the-origin regression on reported trust.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::model::{Event, ModelParameters, ParameterSem, TrialLog};

const INTERCEPT_TOL: f64 = 1e-8;
const MAX_BACKFIT_ITER: usize = 100_000;
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFit {
    pub a: f64,
    pub b: [f64; 3],
    /// Residual variance after removing intercepts.
    pub q: f64,
    pub sem_a: f64,
    pub sem_b: [f64; 3],
    pub intercepts: BTreeMap<String, f64>,
    pub n_rows: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFit {
    pub c: [f64; 3],
    pub r: [f64; 3],
    pub sem_c: [f64; 3],
    pub n_rows: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Point estimates with `sem` populated.
    pub params: ModelParameters,
    pub sem: ParameterSem,
    /// Fitted `q` and `r`.
    pub residual_variances: (f64, [f64; 3]),
    /// Rows used by the dynamics regression.
    pub n_observations: usize,
    pub observation_rows: [usize; 3],
    pub per_participant_intercepts: BTreeMap<String, f64>,
    pub iterations: usize,
}

struct Row {
    group: usize,
    x: Vector4<f64>,
    y: f64,
}

struct Design {
    groups: Vec<String>,
    rows: Vec<Row>,
}

/// Sorted view of the corpus so results do not depend on input order.
fn sorted_logs(logs: &[TrialLog]) -> Result<Vec<&TrialLog>> {
    if logs.is_empty() {
        return Err(Error::invalid("no trial logs to fit"));
    }
    for log in logs {
        log.validate()?;
    }
    let mut sorted: Vec<&TrialLog> = logs.iter().collect();
    sorted.sort_by(|a, b| (&a.participant_id, &a.trial_id).cmp(&(&b.participant_id, &b.trial_id)));
    Ok(sorted)
}

fn dynamics_design(logs: &[TrialLog]) -> Result<Design> {
    let sorted = sorted_logs(logs)?;
    let mut groups: Vec<String> = sorted.iter().map(|l| l.participant_id.clone()).collect();
    groups.dedup();
    let index: BTreeMap<&str, usize> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();

    let mut rows = Vec::new();
    for log in sorted {
        let group = index[log.participant_id.as_str()];
        for pair in log.steps.windows(2) {
            if let (Some(prev), Some(next)) = (pair[0].reported_trust, pair[1].reported_trust) {
                let ind = pair[1].event.indicator();
                rows.push(Row {
                    group,
                    x: Vector4::new(prev, ind[0], ind[1], ind[2]),
                    y: next,
                });
            }
        }
    }
    Ok(Design { groups, rows })
}

/// Regresses next-step trust on current trust and the event indicators with
/// per-participant intercepts.
pub fn fit_dynamics(logs: &[TrialLog]) -> Result<DynamicsFit> {
    let Design { groups, rows } = dynamics_design(logs)?;
    let n_groups = groups.len();
    if n_groups < 2 {
        return Err(Error::invalid(format!(
            "dynamics fit needs at least 2 participants, got {n_groups}"
        )));
    }
    let mut counts = vec![0usize; n_groups];
    for row in &rows {
        counts[row.group] += 1;
    }
    if let Some(g) = counts.iter().position(|&n| n < 2) {
        return Err(Error::invalid(format!(
            "participant `{}` has {} consecutive reported-trust pairs, need at least 2",
            groups[g], counts[g]
        )));
    }
    for event in Event::ALL {
        if !rows.iter().any(|r| r.x[1 + event.index()] == 1.0) {
            return Err(Error::DegenerateDesign {
                regressor: event.as_str().to_string(),
                reason: "never occurs in the corpus".to_string(),
            });
        }
    }

    let n = rows.len();
    let xtx: Matrix4<f64> = rows.iter().map(|r| r.x * r.x.transpose()).sum();
    let svals = xtx.singular_values();
    if svals.min() <= RANK_TOL * svals.max() {
        return Err(Error::DegenerateDesign {
            regressor: "trust".to_string(),
            reason: "is collinear with the event indicators".to_string(),
        });
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal equations are not positive definite".into()))?;

    let solve_beta = |alpha: &[f64]| -> Vector4<f64> {
        let xty: Vector4<f64> = rows.iter().map(|r| r.x * (r.y - alpha[r.group])).sum();
        chol.solve(&xty)
    };

    let mut alpha = vec![0.0; n_groups];
    let mut beta = solve_beta(&alpha);
    let mut iterations = 0;
    loop {
        if iterations == MAX_BACKFIT_ITER {
            return Err(Error::NonConvergence {
                what: "participant intercept backfitting".to_string(),
                iterations,
            });
        }
        iterations += 1;

        let mut sums = vec![0.0; n_groups];
        for r in &rows {
            sums[r.group] += r.y - r.x.dot(&beta);
        }
        let mut next: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let centre = next
            .iter()
            .zip(&counts)
            .map(|(a, &c)| a * c as f64)
            .sum::<f64>()
            / n as f64;
        next.iter_mut().for_each(|a| *a -= centre);

        let delta = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        alpha = next;
        beta = solve_beta(&alpha);
        if delta < INTERCEPT_TOL {
            break;
        }
    }

    let rss: f64 = rows
        .iter()
        .map(|r| (r.y - r.x.dot(&beta) - alpha[r.group]).powi(2))
        .sum();
    let n_params = 4 + n_groups - 1;
    if n <= n_params {
        return Err(Error::invalid(format!(
            "{n} regression rows cannot identify {n_params} coefficients"
        )));
    }
    let q = rss / (n - n_params) as f64;

    let cov = full_design_inverse(&rows, &counts)?;
    let sem = |k: usize| (q * cov[(k, k)]).max(0.0).sqrt();

    Ok(DynamicsFit {
        a: beta[0],
        b: [beta[1], beta[2], beta[3]],
        q,
        sem_a: sem(0),
        sem_b: [sem(1), sem(2), sem(3)],
        intercepts: groups.into_iter().zip(alpha).collect(),
        n_rows: n,
        iterations,
    })
}

/// Upper-left 4×4 block of `(ZᵀZ)⁻¹` for `Z = [X, D·K]`, where `K` maps the
/// first `G − 1` intercepts onto all `G` under the row-weighted zero-sum
/// constraint.
fn full_design_inverse(rows: &[Row], counts: &[usize]) -> Result<Matrix4<f64>> {
    let n_groups = counts.len();
    let last = n_groups - 1;
    let width = 4 + last;
    let mut ztz = DMatrix::<f64>::zeros(width, width);
    let mut z = DVector::<f64>::zeros(width);
    let ratio: Vec<f64> = counts[..last]
        .iter()
        .map(|&c| c as f64 / counts[last] as f64)
        .collect();
    for r in rows {
        z.fill(0.0);
        z.fixed_rows_mut::<4>(0).copy_from(&r.x);
        if r.group == last {
            for (j, k) in ratio.iter().enumerate() {
                z[4 + j] = -k;
            }
        } else {
            z[4 + r.group] = 1.0;
        }
        ztz.ger(1.0, &z, &z, 1.0);
    }
    let inv = ztz
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign {
            regressor: "trust".to_string(),
            reason: "does not vary within participants".to_string(),
        })?
        .inverse();
    Ok(inv.fixed_view::<4, 4>(0, 0).into_owned())
}

/// Per-row `(participant, y − a·T − b·e)` residuals of a dynamics fit, before
/// the intercept is removed.
pub fn dynamics_residuals(logs: &[TrialLog], fit: &DynamicsFit) -> Result<Vec<(String, f64)>> {
    let design = dynamics_design(logs)?;
    let beta = Vector4::new(fit.a, fit.b[0], fit.b[1], fit.b[2]);
    Ok(design
        .rows
        .iter()
        .map(|r| (design.groups[r.group].clone(), r.y - r.x.dot(&beta)))
        .collect())
}

/// Per-channel least squares of `(φ, π, υ)` on reported trust through the origin.
pub fn fit_observation(logs: &[TrialLog]) -> Result<ObservationFit> {
    let sorted = sorted_logs(logs)?;
    let mut fit = ObservationFit {
        c: [0.0; 3],
        r: [0.0; 3],
        sem_c: [0.0; 3],
        n_rows: [0; 3],
    };
    const CHANNELS: [&str; 3] = ["phi", "pi", "upsilon"];
    for (ch, name) in CHANNELS.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = sorted
            .iter()
            .flat_map(|l| &l.steps)
            .filter_map(|s| Some((s.reported_trust?, s.observation.channels[ch]?)))
            .collect();
        let n = pairs.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "channel {name} has {n} usable rows, need at least 2"
            )));
        }
        let mean_t = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        if pairs.iter().all(|p| p.0 == mean_t) || pairs.iter().all(|p| p.0 == pairs[0].0) {
            return Err(Error::DegenerateDesign {
                regressor: "reported_trust".to_string(),
                reason: format!("has zero variance in channel {name}"),
            });
        }
        let stt: f64 = pairs.iter().map(|(t, _)| t * t).sum();
        let sty: f64 = pairs.iter().map(|(t, y)| t * y).sum();
        let c = sty / stt;
        let rss: f64 = pairs.iter().map(|(t, y)| (y - c * t).powi(2)).sum();
        let r = rss / (n - 1) as f64;
        fit.c[ch] = c;
        fit.r[ch] = r;
        fit.sem_c[ch] = (r / stt).sqrt();
        fit.n_rows[ch] = n;
    }
    Ok(fit)
}

pub fn fit_all(logs: &[TrialLog]) -> Result<FitResult> {
    let dynamics = fit_dynamics(logs)?;
    let observation = fit_observation(logs)?;
    let sem = ParameterSem {
        a: dynamics.sem_a,
        b: dynamics.sem_b,
        c: observation.sem_c,
    };
    Ok(FitResult {
        params: ModelParameters {
            a: dynamics.a,
            b: dynamics.b,
            c: observation.c,
            q: dynamics.q,
            r: observation.r,
            sem: Some(sem),
        },
        sem,
        residual_variances: (dynamics.q, observation.r),
        n_observations: dynamics.n_rows,
        observation_rows: observation.n_rows,
        per_participant_intercepts: dynamics.intercepts,
        iterations: dynamics.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_corpus, CorpusDesign, LogStep, Observation};

    fn noise_free_corpus(participants: usize) -> Vec<TrialLog> {
        let design = CorpusDesign {
            participants,
            stochastic: false,
            ..CorpusDesign::study_scale()
        };
        simulate_corpus(&ModelParameters::table1(), &design, 11)
            .unwrap()
            .into_iter()
            .map(|s| s.log)
            .collect()
    }

    #[test]
    fn noise_free_recovery() {
        let logs = noise_free_corpus(80);
        let fit = fit_all(&logs).unwrap();
        let truth = ModelParameters::table1();
        assert!((fit.params.a - truth.a).abs() < 1e-8);
        for k in 0..3 {
            assert!((fit.params.b[k] - truth.b[k]).abs() < 1e-8, "b[{k}]");
            assert!((fit.params.c[k] - truth.c[k]).abs() < 1e-8, "c[{k}]");
            assert!(fit.params.r[k] <= 1e-10);
        }
        assert!(fit.params.q <= 1e-10);
        assert_eq!(fit.n_observations, 80 * 2 * 11);
        assert_eq!(fit.observation_rows, [80 * 2 * 12; 3]);
    }

    #[test]
    fn missing_event_type_is_named() {
        let design = CorpusDesign {
            participants: 4,
            schedule: Some(vec![vec![Event::TrueAlarm; 12]; 2]),
            ..CorpusDesign::study_scale()
        };
        let logs: Vec<TrialLog> = simulate_corpus(&ModelParameters::table1(), &design, 1)
            .unwrap()
            .into_iter()
            .map(|s| s.log)
            .collect();
        match fit_dynamics(&logs) {
            Err(Error::DegenerateDesign { regressor, .. }) => assert_eq!(regressor, "miss"),
            other => panic!("expected degenerate design, got {other:?}"),
        }
    }

    #[test]
    fn constant_trust_is_degenerate_for_observation_fit() {
        let mut logs = noise_free_corpus(2);
        for log in &mut logs {
            for s in &mut log.steps {
                s.reported_trust = Some(42.0);
            }
        }
        assert!(matches!(
            fit_observation(&logs),
            Err(Error::DegenerateDesign { .. })
        ));
    }

    #[test]
    fn rejects_empty_and_single_participant() {
        assert!(matches!(fit_all(&[]), Err(Error::InvalidArgument(_))));
        let logs = noise_free_corpus(1);
        assert!(matches!(
            fit_dynamics(&logs),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unreported_steps_are_skipped() {
        let mut logs = noise_free_corpus(10);
        logs[0].steps[5].reported_trust = None;
        logs[3].steps[7].observation = Observation {
            channels: [None, Some(0.2), None],
        };
        let fit = fit_all(&logs).unwrap();
        assert_eq!(fit.n_observations, 10 * 2 * 11 - 2);
        assert_eq!(fit.observation_rows, [238, 239, 238]);
    }

    #[test]
    fn participant_with_too_few_pairs() {
        let mut logs = noise_free_corpus(3);
        logs.push(TrialLog {
            participant_id: "short".into(),
            trial_id: "t0".into(),
            steps: vec![LogStep {
                event: Event::Miss,
                reported_trust: Some(50.0),
                observation: Observation::default(),
            }],
        });
        assert!(matches!(
            fit_dynamics(&logs),
            Err(Error::InvalidArgument(_))
        ));
    }
}
