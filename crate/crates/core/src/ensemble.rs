//! Monte Carlo estimate bands from repeated noisy filter runs.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{filter_trajectory, predict, update, FilterConfig, FilterState};
use crate::model::{
    derive_seed, seeded_rng, simulate_trial_with_rng, Event, ModelParameters, NoiseModel,
    Observation, SimulatedTrial, TrialLog,
};

/// How the pointwise envelope over runs is formed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BandMode {
    #[default]
    MinMax,
    /// `[p, 1 − p]` quantiles, `0 < p < 0.5`, linearly interpolated
    /// between order statistics.
    Percentile(f64),
}

impl BandMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BandMode::MinMax => Ok(()),
            BandMode::Percentile(p) if p > 0.0 && p < 0.5 => Ok(()),
            BandMode::Percentile(p) => Err(Error::invalid(format!(
                "percentile must lie in (0, 0.5), got {p}"
            ))),
        }
    }
}

/// Where the per-run randomness enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordMode {
    /// Every run draws its own truth rollout and observations.
    #[default]
    Resample,
    /// One stochastic truth/observation record is shared; each run perturbs
    /// the filter's time update with a `u` draw and the consumed observation
    /// with a `w` draw.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSettings {
    pub n_runs: usize,
    pub seed: u64,
    pub band_mode: BandMode,
    pub record_mode: RecordMode,
}

impl EnsembleSettings {
    pub fn new(n_runs: usize, seed: u64) -> Self {
        EnsembleSettings {
            n_runs,
            seed,
            band_mode: BandMode::MinMax,
            record_mode: RecordMode::Resample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    /// Estimate means per run, one entry per step.
    pub runs: Vec<Vec<f64>>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
    /// Filter replay of the noise-free log.
    pub best_estimate: Vec<FilterState>,
    /// Noise-free latent trajectory.
    pub truth: Vec<f64>,
}

impl EnsembleResult {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn band_width(&self) -> Vec<f64> {
        self.band_upper
            .iter()
            .zip(&self.band_lower)
            .map(|(u, l)| u - l)
            .collect()
    }
}

/// Pointwise envelope of equal-length trajectories.
pub fn compute_bands(runs: &[Vec<f64>], mode: BandMode) -> Result<(Vec<f64>, Vec<f64>)> {
    mode.validate()?;
    let first = runs
        .first()
        .ok_or_else(|| Error::invalid("no trajectories to band"))?;
    let len = first.len();
    if let Some(k) = runs.iter().position(|r| r.len() != len) {
        return Err(Error::invalid(format!(
            "trajectory {k} has length {}, expected {len}",
            runs[k].len()
        )));
    }

    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut column = vec![0.0; runs.len()];
    for t in 0..len {
        for (slot, run) in column.iter_mut().zip(runs) {
            *slot = run[t];
        }
        column.sort_by(f64::total_cmp);
        match mode {
            BandMode::MinMax => {
                lower.push(column[0]);
                upper.push(column[column.len() - 1]);
            }
            BandMode::Percentile(p) => {
                lower.push(quantile_sorted(&column, p));
                upper.push(quantile_sorted(&column, 1.0 - p));
            }
        }
    }
    Ok((lower, upper))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `settings.n_runs` independent noisy filter replays of one event
/// schedule. Run `k` draws from a generator seeded with
/// `derive_seed(seed, k)`, so the result does not depend on how runs are
/// scheduled across threads. The band is widened to contain the noise-free
/// best estimate.
pub fn run_ensemble(
    params: &ModelParameters,
    config: &FilterConfig,
    events: &[Event],
    truth_initial: f64,
    settings: &EnsembleSettings,
) -> Result<EnsembleResult> {
    if settings.n_runs < 2 {
        return Err(Error::invalid(format!(
            "an ensemble needs at least 2 runs, got {}",
            settings.n_runs
        )));
    }
    settings.band_mode.validate()?;
    params.validate_for_estimation()?;
    config.validate()?;

    let clean =
        simulate_trial_with_rng::<rand_chacha::ChaCha8Rng>(params, truth_initial, events, None)?;
    let best_estimate = filter_trajectory(params, config, &clean.log)?;

    let runs: Vec<Vec<f64>> = match settings.record_mode {
        RecordMode::Resample => (0..settings.n_runs)
            .into_par_iter()
            .map(|k| {
                let mut rng = seeded_rng(derive_seed(settings.seed, k as u64));
                let sim = simulate_trial_with_rng(params, truth_initial, events, Some(&mut rng))?;
                Ok(means(&filter_trajectory(params, config, &sim.log)?))
            })
            .collect::<Result<_>>()?,
        RecordMode::Fixed => {
            let record = shared_record(params, truth_initial, events, settings)?;
            let noise = NoiseModel::new(params)?;
            (0..settings.n_runs)
                .into_par_iter()
                .map(|k| {
                    let mut rng = seeded_rng(derive_seed(settings.seed, k as u64));
                    perturbed_replay(params, config, &record.log, &noise, &mut rng)
                })
                .collect::<Result<_>>()?
        }
    };

    let (mut band_lower, mut band_upper) = compute_bands(&runs, settings.band_mode)?;
    for (t, best) in best_estimate.iter().enumerate() {
        band_lower[t] = band_lower[t].min(best.mean);
        band_upper[t] = band_upper[t].max(best.mean);
    }

    Ok(EnsembleResult {
        runs,
        band_lower,
        band_upper,
        best_estimate,
        truth: clean.latent,
    })
}

/// Record shared by every run in [`RecordMode::Fixed`]; drawn from the
/// stream just past the last run index.
fn shared_record(
    params: &ModelParameters,
    truth_initial: f64,
    events: &[Event],
    settings: &EnsembleSettings,
) -> Result<SimulatedTrial> {
    let mut rng = seeded_rng(derive_seed(settings.seed, settings.n_runs as u64));
    simulate_trial_with_rng(params, truth_initial, events, Some(&mut rng))
}

fn perturbed_replay<R: Rng + ?Sized>(
    params: &ModelParameters,
    config: &FilterConfig,
    log: &TrialLog,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut belief = config.prior();
    let mut out = Vec::with_capacity(log.len());
    for step in &log.steps {
        let u = noise.process(rng);
        let w = noise.observation(rng);
        let mut predicted = predict(params, belief, step.event)?;
        predicted.mean += u;
        let mut obs: Observation = step.observation;
        for (slot, w) in obs.channels.iter_mut().zip(w) {
            if let Some(y) = slot {
                *y += w;
            }
        }
        belief = update(params, predicted, &obs)?;
        out.push(belief.mean);
    }
    Ok(out)
}

fn means(states: &[FilterState]) -> Vec<f64> {
    states.iter().map(|s| s.mean).collect()
}
