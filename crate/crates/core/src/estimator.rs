//! Scalar Kalman filter for latent trust fed by the three behavioural channels.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{Event, ModelParameters, Observation, TrialLog};

/// Gaussian belief over latent trust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub mean: f64,
    pub variance: f64,
}

impl FilterState {
    pub fn new(mean: f64, variance: f64) -> Self {
        FilterState { mean, variance }
    }

    fn check(&self) -> Result<()> {
        ensure_finite("belief mean", self.mean)?;
        ensure_finite("belief variance", self.variance)?;
        if self.variance < 0.0 {
            return Err(Error::invalid(format!(
                "belief variance must be >= 0, got {}",
                self.variance
            )));
        }
        Ok(())
    }
}

/// Prior the filter starts from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub initial_mean: f64,
    pub initial_variance: f64,
}

impl Default for FilterConfig {
    /// Scale midpoint with a 15-point standard deviation.
    fn default() -> Self {
        FilterConfig {
            initial_mean: 50.0,
            initial_variance: 225.0,
        }
    }
}

impl FilterConfig {
    pub fn new(initial_mean: f64, initial_variance: f64) -> Result<Self> {
        let config = FilterConfig {
            initial_mean,
            initial_variance,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("initial mean", self.initial_mean)?;
        ensure_finite("initial variance", self.initial_variance)?;
        if self.initial_variance <= 0.0 {
            return Err(Error::invalid(format!(
                "initial variance must be > 0, got {}",
                self.initial_variance
            )));
        }
        Ok(())
    }

    pub fn prior(&self) -> FilterState {
        FilterState::new(self.initial_mean, self.initial_variance)
    }
}

/// Time update through the state equation.
pub fn predict(params: &ModelParameters, belief: FilterState, event: Event) -> Result<FilterState> {
    belief.check()?;
    Ok(FilterState {
        mean: params.a * belief.mean + params.input_effect(event),
        variance: params.a * params.a * belief.variance + params.q,
    })
}

/// Measurement update with every present channel fused jointly. Missing
/// channels drop their rows of `c` and `r`.
pub fn update(
    params: &ModelParameters,
    belief: FilterState,
    observation: &Observation,
) -> Result<FilterState> {
    belief.check()?;
    let used: Vec<(usize, f64)> = observation
        .channels
        .iter()
        .enumerate()
        .filter_map(|(i, y)| y.map(|y| (i, y)))
        .collect();
    for &(i, y) in &used {
        ensure_finite(&format!("observation channel {i}"), y)?;
        if params.r[i] < 0.0 {
            return Err(Error::invalid(format!("r[{i}] must be >= 0")));
        }
    }
    if used.is_empty() {
        return Ok(belief);
    }

    let p = belief.variance;
    if used.iter().all(|&(i, _)| params.r[i] > 0.0) {
        // With diagonal R, S⁻¹ = R⁻¹ − p·R⁻¹ccᵀR⁻¹ / (1 + p·cᵀR⁻¹c), so the gain
        // collapses to p·cᵀR⁻¹ / (1 + p·s) and the posterior variance to
        // p / (1 + p·s), which is nonnegative by construction.
        let mut s = 0.0;
        let mut weighted_innovation = 0.0;
        for &(i, y) in &used {
            let c = params.c[i];
            s += c * c / params.r[i];
            weighted_innovation += c * (y - c * belief.mean) / params.r[i];
        }
        let denom = 1.0 + p * s;
        return Ok(FilterState {
            mean: belief.mean + p * weighted_innovation / denom,
            variance: p / denom,
        });
    }

    // Some channel is noiseless: fall back to the explicit innovation covariance.
    let k = used.len();
    let c = DVector::from_iterator(k, used.iter().map(|&(i, _)| params.c[i]));
    let r = DVector::from_iterator(k, used.iter().map(|&(i, _)| params.r[i]));
    let y = DVector::from_iterator(k, used.iter().map(|&(_, y)| y));
    let s = &c * c.transpose() * p + DMatrix::from_diagonal(&r);
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Degenerate("innovation covariance is singular".to_string()))?;
    let gain = chol.solve(&(&c * p)); // S⁻¹·c·p, symmetric so equals Kᵀ
    let innovation = &y - &c * belief.mean;
    let kc = gain.dot(&c);
    // Joseph form.
    let variance = (1.0 - kc).powi(2) * p + gain.component_mul(&gain).dot(&r);
    Ok(FilterState {
        mean: belief.mean + gain.dot(&innovation),
        variance: variance.max(0.0),
    })
}

pub fn filter_step(
    params: &ModelParameters,
    belief: FilterState,
    event: Event,
    observation: &Observation,
) -> Result<FilterState> {
    update(params, predict(params, belief, event)?, observation)
}

/// Posterior after every step of `log`, starting from the configured prior.
pub fn filter_trajectory(
    params: &ModelParameters,
    config: &FilterConfig,
    log: &TrialLog,
) -> Result<Vec<FilterState>> {
    if log.is_empty() {
        return Err(Error::invalid("trial log has no steps"));
    }
    params.validate_for_estimation()?;
    config.validate()?;
    let mut belief = config.prior();
    log.steps
        .iter()
        .map(|step| {
            belief = filter_step(params, belief, step.event, &step.observation)?;
            Ok(belief)
        })
        .collect()
}

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 1_000_000;

/// Fixed point of the predicted-variance recursion
/// `P ← a²·P/(1 + P·s) + q` with `s = Σ cᵢ²/rᵢ`.
///
/// The scalar equation `s·P² + (1 − a² − q·s)·P − q = 0` has a closed-form
/// nonnegative root, used as the starting point; the recursion is then
/// iterated until successive values differ by less than 1e-12.
pub fn steady_state_variance(params: &ModelParameters) -> Result<f64> {
    params.validate_for_estimation()?;
    let a2 = params.a * params.a;
    let q = params.q;
    let s: f64 = (0..3)
        .map(|i| params.c[i] * params.c[i] / params.r[i])
        .sum();

    let mut p = if s > 0.0 {
        let lin = 1.0 - a2 - q * s;
        let root = (-lin + (lin * lin + 4.0 * s * q).sqrt()) / (2.0 * s);
        root.max(0.0)
    } else if a2 < 1.0 {
        q / (1.0 - a2)
    } else {
        q
    };

    for _ in 0..RICCATI_MAX_ITER {
        let next = a2 * p / (1.0 + p * s) + q;
        if !next.is_finite() {
            break;
        }
        if (next - p).abs() < RICCATI_TOL {
            return Ok(next);
        }
        p = next;
    }
    Err(Error::NonConvergence {
        what: "steady-state Riccati recursion".to_string(),
        iterations: RICCATI_MAX_ITER,
    })
}
