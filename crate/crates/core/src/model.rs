//! Discrete-time trust dynamics and forward simulation.
//!
//! Trust is a scalar on the 1–100 self-report scale driven by one interaction
//! event per time index:
//!
//! ```text
//! T(t+1) = a·T(t) + b·[L, M, F]ᵀ + u,     u ~ N(0, q)
//! y(t)   = c·T(t) + w,                    w ~ N(0, diag(r))
//! ```
//!
//! where `[L, M, F]` is the one-hot indicator of a true alarm, miss or false
//! alarm and `y = (φ, π, υ)` are visual focus, NDRT performance and
//! automation usage.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const TRUST_MIN: f64 = 1.0;
pub const TRUST_MAX: f64 = 100.0;

/// Interaction event at one time index. Exactly one event occurs per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    TrueAlarm,
    Miss,
    FalseAlarm,
}

impl Event {
    /// Ordered as the input vector `[L, M, F]`.
    pub const ALL: [Event; 3] = [Event::TrueAlarm, Event::Miss, Event::FalseAlarm];

    /// Column of `b` this event selects.
    pub fn index(self) -> usize {
        match self {
            Event::TrueAlarm => 0,
            Event::Miss => 1,
            Event::FalseAlarm => 2,
        }
    }

    pub fn indicator(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    /// Decodes an `[L, M, F]` indicator, rejecting anything but a one-hot vector.
    pub fn from_indicator(v: [f64; 3]) -> Result<Event> {
        let ones: Vec<usize> = (0..3).filter(|&i| v[i] == 1.0).collect();
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        match (ones.as_slice(), zeros) {
            ([i], 2) => Ok(Event::ALL[*i]),
            _ => Err(Error::invalid(format!(
                "event indicator {v:?} is not one-hot"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Event::TrueAlarm => "true_alarm",
            Event::Miss => "miss",
            Event::FalseAlarm => "false_alarm",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(s: &str) -> Result<Event> {
        match s {
            "true_alarm" => Ok(Event::TrueAlarm),
            "miss" => Ok(Event::Miss),
            "false_alarm" => Ok(Event::FalseAlarm),
            other => Err(Error::invalid(format!(
                "unknown event `{other}` (expected true_alarm, miss or false_alarm)"
            ))),
        }
    }
}

/// Standard errors reported alongside point estimates of `a`, `b` and `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSem {
    pub a: f64,
    pub b: [f64; 3],
    pub c: [f64; 3],
}

/// Matrices of the trust model. `b` columns follow `[L, M, F]`, `c` and `r`
/// rows follow `(φ, π, υ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParameters {
    pub a: f64,
    pub b: [f64; 3],
    pub c: [f64; 3],
    /// Process-noise variance, trust points².
    pub q: f64,
    /// Diagonal of the observation-noise covariance.
    pub r: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sem: Option<ParameterSem>,
}

impl ModelParameters {
    /// Published estimates identified from the 80-participant driving study.
    pub fn table1() -> Self {
        ModelParameters {
            a: 1.00,
            b: [0.224, -0.670, -0.798],
            c: [7.01e-3, 4.23e-3, 9.20e-3],
            q: 0.26,
            r: [0.18, 0.07, 0.06],
            sem: Some(ParameterSem {
                a: 0.25,
                b: [0.079, 0.084, 0.083],
                c: [3.6e-4, 1.3e-4, 1.0e-4],
            }),
        }
    }

    /// Resolves a preset name. Only `table1` exists.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table1" => Some(Self::table1()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("a", self.a)?;
        for (i, v) in self.b.iter().enumerate() {
            ensure_finite(&format!("b[{i}]"), *v)?;
        }
        for (i, v) in self.c.iter().enumerate() {
            ensure_finite(&format!("c[{i}]"), *v)?;
        }
        ensure_finite("q", self.q)?;
        if self.q < 0.0 {
            return Err(Error::invalid(format!("q must be >= 0, got {}", self.q)));
        }
        for (i, v) in self.r.iter().enumerate() {
            ensure_finite(&format!("r[{i}]"), *v)?;
            if *v < 0.0 {
                return Err(Error::invalid(format!("r[{i}] must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Stricter check for the filter: the observation covariance must be invertible.
    pub fn validate_for_estimation(&self) -> Result<()> {
        self.validate()?;
        if let Some(i) = self.r.iter().position(|&v| v <= 0.0) {
            return Err(Error::invalid(format!(
                "r[{i}] must be > 0 for estimation, got {}",
                self.r[i]
            )));
        }
        Ok(())
    }

    pub fn with_r_scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.r = p.r.map(|v| v * factor);
        p
    }

    pub fn input_effect(&self, event: Event) -> f64 {
        self.b[event.index()]
    }
}

/// Latent trust in points. Unclamped; see [`clamp_report`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TrustState(pub f64);

/// Noise-free or sampled behavioural observation `(φ, π, υ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationVector {
    pub phi: f64,
    pub pi: f64,
    pub upsilon: f64,
}

impl ObservationVector {
    pub fn to_array(self) -> [f64; 3] {
        [self.phi, self.pi, self.upsilon]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        ObservationVector {
            phi: v[0],
            pi: v[1],
            upsilon: v[2],
        }
    }
}

/// Observation as logged: any channel may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub channels: [Option<f64>; 3],
}

impl Observation {
    pub fn is_empty(&self) -> bool {
        self.channels.iter().all(Option::is_none)
    }
}

impl From<ObservationVector> for Observation {
    fn from(v: ObservationVector) -> Self {
        Observation {
            channels: v.to_array().map(Some),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogStep {
    pub event: Event,
    pub reported_trust: Option<f64>,
    pub observation: Observation,
}

/// One participant's trial. Step `t` holds the event at index `t`, the trust
/// reported after it and the behaviour observed after it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub participant_id: String,
    pub trial_id: String,
    pub steps: Vec<LogStep>,
}

impl TrialLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        self.steps.iter().map(|s| s.event)
    }

    pub fn validate(&self) -> Result<()> {
        let name = format!("trial {}/{}", self.participant_id, self.trial_id);
        if self.steps.is_empty() {
            return Err(Error::invalid(format!("{name} has no steps")));
        }
        for (t, step) in self.steps.iter().enumerate() {
            if let Some(trust) = step.reported_trust {
                if !(TRUST_MIN..=TRUST_MAX).contains(&trust) {
                    return Err(Error::invalid(format!(
                        "{name} step {t}: reported trust {trust} outside [1, 100]"
                    )));
                }
            }
            if step
                .observation
                .channels
                .iter()
                .flatten()
                .any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!(
                    "{name} step {t}: non-finite observation"
                )));
            }
        }
        Ok(())
    }
}

/// One step of the state equation. Pass `noise_u = 0` for deterministic propagation.
pub fn step_state(
    params: &ModelParameters,
    state: TrustState,
    event: Event,
    noise_u: f64,
) -> Result<TrustState> {
    ensure_finite("trust state", state.0)?;
    ensure_finite("process noise", noise_u)?;
    Ok(TrustState(
        params.a * state.0 + params.input_effect(event) + noise_u,
    ))
}

/// Output equation `c·T + w`.
pub fn emit_observation(
    params: &ModelParameters,
    state: TrustState,
    noise_w: [f64; 3],
) -> Result<ObservationVector> {
    ensure_finite("trust state", state.0)?;
    for w in noise_w {
        ensure_finite("observation noise", w)?;
    }
    Ok(ObservationVector::from_array(std::array::from_fn(|i| {
        params.c[i] * state.0 + noise_w[i]
    })))
}

/// Maps latent trust onto the reporting scale.
pub fn clamp_report(t_value: f64) -> f64 {
    t_value.clamp(TRUST_MIN, TRUST_MAX)
}

/// Simulated trial together with its unclamped latent trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub log: TrialLog,
    /// Latent trust after each event; same length as `log.steps`.
    pub latent: Vec<f64>,
}

impl SimulatedTrial {
    pub fn final_latent(&self) -> f64 {
        *self.latent.last().expect("simulated trials are nonempty")
    }
}

/// Mixes a root seed with an index into an independent 64-bit seed
/// (SplitMix64 finalizer), so per-rollout generators never depend on
/// scheduling order.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(root ^ mix(index))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian draws for `u` and `w` with the model's variances.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NoiseModel {
    process: Normal<f64>,
    observation: [Normal<f64>; 3],
}

impl NoiseModel {
    pub(crate) fn new(params: &ModelParameters) -> Result<Self> {
        let normal = |var: f64| {
            Normal::new(0.0, var.sqrt())
                .map_err(|e| Error::invalid(format!("noise variance {var}: {e}")))
        };
        Ok(NoiseModel {
            process: normal(params.q)?,
            observation: [
                normal(params.r[0])?,
                normal(params.r[1])?,
                normal(params.r[2])?,
            ],
        })
    }

    pub(crate) fn process<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.process.sample(rng)
    }

    pub(crate) fn observation<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        std::array::from_fn(|i| self.observation[i].sample(rng))
    }
}

/// Rolls the model forward over `events`. With `stochastic`, draws `u` then
/// `w` at every step from a generator seeded with `seed`.
pub fn simulate_trial(
    params: &ModelParameters,
    initial_trust: f64,
    events: &[Event],
    seed: u64,
    stochastic: bool,
) -> Result<SimulatedTrial> {
    if stochastic {
        simulate_trial_with_rng(params, initial_trust, events, Some(&mut seeded_rng(seed)))
    } else {
        simulate_trial_with_rng::<ChaCha8Rng>(params, initial_trust, events, None)
    }
}

/// As [`simulate_trial`], drawing noise from `rng` when given and running
/// noise-free otherwise.
pub fn simulate_trial_with_rng<R: Rng + ?Sized>(
    params: &ModelParameters,
    initial_trust: f64,
    events: &[Event],
    mut rng: Option<&mut R>,
) -> Result<SimulatedTrial> {
    params.validate()?;
    ensure_finite("initial trust", initial_trust)?;
    if events.is_empty() {
        return Err(Error::invalid("event list is empty"));
    }
    let noise = NoiseModel::new(params)?;
    let mut state = TrustState(initial_trust);
    let mut steps = Vec::with_capacity(events.len());
    let mut latent = Vec::with_capacity(events.len());
    for &event in events {
        let (u, w) = match rng.as_deref_mut() {
            Some(rng) => (noise.process(rng), noise.observation(rng)),
            None => (0.0, [0.0; 3]),
        };
        state = step_state(params, state, event, u)?;
        let y = emit_observation(params, state, w)?;
        latent.push(state.0);
        steps.push(LogStep {
            event,
            reported_trust: Some(clamp_report(state.0)),
            observation: y.into(),
        });
    }
    Ok(SimulatedTrial {
        log: TrialLog {
            participant_id: "p0".to_string(),
            trial_id: "t0".to_string(),
            steps,
        },
        latent,
    })
}

/// Shape of a synthetic study: participants × trials × events.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDesign {
    pub participants: usize,
    pub trials_per_participant: usize,
    pub events_per_trial: usize,
    /// Centre of the per-trial initial trust.
    pub initial_trust: f64,
    /// Half-width of the uniform spread of initial trust around the centre.
    pub initial_spread: f64,
    /// Fixed event schedule per trial; uniform random events when `None`.
    pub schedule: Option<Vec<Vec<Event>>>,
    pub stochastic: bool,
}

impl CorpusDesign {
    /// 80 participants × 2 trials × 12 events, initial trust uniform on [35, 65].
    pub fn study_scale() -> Self {
        CorpusDesign {
            participants: 80,
            trials_per_participant: 2,
            events_per_trial: 12,
            initial_trust: 50.0,
            initial_spread: 15.0,
            schedule: None,
            stochastic: true,
        }
    }
}

/// Simulates every (participant, trial) of `design` with its own generator
/// derived from `seed`. Participant ids are `p000`, `p001`, …; trial ids `t0`, `t1`, ….
pub fn simulate_corpus(
    params: &ModelParameters,
    design: &CorpusDesign,
    seed: u64,
) -> Result<Vec<SimulatedTrial>> {
    if design.participants == 0 || design.trials_per_participant == 0 {
        return Err(Error::invalid(
            "corpus needs at least one participant and trial",
        ));
    }
    if let Some(schedule) = &design.schedule {
        if schedule.len() != design.trials_per_participant {
            return Err(Error::invalid(format!(
                "schedule has {} trials, design has {}",
                schedule.len(),
                design.trials_per_participant
            )));
        }
    } else if design.events_per_trial == 0 {
        return Err(Error::invalid("events_per_trial must be > 0"));
    }
    if !(design.initial_spread >= 0.0 && design.initial_spread.is_finite()) {
        return Err(Error::invalid("initial_spread must be finite and >= 0"));
    }

    let mut out = Vec::with_capacity(design.participants * design.trials_per_participant);
    for p in 0..design.participants {
        for t in 0..design.trials_per_participant {
            let index = (p * design.trials_per_participant + t) as u64;
            let mut rng = seeded_rng(derive_seed(seed, index));
            let initial = if design.initial_spread > 0.0 {
                design.initial_trust
                    + rng.random_range(-design.initial_spread..=design.initial_spread)
            } else {
                design.initial_trust
            };
            let events: Vec<Event> = match &design.schedule {
                Some(schedule) => schedule[t].clone(),
                None => (0..design.events_per_trial)
                    .map(|_| Event::ALL[rng.random_range(0..3)])
                    .collect(),
            };
            let mut sim = if design.stochastic {
                simulate_trial_with_rng(params, initial, &events, Some(&mut rng))?
            } else {
                simulate_trial_with_rng::<ChaCha8Rng>(params, initial, &events, None)?
            };
            sim.log.participant_id = format!("p{p:03}");
            sim.log.trial_id = format!("t{t}");
            out.push(sim);
        }
    }
    Ok(out)
}
