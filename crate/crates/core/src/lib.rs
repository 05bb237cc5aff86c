//! Linear state-space model of driver trust in an automated driving system.
//!
//! * [`model`]: trust dynamics, observation equation and seeded simulation.
//! * [`estimator`]: scalar Kalman filter over the behavioural channels.
//! * [`ensemble`]: Monte Carlo estimate bands.
//! * [`sysid`]: parameter recovery from trial logs.
//! * [`io`] and [`cli`]: file formats and the `trustsim` command line.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod sysid;

pub use error::{Error, Result};
pub use estimator::{FilterConfig, FilterState};
pub use model::{Event, ModelParameters, TrialLog};
