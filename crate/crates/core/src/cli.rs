//! `trustsim` command-line surface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::ensemble::{run_ensemble, BandMode, EnsembleSettings, RecordMode};
use crate::error::{Error, Result};
use crate::estimator::{filter_trajectory, steady_state_variance, FilterConfig};
use crate::io::{
    ensemble_rows, estimate_rows, load_scenario, load_trial_logs, resolve_params, write_fit,
    write_results, write_trial_logs,
};
use crate::model::{derive_seed, seeded_rng, simulate_trial_with_rng, ModelParameters, TrialLog};
use crate::sysid::fit_all;
use rand::Rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "trustsim",
    version,
    about = "Simulate, estimate and identify driver trust dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic trial logs from a scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of simulated participants.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay logs through the filter.
    Estimate {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value = "table1")]
        params: String,
        #[command(flatten)]
        prior: Prior,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate bands for a scenario.
    Ensemble {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[command(flatten)]
        prior: Prior,
        /// `minmax` or `percentile:<p>` with 0 < p < 0.5.
        #[arg(long, default_value = "minmax")]
        band_mode: String,
        /// Share one truth/observation record across runs.
        #[arg(long)]
        fixed_record: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identify model parameters from a log corpus.
    Fit {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Steady-state predicted variance of the filter.
    Riccati {
        #[arg(long, default_value = "table1")]
        params: String,
    },
}

#[derive(Args, Debug)]
struct Prior {
    /// Filter initial mean (trust points).
    #[arg(long, default_value_t = 50.0)]
    t0: f64,
    /// Filter initial variance (trust points²).
    #[arg(long, default_value_t = 225.0)]
    p0: f64,
}

impl Prior {
    fn config(&self) -> Result<FilterConfig> {
        FilterConfig::new(self.t0, self.p0)
    }
}

fn parse_band_mode(s: &str) -> Result<BandMode> {
    let mode = match s.split_once(':') {
        None if s == "minmax" => BandMode::MinMax,
        Some(("percentile", p)) => BandMode::Percentile(
            p.parse()
                .map_err(|_| Error::invalid(format!("bad percentile `{p}`")))?,
        ),
        _ => return Err(Error::invalid(format!("unknown band mode `{s}`"))),
    };
    mode.validate()?;
    Ok(mode)
}

fn scenario_params(flag: Option<&str>, inline: Option<ModelParameters>) -> Result<ModelParameters> {
    match (flag, inline) {
        (Some(spec), _) => resolve_params(spec),
        (None, Some(p)) => Ok(p),
        (None, None) => Ok(ModelParameters::table1()),
    }
}

fn run(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let summary = match command {
        Command::Simulate {
            scenario,
            params,
            seed,
            runs,
            out,
        } => {
            let scenario = load_scenario(&scenario)?;
            let params = scenario_params(params.as_deref(), scenario.params.clone())?;
            if runs == 0 {
                return Err(Error::invalid("--runs must be >= 1"));
            }
            let mut logs = Vec::with_capacity(runs * scenario.trials.len());
            for participant in 0..runs {
                for (t, events) in scenario.trials.iter().enumerate() {
                    let index = (participant * scenario.trials.len() + t) as u64;
                    let mut rng = seeded_rng(derive_seed(seed, index));
                    let spread = scenario.initial_trust_spread;
                    let initial = if spread > 0.0 {
                        scenario.initial_trust + rng.random_range(-spread..=spread)
                    } else {
                        scenario.initial_trust
                    };
                    let mut sim =
                        simulate_trial_with_rng(&params, initial, events, Some(&mut rng))?;
                    sim.log.participant_id = format!("p{participant:03}");
                    sim.log.trial_id = format!("t{t}");
                    logs.push(sim.log);
                }
            }
            write_trial_logs(&out, &logs)?;
            let steps: usize = logs.iter().map(TrialLog::len).sum();
            format!(
                "simulate: {runs} participants, {} trials, {steps} steps -> {}",
                logs.len(),
                out.display()
            )
        }
        Command::Estimate {
            logs,
            params,
            prior,
            out,
        } => {
            let params = resolve_params(&params)?;
            let config = prior.config()?;
            let logs = load_trial_logs(&logs)?;
            let mut rows = Vec::new();
            for log in &logs {
                let estimates = filter_trajectory(&params, &config, log)?;
                rows.extend(estimate_rows(log, &estimates));
            }
            if let Some(out) = &out {
                write_results(out, &rows)?;
            }
            let last = rows.last().expect("loaded logs are nonempty");
            format!(
                "estimate: {} trials, {} steps, last estimate {:.6} (variance {:.6})",
                logs.len(),
                rows.len(),
                last.estimate_mean,
                last.estimate_variance
            )
        }
        Command::Ensemble {
            scenario,
            params,
            seed,
            runs,
            prior,
            band_mode,
            fixed_record,
            out,
        } => {
            let scenario = load_scenario(&scenario)?;
            let params = scenario_params(params.as_deref(), scenario.params.clone())?;
            let config = prior.config()?;
            let band_mode = parse_band_mode(&band_mode)?;
            let mut rows = Vec::new();
            let mut max_width: f64 = 0.0;
            for (t, events) in scenario.trials.iter().enumerate() {
                let settings = EnsembleSettings {
                    n_runs: runs,
                    seed: derive_seed(seed, t as u64),
                    band_mode,
                    record_mode: if fixed_record {
                        RecordMode::Fixed
                    } else {
                        RecordMode::Resample
                    },
                };
                let result =
                    run_ensemble(&params, &config, events, scenario.initial_trust, &settings)?;
                max_width = result.band_width().into_iter().fold(max_width, f64::max);
                rows.extend(ensemble_rows("scenario", &format!("t{t}"), events, &result));
            }
            if let Some(out) = &out {
                write_results(out, &rows)?;
            }
            format!(
                "ensemble: {} trials, {} steps, {runs} runs, max band width {max_width:.6}",
                scenario.trials.len(),
                rows.len()
            )
        }
        Command::Fit { logs, out } => {
            let logs = load_trial_logs(&logs)?;
            let fit = fit_all(&logs)?;
            if let Some(out) = &out {
                write_fit(out, &fit)?;
            }
            let p = &fit.params;
            format!(
                "fit: {} rows, a={:.6} b=[{:.6}, {:.6}, {:.6}] c=[{:.4e}, {:.4e}, {:.4e}] q={:.6}",
                fit.n_observations, p.a, p.b[0], p.b[1], p.b[2], p.c[0], p.c[1], p.c[2], p.q
            )
        }
        Command::Riccati { params } => {
            let params = resolve_params(&params)?;
            let p = steady_state_variance(&params)?;
            format!("riccati: steady-state variance {p}")
        }
    };
    writeln!(stdout, "{summary}").map_err(|e| Error::io("<stdout>", e))
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. The summary line goes to `stdout`, diagnostics to
/// standard error.
pub fn cli_main<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = cli_main(
            std::iter::once("trustsim").chain(args.iter().copied()),
            &mut out,
        );
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn riccati_table1() {
        let (code, out) = run_args(&["riccati", "--params", "table1"]);
        assert_eq!(code, EXIT_OK);
        let value: f64 = out.trim().rsplit(' ').next().unwrap().parse().unwrap();
        let expected = steady_state_variance(&ModelParameters::table1()).unwrap();
        assert_eq!(value, expected);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["riccati", "--seed", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn band_mode_parsing() {
        assert_eq!(parse_band_mode("minmax").unwrap(), BandMode::MinMax);
        assert_eq!(
            parse_band_mode("percentile:0.05").unwrap(),
            BandMode::Percentile(0.05)
        );
        assert!(parse_band_mode("percentile:0.7").is_err());
        assert!(parse_band_mode("box").is_err());
    }

    #[test]
    fn missing_params_file_is_data_error() {
        assert_eq!(
            run_args(&["riccati", "--params", "/nonexistent/params.json"]).0,
            EXIT_DATA
        );
    }
}
