//! Central finite differences of the sample cost with common random numbers,
//! and comparison against IPA estimates.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{ThetaIndex, N_THETA};
use crate::simulator::{simulate, SimOptions};

/// Relative perturbation used when no explicit step is given.
pub const DEFAULT_REL_DELTA: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `1e-4 * max(1, |theta|)`.
pub fn default_delta(theta: f64) -> f64 {
    DEFAULT_REL_DELTA * theta.abs().max(1.0)
}

/// `[f(theta + delta) - f(theta - delta)] / (2 delta)` for an arbitrary
/// cost function; the simulator-backed estimator is built on this.
pub fn central_difference<F>(theta: f64, delta: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::config(format!("finite-difference step {delta} must be positive")));
    }
    let up = f(theta + delta)?;
    let down = f(theta - delta)?;
    Ok((up - down) / (2.0 * delta))
}

/// Sample mean and standard error of per-replication values.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub values: Vec<f64>,
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("at least one replication is required"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Estimate { values, mean, se })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Cost of one plain run.
pub fn sample_cost(config: &RunConfig, seed: u64) -> Result<f64> {
    simulate(config, seed, SimOptions::plain(0))?.cost_value()
}

/// CRN central difference of the cost in `theta_i`, one value per seed.
pub fn fd_gradient(config: &RunConfig, i: ThetaIndex, delta: f64, seeds: &[u64]) -> Result<Estimate> {
    let theta = config.params.theta(i);
    config.check_theta(i, theta + delta)?;
    config.check_theta(i, theta - delta)?;
    let values = seeds
        .par_iter()
        .map(|&seed| central_difference(theta, delta, |v| sample_cost(&config.with_theta(i, v), seed)))
        .collect::<Result<Vec<f64>>>()?;
    Estimate::from_values(values)
}

/// IPA gradient of one run.
pub fn ipa_gradient(config: &RunConfig, seed: u64) -> Result<[f64; N_THETA]> {
    simulate(config, seed, SimOptions::with_ipa(0))?.gradient()
}

/// IPA gradients for every seed, in seed order.
pub fn ipa_gradients(config: &RunConfig, seeds: &[u64]) -> Result<Vec<[f64; N_THETA]>> {
    seeds.par_iter().map(|&s| ipa_gradient(config, s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// Pass iff `rel_err <= tol`.
    Relative(f64),
    /// Pass iff `|ipa - fd| <= k * sqrt(se_ipa^2 + se_fd^2)`.
    StandardErrors(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub theta_index: ThetaIndex,
    pub delta: f64,
    pub ipa_mean: f64,
    pub fd_mean: f64,
    pub ipa_se: f64,
    pub fd_se: f64,
    pub n_reps: usize,
    pub rel_err: f64,
    pub verdict: Verdict,
}

pub fn rel_err(ipa: f64, fd: f64) -> f64 {
    (ipa - fd).abs() / fd.abs().max(REL_ERR_FLOOR)
}

pub fn compare(
    theta_index: ThetaIndex,
    delta: f64,
    ipa: &Estimate,
    fd: &Estimate,
    tolerance: Tolerance,
) -> Result<FdReport> {
    if ipa.n() != fd.n() {
        return Err(Error::config(format!(
            "IPA and FD replication counts differ ({} vs {})",
            ipa.n(),
            fd.n()
        )));
    }
    let rel = rel_err(ipa.mean, fd.mean);
    let pass = match tolerance {
        Tolerance::Relative(tol) => rel <= tol,
        Tolerance::StandardErrors(k) => {
            (ipa.mean - fd.mean).abs() <= k * (ipa.se.powi(2) + fd.se.powi(2)).sqrt()
        }
    };
    Ok(FdReport {
        theta_index,
        delta,
        ipa_mean: ipa.mean,
        fd_mean: fd.mean,
        ipa_se: ipa.se,
        fd_se: fd.se,
        n_reps: ipa.n(),
        rel_err: rel,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    })
}

/// IPA vs FD for each requested index over the same seeds. `delta = None`
/// uses [`default_delta`] of the nominal value.
pub fn fd_check(
    config: &RunConfig,
    indices: &[ThetaIndex],
    seeds: &[u64],
    delta: Option<f64>,
    tolerance: Tolerance,
) -> Result<Vec<FdReport>> {
    let grads = ipa_gradients(config, seeds)?;
    indices
        .iter()
        .map(|&i| {
            let d = delta.unwrap_or_else(|| default_delta(config.params.theta(i)));
            let ipa = Estimate::from_values(grads.iter().map(|g| g[i.slot()]).collect())?;
            let fd = fd_gradient(config, i, d, seeds)?;
            compare(i, d, &ipa, &fd, tolerance)
        })
        .collect()
}
