//! Replication-averaged sensitivities, scenario classification, parameter
//! perturbation studies and threshold-grid sweeps.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fd::Estimate;
use crate::model::{EventKind, ThetaIndex, N_THETA};
use crate::simulator::{simulate, PathOutput, SimOptions, Trajectory};

/// Environment variable capping the worker count (0 or unset = all cores).
pub const THREADS_ENV: &str = "IAS_IPA_THREADS";

/// Multiplier used to spread replication seeds.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of replication `r` for base seed `base`; replication 0 uses `base`.
pub fn replication_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add((r as u64).wrapping_mul(SEED_STRIDE))
}

pub fn replication_seeds(base: u64, reps: usize) -> Vec<u64> {
    (0..reps).map(|r| replication_seed(base, r)).collect()
}

/// Worker pool sized by `threads`, or by [`THREADS_ENV`] when `threads == 0`.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    let n = if threads > 0 {
        threads
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
                Error::config(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))
            })?,
            _ => 0,
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Scenario {
    /// Curative: at most two complete cycles and PSA held below the upper
    /// threshold after the last event.
    A,
    /// Uncontrolled growth.
    B,
    /// Sustained cycling.
    C,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
        }
    }
}

/// PSA level above which growth counts as uncontrolled, relative to theta2.
pub const GROWTH_CAP_FACTOR: f64 = 10.0;
/// Maximum number of complete cycles compatible with a curative outcome.
pub const CURATIVE_MAX_CYCLES: usize = 2;

/// Rules applied in order: PSA above `10 theta2` anywhere is B; at most two
/// complete cycles (resumptions) with PSA below theta2 after the last event is
/// A; on-treatment for the whole horizon without suspension is B; otherwise C.
pub fn classify_scenario(traj: &Trajectory) -> Scenario {
    let th = traj.thresholds;
    if traj.psa_max > GROWTH_CAP_FACTOR * th.theta2 {
        return Scenario::B;
    }
    let cycles = traj.count(EventKind::Resume);
    if cycles <= CURATIVE_MAX_CYCLES && traj.psa_max_after_last_event < th.theta2 {
        return Scenario::A;
    }
    let initial_on = traj.samples.first().map(|s| s.mode) == Some(crate::model::Mode::On);
    if initial_on && traj.count(EventKind::Suspend) == 0 {
        return Scenario::B;
    }
    Scenario::C
}

/// Most frequent scenario; ties go to the less favourable outcome (B, then C).
fn majority(scenarios: &[Scenario]) -> Option<Scenario> {
    let count = |s: Scenario| scenarios.iter().filter(|&&x| x == s).count();
    [Scenario::B, Scenario::C, Scenario::A]
        .into_iter()
        .filter(|&s| count(s) > 0)
        .max_by_key(|&s| (count(s), match s {
            Scenario::B => 2,
            Scenario::C => 1,
            Scenario::A => 0,
        }))
}

/// Replication-averaged cost and gradient at one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub cost_mean: f64,
    pub cost_se: f64,
    pub grad_mean: [f64; N_THETA],
    pub grad_se: [f64; N_THETA],
    /// Majority scenario over the successful replications; B if all diverged.
    pub scenario: Scenario,
    pub n_ok: usize,
    pub n_diverged: usize,
}

enum RepOutcome {
    Ok(f64, Option<[f64; N_THETA]>, Scenario),
    Diverged,
}

fn run_rep(config: &RunConfig, seed: u64, ipa: bool) -> Result<RepOutcome> {
    let opts = if ipa { SimOptions::with_ipa(0) } else { SimOptions::plain(0) };
    let out: Result<PathOutput> = simulate(config, seed, opts);
    match out {
        Ok(out) => {
            let cost = out.cost_value()?;
            let grad = if ipa { Some(out.gradient()?) } else { None };
            Ok(RepOutcome::Ok(cost, grad, classify_scenario(&out.trajectory)))
        }
        Err(e) if e.is_numerical() => Ok(RepOutcome::Diverged),
        Err(e) => Err(e),
    }
}

fn summarize(outcomes: Vec<RepOutcome>) -> Result<Sensitivity> {
    let mut costs = Vec::new();
    let mut grads = Vec::new();
    let mut scenarios = Vec::new();
    let mut n_diverged = 0;
    for o in outcomes {
        match o {
            RepOutcome::Ok(c, g, s) => {
                costs.push(c);
                grads.extend(g);
                scenarios.push(s);
            }
            RepOutcome::Diverged => n_diverged += 1,
        }
    }
    let n_ok = costs.len();
    let (cost_mean, cost_se) = if n_ok > 0 {
        let e = Estimate::from_values(costs)?;
        (e.mean, e.se)
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut grad_mean = [f64::NAN; N_THETA];
    let mut grad_se = [f64::NAN; N_THETA];
    if !grads.is_empty() {
        for s in 0..N_THETA {
            let e = Estimate::from_values(grads.iter().map(|g| g[s]).collect())?;
            grad_mean[s] = e.mean;
            grad_se[s] = e.se;
        }
    }
    Ok(Sensitivity {
        cost_mean,
        cost_se,
        grad_mean,
        grad_se,
        scenario: majority(&scenarios).unwrap_or(Scenario::B),
        n_ok,
        n_diverged,
    })
}

fn replicate(config: &RunConfig, base_seed: u64, reps: usize, ipa: bool) -> Result<Sensitivity> {
    if reps == 0 {
        return Err(Error::config("reps >= 1 violated"));
    }
    config.validate()?;
    let outcomes = replication_seeds(base_seed, reps)
        .into_par_iter()
        .map(|seed| run_rep(config, seed, ipa))
        .collect::<Result<Vec<_>>>()?;
    summarize(outcomes)
}

/// Mean IPA gradient and cost over `reps` replications seeded from `config.seed`.
pub fn sensitivity_at(config: &RunConfig, reps: usize) -> Result<Sensitivity> {
    replicate(config, config.seed, reps, true)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbRow {
    pub theta_index: ThetaIndex,
    pub percent: f64,
    pub scenario: Scenario,
    pub cost_mean: f64,
    pub n_ok: usize,
    pub n_diverged: usize,
}

/// Scales `theta_i` by `1 + percent/100` for each percent and classifies the
/// outcome. Only the model parameters (indices 3..=6) can be perturbed.
pub fn perturbation_study(
    config: &RunConfig,
    i: ThetaIndex,
    percents: &[f64],
    reps: usize,
) -> Result<Vec<PerturbRow>> {
    if i.is_threshold() {
        return Err(Error::config(format!("perturbation index {i} must be in 3..=6")));
    }
    let nominal = config.params.theta(i);
    percents
        .iter()
        .map(|&pct| {
            let value = nominal * (1.0 + pct / 100.0);
            if !(value > 0.0) {
                return Err(Error::config(format!(
                    "{pct}% perturbation makes theta{i} non-positive"
                )));
            }
            config.check_theta(i, value)?;
            let s = replicate(&config.with_theta(i, value), config.seed, reps, false)?;
            Ok(PerturbRow {
                theta_index: i,
                percent: pct,
                scenario: s.scenario,
                cost_mean: s.cost_mean,
                n_ok: s.n_ok,
                n_diverged: s.n_diverged,
            })
        })
        .collect()
}

/// Inclusive arithmetic range `lo:hi:step`. `hi` is included when it lies on
/// the grid to within 1e-9.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

const RANGE_SNAP: f64 = 1e-9;

impl GridRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let ok = lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0 && hi >= lo;
        if !ok {
            return Err(Error::config(format!(
                "range {lo}:{hi}:{step} needs finite lo <= hi and step > 0"
            )));
        }
        Ok(GridRange { lo, hi, step })
    }

    pub fn single(v: f64) -> Self {
        GridRange { lo: v, hi: v, step: 1.0 }
    }

    pub fn values(&self) -> Vec<f64> {
        let span = (self.hi - self.lo) / self.step;
        let n = (span + RANGE_SNAP).floor() as usize;
        let mut out: Vec<f64> = (0..=n).map(|k| self.lo + k as f64 * self.step).collect();
        if (span - n as f64).abs() <= RANGE_SNAP {
            if let Some(last) = out.last_mut() {
                *last = self.hi;
            }
        }
        out
    }
}

impl FromStr for GridRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad number '{p}' in range '{s}'")))
        };
        match parts.as_slice() {
            [v] => Ok(GridRange::single(num(v)?)),
            [lo, hi, step] => GridRange::new(num(lo)?, num(hi)?, num(step)?),
            _ => Err(Error::config(format!("range '{s}' must be lo:hi:step"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub theta1: f64,
    pub theta2: f64,
    pub cost_mean: f64,
    /// Mean `dL/dtheta_i` for i = 3..=6.
    pub grad: [f64; 4],
    pub scenario: Scenario,
    pub n_reps: usize,
    pub n_ok: usize,
    pub n_diverged: usize,
    pub seed_base: u64,
}

/// Grid cell with the smallest mean sensitivity magnitude for one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArgminCell {
    pub theta_index: ThetaIndex,
    pub theta1: f64,
    pub theta2: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub records: Vec<SweepRecord>,
    pub argmin: Vec<ArgminCell>,
}

/// Sensitivities over the `(theta1, theta2)` grid. Cell `k` of the full
/// row-major grid (theta1 outer) is seeded with `config.seed ^ k`; cells that
/// violate `theta1 < theta2` or the configured bounds are skipped.
pub fn run_grid(
    config: &RunConfig,
    theta1: &GridRange,
    theta2: &GridRange,
    reps: usize,
    threads: usize,
) -> Result<GridResult> {
    if reps == 0 {
        return Err(Error::config("reps >= 1 violated"));
    }
    let mut cells = Vec::new();
    let t2_values = theta2.values();
    for (a, &t1) in theta1.values().iter().enumerate() {
        for (b, &t2) in t2_values.iter().enumerate() {
            let index = (a * t2_values.len() + b) as u64;
            let cell = config.with_thresholds(t1, t2);
            let in_bounds = config
                .theta_bounds
                .is_none_or(|bd| bd.contains(&cell.params.thresholds));
            if t1 < t2 && in_bounds && cell.params.validate().is_ok() {
                cells.push((t1, t2, config.seed ^ index, cell));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::config("threshold grid has no valid cell"));
    }

    let pool = thread_pool(threads)?;
    let records = pool.install(|| {
        cells
            .par_iter()
            .map(|(t1, t2, seed, cell)| {
                let s = replicate(cell, *seed, reps, true)?;
                Ok(SweepRecord {
                    theta1: *t1,
                    theta2: *t2,
                    cost_mean: s.cost_mean,
                    grad: [s.grad_mean[2], s.grad_mean[3], s.grad_mean[4], s.grad_mean[5]],
                    scenario: s.scenario,
                    n_reps: reps,
                    n_ok: s.n_ok,
                    n_diverged: s.n_diverged,
                    seed_base: *seed,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let argmin = ThetaIndex::MODEL
        .iter()
        .enumerate()
        .filter_map(|(k, &i)| {
            records
                .iter()
                .filter(|r| r.grad[k].is_finite())
                .min_by(|x, y| x.grad[k].abs().total_cmp(&y.grad[k].abs()))
                .map(|r| ArgminCell {
                    theta_index: i,
                    theta1: r.theta1,
                    theta2: r.theta2,
                    value: r.grad[k],
                })
        })
        .collect();
    Ok(GridResult { records, argmin })
}
