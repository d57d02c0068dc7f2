//! Sample cost: weighted time-average of normalized PSA plus the time-average
//! of the on-treatment clock, and its IPA gradient.
//!
//! `L = (W/T) int PSA/psa_init dt + ((1-W)/T) int z1/T dt`

use crate::error::{Error, Result};
use crate::ipa::DerivTable;
use crate::model::{EventKind, HybridState, Mode, N_THETA};

/// A maximal stretch of time spent in one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Period {
    pub mode: Mode,
    pub start: f64,
    /// `None` while the period is still running.
    pub end: Option<f64>,
    pub start_prime: [f64; N_THETA],
    pub end_prime: [f64; N_THETA],
}

impl Period {
    pub fn duration(&self, horizon: f64) -> f64 {
        self.end.unwrap_or(horizon) - self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Point {
    t: f64,
    psa: f64,
    z1: f64,
    dpsa: [f64; N_THETA],
}

impl Point {
    fn of(state: &HybridState, derivs: Option<&DerivTable>) -> Self {
        Point {
            t: state.t,
            psa: state.psa(),
            z1: state.z1,
            dpsa: derivs.map(DerivTable::dpsa).unwrap_or([0.0; N_THETA]),
        }
    }
}

/// Running trapezoid integrals and period bookkeeping for one sample path.
#[derive(Clone, Debug, PartialEq)]
pub struct CostAccumulator {
    pub weight: f64,
    /// PSA at the start of the path.
    pub psa_init: f64,
    pub psa_integral: f64,
    pub z1_integral: f64,
    /// `int (x1' + x2') dt` per parameter slot.
    pub grad_psa: [f64; N_THETA],
    pub periods: Vec<Period>,
    with_gradient: bool,
    last: Point,
}

impl CostAccumulator {
    /// Starts accumulating at `initial`. The first period opens there with a
    /// zero start-time derivative.
    pub fn new(
        weight: f64,
        initial: &HybridState,
        derivs: Option<&DerivTable>,
        with_gradient: bool,
    ) -> Self {
        CostAccumulator {
            weight,
            psa_init: initial.psa(),
            psa_integral: 0.0,
            z1_integral: 0.0,
            grad_psa: [0.0; N_THETA],
            periods: vec![Period {
                mode: initial.mode,
                start: initial.t,
                end: None,
                start_prime: [0.0; N_THETA],
                end_prime: [0.0; N_THETA],
            }],
            with_gradient,
            last: Point::of(initial, derivs),
        }
    }

    /// Adds the trapezoid from the previous point to `state`.
    pub fn accumulate(&mut self, state: &HybridState, derivs: Option<&DerivTable>) {
        let next = Point::of(state, derivs);
        let h = next.t - self.last.t;
        self.psa_integral += 0.5 * h * (self.last.psa + next.psa);
        self.z1_integral += 0.5 * h * (self.last.z1 + next.z1);
        if self.with_gradient {
            for s in 0..N_THETA {
                self.grad_psa[s] += 0.5 * h * (self.last.dpsa[s] + next.dpsa[s]);
            }
        }
        self.last = next;
    }

    /// Closes the running period at the event and opens the next one. The
    /// caller must have accumulated up to the pre-event state already.
    pub fn record_event(
        &mut self,
        kind: EventKind,
        post: &HybridState,
        derivs_post: Option<&DerivTable>,
        tau_prime: Option<&[f64; N_THETA]>,
    ) {
        let tp = tau_prime.copied().unwrap_or([0.0; N_THETA]);
        if let Some(current) = self.periods.last_mut() {
            current.end = Some(post.t);
            current.end_prime = tp;
        }
        self.periods.push(Period {
            mode: kind.target_mode(),
            start: post.t,
            end: None,
            start_prime: tp,
            end_prime: [0.0; N_THETA],
        });
        self.last = Point::of(post, derivs_post);
    }

    /// Number of (complete or truncated) periods in `[0, T]`.
    pub fn k_t(&self) -> usize {
        self.periods.len()
    }

    pub fn m_t(&self) -> usize {
        self.k_t() / 2
    }

    /// Durations of the complete on-treatment periods.
    pub fn on_durations(&self) -> Vec<f64> {
        self.periods
            .iter()
            .filter(|p| p.mode == Mode::On && p.end.is_some())
            .map(|p| p.duration(0.0))
            .collect()
    }

    fn check_normalizer(&self, horizon: f64) -> Result<()> {
        if !(horizon > 0.0) {
            return Err(Error::config("horizon_T > 0 violated"));
        }
        if self.psa_init == 0.0 || !self.psa_init.is_finite() {
            return Err(Error::config("initial PSA is zero; cost normalizer undefined"));
        }
        Ok(())
    }

    pub fn finalize_cost(&self, horizon: f64) -> Result<f64> {
        self.check_normalizer(horizon)?;
        let w = self.weight;
        Ok(w / horizon * self.psa_integral / self.psa_init
            + (1.0 - w) / horizon * self.z1_integral / horizon)
    }

    /// `dL/dtheta` from the accumulated PSA derivative integral and the
    /// on-period boundary derivatives. A trailing on-period cut off by the
    /// horizon contributes only through its start time.
    pub fn finalize_gradient(&self, horizon: f64) -> Result<[f64; N_THETA]> {
        if !self.with_gradient {
            return Err(Error::Internal("gradient requested from a run without IPA".into()));
        }
        self.check_normalizer(horizon)?;
        let w = self.weight;
        let t = horizon;
        let mut grad: [f64; N_THETA] =
            std::array::from_fn(|s| w / t * self.grad_psa[s] / self.psa_init);
        for p in self.periods.iter().filter(|p| p.mode == Mode::On) {
            match p.end {
                Some(end) => {
                    let delta = end - p.start;
                    for s in 0..N_THETA {
                        grad[s] += (1.0 - w) / t * (delta / t) * (p.end_prime[s] - p.start_prime[s]);
                    }
                }
                None => {
                    for s in 0..N_THETA {
                        grad[s] -= (1.0 - w) / t * p.start_prime[s] * (t - p.start) / t;
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on_state(t: f64, psa: f64) -> HybridState {
        let mut s = HybridState::new(Mode::On, psa, 0.0, 1.0);
        s.t = t;
        s.z1 = t;
        s
    }

    #[test]
    fn constant_psa_always_on() {
        let horizon = 2500.0;
        for w in [0.0, 0.5, 1.0] {
            let mut acc = CostAccumulator::new(w, &on_state(0.0, 3.0), None, false);
            for k in 1..=2500 {
                acc.accumulate(&on_state(k as f64, 3.0), None);
            }
            let l = acc.finalize_cost(horizon).unwrap();
            assert!((l - (w + (1.0 - w) / 2.0)).abs() < 1e-6, "W = {w}: {l}");
        }
    }

    #[test]
    fn zero_paths() {
        let mut s = on_state(0.0, 0.0);
        s.x1 = 2.0;
        let mut acc = CostAccumulator::new(1.0, &s, Some(&DerivTable::zeros()), true);
        s.x1 = 0.0;
        for k in 1..=10 {
            s.t = k as f64;
            acc.accumulate(&s, Some(&DerivTable::zeros()));
        }
        assert!((acc.psa_integral - 1.0).abs() < 1e-15);
        assert_eq!(acc.finalize_gradient(10.0).unwrap(), [0.0; N_THETA]);
        let empty = CostAccumulator::new(0.5, &on_state(0.0, 0.0), None, false);
        assert!(matches!(empty.finalize_cost(10.0), Err(Error::Config(_))));
    }

    #[test]
    fn piecewise_linear_quadrature() {
        // PSA = 2 + t on [0, 4], then 6 - 2(t - 4) on [4, 6]: integral 16 + 8 = 24.
        let mut acc = CostAccumulator::new(1.0, &on_state(0.0, 2.0), None, false);
        for k in 1..=40 {
            let t = k as f64 * 0.1;
            acc.accumulate(&on_state(t, 2.0 + t), None);
        }
        for k in 1..=20 {
            let t = 4.0 + k as f64 * 0.1;
            acc.accumulate(&on_state(t, 6.0 - 2.0 * (t - 4.0)), None);
        }
        assert!((acc.psa_integral - 24.0).abs() / 24.0 < 1e-6);
    }

    #[test]
    fn single_complete_on_period_gradient() {
        // ON on [0, 30], OFF on [30, 100]; W = 0.
        let horizon = 100.0;
        let mut acc = CostAccumulator::new(0.0, &on_state(0.0, 1.0), Some(&DerivTable::zeros()), true);
        acc.accumulate(&on_state(30.0, 1.0), Some(&DerivTable::zeros()));
        let tp = [0.0, 0.0, 2.5, -1.0, 0.0, 4.0];
        let mut post = on_state(30.0, 1.0);
        post.mode = Mode::Off;
        post.z1 = 0.0;
        acc.record_event(EventKind::Suspend, &post, Some(&DerivTable::zeros()), Some(&tp));
        let mut end = post;
        end.t = horizon;
        acc.accumulate(&end, Some(&DerivTable::zeros()));
        assert_eq!(acc.k_t(), 2);
        assert_eq!(acc.m_t(), 1);
        assert_eq!(acc.on_durations(), vec![30.0]);
        let g = acc.finalize_gradient(horizon).unwrap();
        for s in 0..N_THETA {
            let expected = (1.0 / horizon) * (30.0 / horizon) * tp[s];
            assert!((g[s] - expected).abs() < 1e-15);
        }
        // Cost: z1 integral is 30^2 / 2.
        let l = acc.finalize_cost(horizon).unwrap();
        assert!((l - 450.0 / (horizon * horizon)).abs() < 1e-15);
    }

    #[test]
    fn truncated_on_period_term() {
        // ON [0, 20], OFF [20, 50], ON [50, 100) truncated; K_T = 3.
        let horizon = 100.0;
        let d = DerivTable::zeros();
        let mut acc = CostAccumulator::new(0.0, &on_state(0.0, 1.0), Some(&d), true);
        acc.accumulate(&on_state(20.0, 1.0), Some(&d));
        let tp1 = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut s = on_state(20.0, 1.0);
        s.mode = Mode::Off;
        s.z1 = 0.0;
        acc.record_event(EventKind::Suspend, &s, Some(&d), Some(&tp1));
        s.t = 50.0;
        acc.accumulate(&s, Some(&d));
        let tp2 = [0.0, 3.0, 0.0, 0.0, 0.0, 0.0];
        let mut s = on_state(50.0, 1.0);
        s.z1 = 0.0;
        acc.record_event(EventKind::Resume, &s, Some(&d), Some(&tp2));
        s.t = 100.0;
        s.z1 = 50.0;
        acc.accumulate(&s, Some(&d));
        assert_eq!(acc.k_t(), 3);
        let g = acc.finalize_gradient(horizon).unwrap();
        let t = horizon;
        assert!((g[2] - (1.0 / t) * (20.0 / t) * 1.0).abs() < 1e-15);
        assert!((g[1] - (-(1.0 / t) * 3.0 * (t - 50.0) / t)).abs() < 1e-15);
        let l = acc.finalize_cost(horizon).unwrap();
        assert!((l - (200.0 + 1250.0) / (t * t)).abs() < 1e-15);
    }
}
