//! Fixed-step RK4 simulation of the hybrid system with bisection event
//! localization, optionally co-integrating the IPA derivatives.
//!
//! The state part of a step is computed by the same arithmetic whether or not
//! derivatives ride along, so plain and IPA runs with the same seed follow
//! bit-identical sample paths.

use crate::config::RunConfig;
use crate::cost::CostAccumulator;
use crate::error::{Error, Result};
use crate::ipa::{self, AndrogenSensitivity, DerivTable, DriftJump};
use crate::model::{
    androgen_closed_form, androgen_rate, crc_rate, crossing, hsc_rate, jacobians_at, Event,
    EventKind, HybridState, Mode, ModelParams, Params, Thresholds, N_THETA,
};
use crate::noise::{make_streams, NoiseStreams};

/// Bisection stops once the time bracket is this narrow (days).
pub const LOCALIZATION_WIDTH: f64 = 1e-10;
/// ... or once the guard residual is below this, scaled by `max(1, theta)`.
pub const LOCALIZATION_RESIDUAL: f64 = 1e-9;
/// Populations in `[-NEGATIVE_CLAMP, 0)` are clamped to zero; below, the run diverges.
pub const NEGATIVE_CLAMP: f64 = 1e-9;

/// One logged event with everything the estimators and tests need.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub kind: EventKind,
    pub tau: f64,
    /// State just before the transition (old mode, clocks not yet reset).
    pub pre: HybridState,
    /// State just after the transition.
    pub post: HybridState,
    /// Population drifts at `tau-`, including the step's noise values.
    pub hsc_drift: f64,
    pub crc_drift: f64,
    /// Denominator used for the event-time derivative.
    pub drift_sum: f64,
    /// Androgen level from the exited mode's closed form at `tau-`.
    pub h_pre: f64,
    pub delta_f: DriftJump,
    pub tau_prime: Option<[f64; N_THETA]>,
    pub derivs_pre: Option<DerivTable>,
    pub derivs_post: Option<DerivTable>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// States at the recording cadence, starting with `t = 0`.
    pub samples: Vec<HybridState>,
    pub events: Vec<EventRecord>,
    pub psa_init: f64,
    pub horizon: f64,
    pub dt: f64,
    pub thresholds: Thresholds,
    pub final_state: HybridState,
    /// Largest PSA over all grid points and event states.
    pub psa_max: f64,
    /// Largest PSA at grid points after the last event (or over the whole run
    /// when there are no events).
    pub psa_max_after_last_event: f64,
    /// True when all path noise was off.
    pub deterministic: bool,
}

impl Trajectory {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.tau).collect()
    }
}

/// Result of one simulated sample path.
#[derive(Clone, Debug)]
pub struct PathOutput {
    pub trajectory: Trajectory,
    pub cost: CostAccumulator,
    /// Derivatives at the horizon when IPA was enabled.
    pub derivs: Option<DerivTable>,
}

impl PathOutput {
    pub fn cost_value(&self) -> Result<f64> {
        self.cost.finalize_cost(self.trajectory.horizon)
    }

    pub fn gradient(&self) -> Result<[f64; N_THETA]> {
        self.cost.finalize_gradient(self.trajectory.horizon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    pub ipa: bool,
    /// Sample every `record_stride` grid steps; 0 records nothing but the
    /// initial and final states.
    pub record_stride: usize,
}

impl SimOptions {
    pub fn plain(record_stride: usize) -> Self {
        SimOptions { ipa: false, record_stride }
    }

    pub fn with_ipa(record_stride: usize) -> Self {
        SimOptions { ipa: true, record_stride }
    }
}

/// State derivatives carried through RK4 stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tangent {
    x1: [f64; N_THETA],
    x2: [f64; N_THETA],
    x3: [f64; N_THETA],
}

impl Tangent {
    pub(crate) fn from_table(d: &DerivTable) -> Self {
        Tangent { x1: d.dx1, x2: d.dx2, x3: d.dx3 }
    }

    pub(crate) fn write_to(&self, d: &mut DerivTable) {
        d.dx1 = self.x1;
        d.dx2 = self.x2;
        d.dx3 = self.x3;
    }

    fn axpy(&self, h: f64, k: &Tangent) -> Tangent {
        Tangent {
            x1: std::array::from_fn(|s| self.x1[s] + h * k.x1[s]),
            x2: std::array::from_fn(|s| self.x2[s] + h * k.x2[s]),
            x3: std::array::from_fn(|s| self.x3[s] + h * k.x3[s]),
        }
    }
}

#[inline]
fn rates(mode: Mode, x: [f64; 3], p: &ModelParams, z: [f64; 3]) -> [f64; 3] {
    [
        hsc_rate(x[0], x[2], p, z[0]),
        crc_rate(x[0], x[1], x[2], p, z[1]),
        androgen_rate(mode, x[2], p, z[2]),
    ]
}

fn tangent_rates(x: [f64; 3], t: &Tangent, p: &ModelParams) -> Tangent {
    let j = jacobians_at(x[0], x[1], x[2], p);
    let inv_sigma = 1.0 / p.sigma;
    Tangent {
        x1: std::array::from_fn(|s| j.df1_dx1 * t.x1[s] + j.df1_dx3 * t.x3[s] + j.df1_dtheta[s]),
        x2: std::array::from_fn(|s| {
            j.df2_dx1 * t.x1[s] + j.df2_dx2 * t.x2[s] + j.df2_dx3 * t.x3[s] + j.df2_dtheta[s]
        }),
        x3: std::array::from_fn(|s| -t.x3[s] * inv_sigma),
    }
}

#[inline]
fn add(x: [f64; 3], h: f64, k: [f64; 3]) -> [f64; 3] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2]]
}

/// Classical RK4 over `h` with the noise `z` frozen. The tangent, when given,
/// is advanced with the Jacobians evaluated at the same stage states.
pub(crate) fn rk4(
    mode: Mode,
    x: [f64; 3],
    tangent: Option<&Tangent>,
    p: &ModelParams,
    z: [f64; 3],
    h: f64,
) -> ([f64; 3], Option<Tangent>) {
    let half = 0.5 * h;
    let k1 = rates(mode, x, p, z);
    let s2 = add(x, half, k1);
    let k2 = rates(mode, s2, p, z);
    let s3 = add(x, half, k2);
    let k3 = rates(mode, s3, p, z);
    let s4 = add(x, h, k3);
    let k4 = rates(mode, s4, p, z);
    let sixth = h / 6.0;
    let next = std::array::from_fn(|n| x[n] + sixth * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]));

    let next_tangent = tangent.map(|t| {
        let d1 = tangent_rates(x, t, p);
        let d2 = tangent_rates(s2, &t.axpy(half, &d1), p);
        let d3 = tangent_rates(s3, &t.axpy(half, &d2), p);
        let d4 = tangent_rates(s4, &t.axpy(h, &d3), p);
        let comb = |a: &[f64; N_THETA], b1: &[f64; N_THETA], b2: &[f64; N_THETA], b3: &[f64; N_THETA], b4: &[f64; N_THETA]| {
            std::array::from_fn(|s| a[s] + sixth * (b1[s] + 2.0 * b2[s] + 2.0 * b3[s] + b4[s]))
        };
        Tangent {
            x1: comb(&t.x1, &d1.x1, &d2.x1, &d3.x1, &d4.x1),
            x2: comb(&t.x2, &d1.x2, &d2.x2, &d3.x2, &d4.x2),
            x3: comb(&t.x3, &d1.x3, &d2.x3, &d3.x3, &d4.x3),
        }
    });
    (next, next_tangent)
}

/// Advances the state by `h` without event detection: populations and
/// androgen by RK4, the active clock by `h`, the filtered androgen noise exactly.
fn advance(state: &HybridState, p: &ModelParams, z: [f64; 3], h: f64, t_new: f64) -> HybridState {
    let (x, _) = rk4(state.mode, [state.x1, state.x2, state.x3], None, p, z, h);
    finish_advance(state, x, p, z[2], h, t_new)
}

fn finish_advance(
    state: &HybridState,
    x: [f64; 3],
    p: &ModelParams,
    zeta3: f64,
    h: f64,
    t_new: f64,
) -> HybridState {
    let mut next = *state;
    next.t = t_new;
    next.x1 = x[0];
    next.x2 = x[1];
    next.x3 = x[2];
    match state.mode {
        Mode::On => next.z1 += h,
        Mode::Off => next.z2 += h,
    }
    if zeta3 != 0.0 || state.zeta3_filtered != 0.0 {
        let decay = (-h / p.sigma).exp();
        next.zeta3_filtered = state.zeta3_filtered * decay + zeta3 * p.sigma * (1.0 - decay);
    }
    next
}

/// One step of length `dt` with the noise values `zeta` held constant.
/// Guards are not checked; see [`simulate`] for the event-aware loop.
pub fn integrate_step(
    state: &HybridState,
    params: &Params,
    zeta: [f64; 3],
    dt: f64,
) -> Result<HybridState> {
    if !(dt > 0.0) {
        return Err(Error::Internal(format!("step {dt} must be positive")));
    }
    let next = advance(state, &params.model, zeta, dt, state.t + dt);
    check_populations(next, None)
}

fn check_populations(mut s: HybridState, traj: Option<&dyn Fn() -> Trajectory>) -> Result<HybridState> {
    let diverge = |reason: String| Error::Divergence {
        t: s.t,
        reason,
        partial: traj.map(|f| Box::new(f())),
    };
    if !(s.x1.is_finite() && s.x2.is_finite() && s.x3.is_finite()) {
        return Err(diverge(format!(
            "non-finite state (x1 = {}, x2 = {}, x3 = {})",
            s.x1, s.x2, s.x3
        )));
    }
    for (name, v) in [("x1", &mut s.x1), ("x2", &mut s.x2)] {
        if *v < -NEGATIVE_CLAMP {
            return Err(diverge(format!("{name} = {} below zero", *v)));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(s)
}

/// Bisection for the sign change of `g` on `[t_lo, t_hi]`. Stops when the
/// bracket is narrower than `LOCALIZATION_WIDTH` (returning the end on the
/// far side of the crossing) or when `|g| <= residual_tol`.
pub fn localize_event<G: FnMut(f64) -> f64>(
    t_lo: f64,
    t_hi: f64,
    mut g: G,
    residual_tol: f64,
) -> Result<f64> {
    let g_lo = g(t_lo);
    if g_lo == 0.0 {
        return Ok(t_lo);
    }
    let g_hi = g(t_hi);
    if g_hi == 0.0 {
        return Ok(t_hi);
    }
    if g_lo.signum() == g_hi.signum() || g_lo.is_nan() || g_hi.is_nan() {
        return Err(Error::Internal(format!(
            "no sign change of guard residual on [{t_lo}, {t_hi}]"
        )));
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    while hi - lo > LOCALIZATION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm.abs() <= residual_tol {
            return Ok(mid);
        }
        if gm.signum() == g_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Mode switch at an event: clock of the exited mode reset, populations and
/// androgen untouched, mode-entry bookkeeping refreshed.
pub fn apply_transition(state: &HybridState, event: Event) -> Result<HybridState> {
    if event.kind.source_mode() != state.mode {
        return Err(Error::Internal(format!(
            "event {} cannot fire in mode {}",
            event.kind.label(),
            state.mode.label()
        )));
    }
    let mut next = *state;
    next.t = event.tau;
    next.mode = event.kind.target_mode();
    match event.kind {
        EventKind::Suspend => next.z1 = 0.0,
        EventKind::Resume => next.z2 = 0.0,
    }
    next.t_mode_entry = event.tau;
    next.x3_at_entry = state.x3;
    next.zeta3_filtered = 0.0;
    Ok(next)
}

/// Plain simulation over `[0, T]` recording at `config.record_stride`.
pub fn run_sample_path(config: &RunConfig, seed: u64) -> Result<Trajectory> {
    Ok(simulate(config, seed, SimOptions::plain(config.record_stride))?.trajectory)
}

/// Simulation plus IPA over `[0, T]`.
pub fn run_with_gradient(config: &RunConfig, seed: u64) -> Result<PathOutput> {
    simulate(config, seed, SimOptions::with_ipa(config.record_stride))
}

struct Recorder {
    samples: Vec<HybridState>,
    events: Vec<EventRecord>,
    psa_max: f64,
    psa_max_after_last_event: f64,
}

impl Recorder {
    fn observe(&mut self, s: &HybridState) {
        let psa = s.psa();
        self.psa_max = self.psa_max.max(psa);
        self.psa_max_after_last_event = self.psa_max_after_last_event.max(psa);
    }
}

/// Event-aware simulation loop. Every run takes `ceil(T / dt)` grid steps and
/// consumes exactly one noise draw per channel per step, so runs that differ
/// only in parameters see the same noise at the same grid times.
pub fn simulate(config: &RunConfig, seed: u64, opts: SimOptions) -> Result<PathOutput> {
    config.validate()?;
    let params = &config.params;
    let p = &params.model;
    let th = params.thresholds;
    let horizon = config.horizon_t;
    let dt = config.dt;
    let sensitivity: AndrogenSensitivity = config.androgen_sensitivity;
    let mut streams: NoiseStreams = make_streams(seed, config.noise)?;

    let n_steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as u64;
    let mut state = config.init.to_state();
    let mut derivs = opts.ipa.then(DerivTable::zeros);
    let mut cost = CostAccumulator::new(config.weight_w, &state, derivs.as_ref(), opts.ipa);

    let stride = opts.record_stride;
    let capacity = (n_steps as usize).checked_div(stride).unwrap_or(0) + 2;
    let mut rec = Recorder {
        samples: Vec::with_capacity(capacity),
        events: Vec::new(),
        psa_max: state.psa(),
        psa_max_after_last_event: state.psa(),
    };
    rec.samples.push(state);

    let build = |rec: &Recorder, state: &HybridState, cost: &CostAccumulator| Trajectory {
        samples: rec.samples.clone(),
        events: rec.events.clone(),
        psa_init: cost.psa_init,
        horizon,
        dt,
        thresholds: th,
        final_state: *state,
        psa_max: rec.psa_max,
        psa_max_after_last_event: rec.psa_max_after_last_event,
        deterministic: config.noise.path_is_deterministic(),
    };

    for n in 0..n_steps {
        let zeta = streams.step_draws();
        let t_end = if n + 1 == n_steps { horizon } else { (n + 1) as f64 * dt };

        loop {
            let h = t_end - state.t;
            if h <= 0.0 {
                break;
            }
            let x0 = [state.x1, state.x2, state.x3];
            let tangent = derivs.as_ref().map(Tangent::from_table);
            let (x_end, tan_end) = rk4(state.mode, x0, tangent.as_ref(), p, zeta, h);
            let cand = finish_advance(&state, x_end, p, zeta[2], h, t_end);
            let cand = check_populations(cand, Some(&|| build(&rec, &state, &cost)))?;

            let Some(kind) = crossing(state.mode, state.psa(), cand.psa(), &th) else {
                if let (Some(d), Some(t)) = (derivs.as_mut(), tan_end) {
                    t.write_to(d);
                    if !d.is_finite() {
                        return Err(Error::Divergence {
                            t: cand.t,
                            reason: "non-finite state derivative".into(),
                            partial: Some(Box::new(build(&rec, &state, &cost))),
                        });
                    }
                }
                state = cand;
                cost.accumulate(&state, derivs.as_ref());
                rec.observe(&state);
                break;
            };

            // Localize the crossing in local time s in (0, h].
            let theta = th.for_event(kind);
            let s_star = localize_event(
                0.0,
                h,
                |s| {
                    if s == 0.0 {
                        return state.psa() - theta;
                    }
                    let (x, _) = rk4(state.mode, x0, None, p, zeta, s);
                    x[0] + x[1] - theta
                },
                LOCALIZATION_RESIDUAL * theta.max(1.0),
            )?;
            let tau = state.t + s_star;
            let (x_ev, tan_ev) = rk4(state.mode, x0, tangent.as_ref(), p, zeta, s_star);
            let pre = finish_advance(&state, x_ev, p, zeta[2], s_star, tau);
            let pre = check_populations(pre, Some(&|| build(&rec, &state, &cost)))?;
            if let (Some(d), Some(t)) = (derivs.as_mut(), tan_ev) {
                t.write_to(d);
            }
            cost.accumulate(&pre, derivs.as_ref());
            rec.observe(&pre);

            let hsc_drift = hsc_rate(pre.x1, pre.x3, p, zeta[0]);
            let crc_drift = crc_rate(pre.x1, pre.x2, pre.x3, p, zeta[1]);
            let drift_sum = if config.noise.event_std > 0.0 {
                let u1 = streams.sample_event_noise();
                let u2 = streams.sample_event_noise();
                hsc_rate(pre.x1, pre.x3, p, 0.0) + crc_rate(pre.x1, pre.x2, pre.x3, p, 0.0) + u1 + u2
            } else {
                hsc_drift + crc_drift
            };
            let h_pre = androgen_closed_form(
                pre.mode,
                pre.x3_at_entry,
                (tau - pre.t_mode_entry).max(0.0),
                p,
                pre.zeta3_filtered,
            )?;
            let jump = ipa::delta_f(&pre, h_pre, p);
            let post = apply_transition(&pre, Event { kind, tau })?;

            let derivs_pre = derivs;
            let mut tau_prime = None;
            if let Some(d) = derivs.as_mut() {
                let tp = ipa::event_time_derivatives(d, kind, drift_sum, tau)?;
                *d = ipa::apply_event_update(d, &tp, jump, kind, sensitivity, params);
                tau_prime = Some(tp);
            }
            cost.record_event(kind, &post, derivs.as_ref(), tau_prime.as_ref());
            rec.events.push(EventRecord {
                kind,
                tau,
                pre,
                post,
                hsc_drift,
                crc_drift,
                drift_sum,
                h_pre,
                delta_f: jump,
                tau_prime,
                derivs_pre,
                derivs_post: derivs,
            });
            rec.psa_max_after_last_event = f64::NEG_INFINITY;
            state = post;
        }

        let step = n + 1;
        if stride > 0 && (step as usize).is_multiple_of(stride) {
            rec.samples.push(state);
        }
    }
    if rec.samples.last().map(|s| s.t) != Some(state.t) {
        rec.samples.push(state);
    }

    let trajectory = build(&rec, &state, &cost);
    Ok(PathOutput {
        trajectory,
        cost,
        derivs,
    })
}
