//! Infinitesimal perturbation analysis: state and event-time derivatives with
//! respect to the extended parameter vector, carried along a sample path.
//!
//! Inside an interevent interval the derivatives obey the variational equation
//! `d/dt x' = (df/dx) x' + df/dtheta`, co-integrated with the state by the
//! simulator's RK4 step. At an event the event-time derivative is computed from
//! the guard and the state derivatives jump by `(f(tau-) - f(tau+)) tau'`.

pub mod closed_form;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, EventKind, HybridState, ModelParams, Params, N_THETA};

/// Below this magnitude the guard drift is treated as tangential.
pub const TANGENTIAL_TOL: f64 = 1e-12;

/// How the androgen level's own sensitivity `x3'` is handled.
///
/// `Omitted` keeps `x3' = 0` throughout, so the androgen trajectory inside an
/// interval is treated as independent of earlier event times. `Propagated`
/// carries `x3'` as a third state derivative: it jumps by `(f3(tau-) - f3(tau+)) tau'`
/// at each event, decays with the degradation constant, and feeds back into
/// `x1'` and `x2'` through `df/dx3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AndrogenSensitivity {
    #[default]
    Propagated,
    Omitted,
}

impl AndrogenSensitivity {
    pub fn label(self) -> &'static str {
        match self {
            AndrogenSensitivity::Propagated => "propagated",
            AndrogenSensitivity::Omitted => "omitted",
        }
    }
}

impl std::str::FromStr for AndrogenSensitivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "propagated" => Ok(AndrogenSensitivity::Propagated),
            "omitted" => Ok(AndrogenSensitivity::Omitted),
            other => Err(Error::config(format!(
                "unknown androgen sensitivity '{other}' (expected propagated or omitted)"
            ))),
        }
    }
}

/// State, clock and event-time derivatives, indexed by [`crate::ThetaIndex::slot`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DerivTable {
    pub dx1: [f64; N_THETA],
    pub dx2: [f64; N_THETA],
    /// Always zero under [`AndrogenSensitivity::Omitted`].
    pub dx3: [f64; N_THETA],
    pub dz1: [f64; N_THETA],
    pub dz2: [f64; N_THETA],
    pub last_tau_prime: [f64; N_THETA],
}

impl DerivTable {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// `x1' + x2'` for every slot.
    pub fn dpsa(&self) -> [f64; N_THETA] {
        std::array::from_fn(|s| self.dx1[s] + self.dx2[s])
    }

    pub fn is_finite(&self) -> bool {
        [self.dx1, self.dx2, self.dx3, self.dz1, self.dz2]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// `f(tau-) - f(tau+)` for the two population drifts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DriftJump {
    pub hsc: f64,
    pub crc: f64,
}

/// Advances `derivs` by one RK4 step of length `dt` along `state` with the
/// noise held at zero. Clock derivatives are untouched.
pub fn propagate_derivatives(
    derivs: &DerivTable,
    state: &HybridState,
    params: &ModelParams,
    dt: f64,
) -> Result<DerivTable> {
    if !(dt > 0.0) {
        return Err(Error::Internal(format!("step {dt} must be positive")));
    }
    let x = [state.x1, state.x2, state.x3];
    let tangent = crate::simulator::Tangent::from_table(derivs);
    let (_, next) = crate::simulator::rk4(state.mode, x, Some(&tangent), params, [0.0; 3], dt);
    let mut out = *derivs;
    next.expect("tangent requested").write_to(&mut out);
    if !out.is_finite() {
        return Err(Error::Divergence {
            t: state.t + dt,
            reason: "non-finite state derivative".into(),
            partial: None,
        });
    }
    Ok(out)
}

/// Event-time derivative from the guard `x1 + x2 = theta_j`:
/// `tau' = (1[i is the guard's threshold] - x1' - x2') / drift_sum`.
pub fn event_time_derivative(
    derivs: &DerivTable,
    kind: EventKind,
    drift_sum: f64,
    slot: usize,
    tau: f64,
) -> Result<f64> {
    if drift_sum.abs() < TANGENTIAL_TOL || !drift_sum.is_finite() {
        return Err(Error::TangentialCrossing {
            tau,
            index: slot + 1,
            drift_sum,
        });
    }
    let own = if kind.guard_index().slot() == slot { 1.0 } else { 0.0 };
    Ok((own - derivs.dx1[slot] - derivs.dx2[slot]) / drift_sum)
}

/// All six event-time derivatives at one event.
pub fn event_time_derivatives(
    derivs: &DerivTable,
    kind: EventKind,
    drift_sum: f64,
    tau: f64,
) -> Result<[f64; N_THETA]> {
    let mut out = [0.0; N_THETA];
    for (slot, v) in out.iter_mut().enumerate() {
        *v = event_time_derivative(derivs, kind, drift_sum, slot, tau)?;
    }
    Ok(out)
}

/// Population drift jump when the androgen level entering the drifts changes
/// from `h_pre` (closed form of the exited mode) to the stored `x3`. The
/// expression is the same for both transition directions.
pub fn delta_f(state: &HybridState, h_pre: f64, params: &ModelParams) -> DriftJump {
    let p = params;
    let x3 = state.x3;
    let ds_a = sigmoid(h_pre, p.k1, p.k2) - sigmoid(x3, p.k1, p.k2);
    let ds_b = sigmoid(h_pre, p.k3, p.k4) - sigmoid(x3, p.k3, p.k4);
    let hsc = (p.alpha1 * ds_a - p.beta1 * ds_b + p.m1 / p.x3_0 * (h_pre - x3)) * state.x1;
    let crc = p.alpha2 * p.d / p.x3_0 * (x3 - h_pre) * state.x2
        - p.m1 / p.x3_0 * (h_pre - x3) * state.x1;
    DriftJump { hsc, crc }
}

/// `f3(tau-) - f3(tau+)`: the androgen drift loses (e1) or gains (e2) the
/// `x3_0 / sigma` production term.
pub fn androgen_jump(kind: EventKind, params: &ModelParams) -> f64 {
    match kind {
        EventKind::Suspend => -params.x3_0 / params.sigma,
        EventKind::Resume => params.x3_0 / params.sigma,
    }
}

/// Boundary update at an event. State derivatives jump by `jump * tau'`; the
/// clock of the exited mode has its derivative zeroed and the clock of the
/// entered mode restarts at `-tau'`-shifted time.
pub fn apply_event_update(
    derivs: &DerivTable,
    tau_prime: &[f64; N_THETA],
    jump: DriftJump,
    kind: EventKind,
    sensitivity: AndrogenSensitivity,
    params: &Params,
) -> DerivTable {
    let mut d = *derivs;
    let a_jump = match sensitivity {
        AndrogenSensitivity::Propagated => androgen_jump(kind, &params.model),
        AndrogenSensitivity::Omitted => 0.0,
    };
    for s in 0..N_THETA {
        let tp = tau_prime[s];
        d.dx1[s] += jump.hsc * tp;
        d.dx2[s] += jump.crc * tp;
        d.dx3[s] += a_jump * tp;
        match kind {
            EventKind::Suspend => {
                d.dz1[s] = 0.0;
                d.dz2[s] -= tp;
            }
            EventKind::Resume => {
                d.dz2[s] = 0.0;
                d.dz1[s] -= tp;
            }
        }
    }
    d.last_tau_prime = *tau_prime;
    d
}
