//! Closed-form solution of the variational equation over one interevent
//! interval, evaluated by trapezoid quadrature on the recorded samples.
//!
//! With `a = df1/dx1` and `c = df2/dx2` along the interval,
//!
//! ```text
//! x1'(t) = e^{A(t)} [x1'(tau_k) + int e^{-A} b1],   A(t) = int a
//! x2'(t) = e^{C(t)} [x2'(tau_k) + int e^{-C} (m x1' + b2)],   C(t) = int c
//! ```
//!
//! where `m = df2/dx1` and `b1`, `b2` are the parameter forcings plus the
//! androgen coupling `df/dx3 * x3'(tau_k) e^{-(t - tau_k)/sigma}`. The androgen
//! level inside the interval comes from its closed form, not from the stepped
//! state, so this is an independent check of the co-integrated derivatives.

use crate::error::{Error, Result};
use crate::ipa::DerivTable;
use crate::model::{androgen_closed_form, jacobians_at, Mode, ModelParams, ThetaIndex};
use crate::simulator::Trajectory;

/// Samples of one interevent interval `[tau_k, tau_{k+1}]`, endpoints included.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalData {
    pub mode: Mode,
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3_at_entry: f64,
    /// Derivatives just after `tau_k`.
    pub start: DerivTable,
    pub deterministic: bool,
}

/// Interval ending at event `end_event` (0-based), starting at the previous
/// event or at `t = 0`. The trajectory must come from an IPA run recorded at
/// every step.
pub fn interval_data(traj: &Trajectory, end_event: usize) -> Result<IntervalData> {
    let end = traj.events.get(end_event).ok_or_else(|| {
        Error::Unsupported(format!("trajectory has no event {end_event}"))
    })?;
    let (start_state, start_derivs) = if end_event == 0 {
        (traj.samples[0], Some(DerivTable::zeros()))
    } else {
        let prev = &traj.events[end_event - 1];
        (prev.post, prev.derivs_post)
    };
    let start = start_derivs
        .ok_or_else(|| Error::Unsupported("trajectory recorded without derivatives".into()))?;
    if end.derivs_pre.is_none() {
        return Err(Error::Unsupported("trajectory recorded without derivatives".into()));
    }

    let mut data = IntervalData {
        mode: start_state.mode,
        t: vec![start_state.t],
        x1: vec![start_state.x1],
        x2: vec![start_state.x2],
        x3_at_entry: start_state.x3,
        start,
        deterministic: traj.deterministic,
    };
    for s in traj
        .samples
        .iter()
        .filter(|s| s.t > start_state.t && s.t < end.tau)
    {
        data.t.push(s.t);
        data.x1.push(s.x1);
        data.x2.push(s.x2);
    }
    data.t.push(end.tau);
    data.x1.push(end.pre.x1);
    data.x2.push(end.pre.x2);

    let max_gap = data.t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_gap > traj.dt * (1.0 + 1e-9) {
        return Err(Error::Unsupported(
            "interval is not recorded at every step".into(),
        ));
    }
    Ok(data)
}

/// `(x1'_i, x2'_i)` at the right end of the interval.
pub fn closed_form_state_derivative(
    data: &IntervalData,
    params: &ModelParams,
    i: ThetaIndex,
) -> Result<(f64, f64)> {
    if !data.deterministic {
        return Err(Error::Unsupported(
            "closed-form kernels require a noise-free interval".into(),
        ));
    }
    let n = data.t.len();
    if n < 2 || data.x1.len() != n || data.x2.len() != n {
        return Err(Error::Unsupported("interval needs at least two aligned samples".into()));
    }
    let s = i.slot();
    let t0 = data.t[0];
    let x3_sens0 = data.start.dx3[s];

    let mut a = Vec::with_capacity(n);
    let mut b1 = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut b2 = Vec::with_capacity(n);
    for j in 0..n {
        let elapsed = data.t[j] - t0;
        let h = androgen_closed_form(data.mode, data.x3_at_entry, elapsed, params, 0.0)?;
        let jac = jacobians_at(data.x1[j], data.x2[j], h, params);
        let x3_sens = x3_sens0 * (-elapsed / params.sigma).exp();
        a.push(jac.df1_dx1);
        b1.push(jac.df1_dtheta[s] + jac.df1_dx3 * x3_sens);
        c.push(jac.df2_dx2);
        m.push(jac.df2_dx1);
        b2.push(jac.df2_dtheta[s] + jac.df2_dx3 * x3_sens);
    }

    let big_a = cumulative_trapezoid(&data.t, &a);
    let forcing1: Vec<f64> = (0..n).map(|j| (-big_a[j]).exp() * b1[j]).collect();
    let int1 = cumulative_trapezoid(&data.t, &forcing1);
    let dx1: Vec<f64> = (0..n)
        .map(|j| big_a[j].exp() * (data.start.dx1[s] + int1[j]))
        .collect();

    let big_c = cumulative_trapezoid(&data.t, &c);
    let forcing2: Vec<f64> = (0..n)
        .map(|j| (-big_c[j]).exp() * (m[j] * dx1[j] + b2[j]))
        .collect();
    let int2 = cumulative_trapezoid(&data.t, &forcing2);
    let last = n - 1;
    let dx2 = big_c[last].exp() * (data.start.dx2[s] + int2[last]);
    Ok((dx1[last], dx2))
}

fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..t.len() {
        acc += 0.5 * (t[j] - t[j - 1]) * (y[j] + y[j - 1]);
        out.push(acc);
    }
    out
}
