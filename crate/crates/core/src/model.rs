//! Model primitives: parameters, hybrid state, drifts, guards and analytic Jacobians.
//!
//! Everything here is a pure function of its arguments. Time stepping lives in
//! [`crate::simulator`], randomness in [`crate::noise`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent arguments of the androgen sigmoids are clamped to this magnitude so
/// `exp` never overflows for extreme androgen values.
pub const SIGMOID_EXP_CLAMP: f64 = 500.0;

/// Number of entries in the extended parameter vector.
pub const N_THETA: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "ON")]
    On,
    #[serde(rename = "OFF")]
    Off,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::On => "ON",
            Mode::Off => "OFF",
        }
    }

    /// The only event that can fire while in this mode.
    pub fn exit_event(self) -> EventKind {
        match self {
            Mode::On => EventKind::Suspend,
            Mode::Off => EventKind::Resume,
        }
    }
}

/// Threshold events. `Suspend` is the lower crossing from above (ON -> OFF),
/// `Resume` the upper crossing from below (OFF -> ON).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "e1")]
    Suspend,
    #[serde(rename = "e2")]
    Resume,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Suspend => "e1",
            EventKind::Resume => "e2",
        }
    }

    pub fn source_mode(self) -> Mode {
        match self {
            EventKind::Suspend => Mode::On,
            EventKind::Resume => Mode::Off,
        }
    }

    pub fn target_mode(self) -> Mode {
        match self {
            EventKind::Suspend => Mode::Off,
            EventKind::Resume => Mode::On,
        }
    }

    /// Threshold index whose guard defines this event (1 for e1, 2 for e2).
    pub fn guard_index(self) -> ThetaIndex {
        match self {
            EventKind::Suspend => ThetaIndex::THETA1,
            EventKind::Resume => ThetaIndex::THETA2,
        }
    }
}

/// An event occurrence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub tau: f64,
}

/// Biological constants of the two-population model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// HSC proliferation rate (1/day).
    pub alpha1: f64,
    /// CRC proliferation rate (1/day).
    pub alpha2: f64,
    /// HSC apoptosis rate (1/day).
    pub beta1: f64,
    /// CRC apoptosis rate (1/day).
    pub beta2: f64,
    /// Proliferation sigmoid center and slope.
    pub k1: f64,
    pub k2: f64,
    /// Apoptosis sigmoid center and slope.
    pub k3: f64,
    pub k4: f64,
    /// HSC to CRC conversion rate (1/day).
    pub m1: f64,
    /// Patient-specific androgen constant.
    pub x3_0: f64,
    /// Androgen degradation time constant (days).
    pub sigma: f64,
    /// HSC basal degradation (1/day).
    pub lambda1: f64,
    /// HSC basal production (cells/day).
    pub mu1: f64,
    /// Androgen basal production (per day).
    pub mu3: f64,
    /// CRC androgen-dependence factor, in [0, 1].
    pub d: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("m1", self.m1),
            ("x3_0", self.x3_0),
            ("sigma", self.sigma),
            ("lambda1", self.lambda1),
            ("mu1", self.mu1),
            ("mu3", self.mu3),
            ("d", self.d),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(Error::config(format!("model.{name} must be finite")));
            }
        }
        if self.sigma <= 0.0 {
            return Err(Error::config("sigma > 0 violated"));
        }
        if self.x3_0 <= 0.0 {
            return Err(Error::config("x3_0 > 0 violated"));
        }
        let rates = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("m1", self.m1),
            ("lambda1", self.lambda1),
            ("mu1", self.mu1),
            ("mu3", self.mu3),
        ];
        for (name, v) in rates {
            if v < 0.0 {
                return Err(Error::config(format!("{name} >= 0 violated")));
            }
        }
        if !(0.0..=1.0).contains(&self.d) {
            return Err(Error::config("d in [0, 1] violated"));
        }
        Ok(())
    }
}

/// The two controllable PSA thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub theta1: f64,
    pub theta2: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !self.theta1.is_finite() || !self.theta2.is_finite() {
            return Err(Error::config("thresholds must be finite"));
        }
        if self.theta1 >= self.theta2 {
            return Err(Error::config("theta1 < theta2 violated"));
        }
        if self.theta1 <= 0.0 {
            return Err(Error::config("theta1 > 0 violated"));
        }
        Ok(())
    }

    pub fn for_event(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::Suspend => self.theta1,
            EventKind::Resume => self.theta2,
        }
    }
}

/// Position in the extended parameter vector, 1-based as in the model's
/// notation: 1, 2 are the thresholds; 3..=6 alias alpha1, alpha2, beta1, beta2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThetaIndex(u8);

impl ThetaIndex {
    pub const THETA1: ThetaIndex = ThetaIndex(1);
    pub const THETA2: ThetaIndex = ThetaIndex(2);
    pub const ALPHA1: ThetaIndex = ThetaIndex(3);
    pub const ALPHA2: ThetaIndex = ThetaIndex(4);
    pub const BETA1: ThetaIndex = ThetaIndex(5);
    pub const BETA2: ThetaIndex = ThetaIndex(6);

    pub const ALL: [ThetaIndex; N_THETA] = [
        ThetaIndex(1),
        ThetaIndex(2),
        ThetaIndex(3),
        ThetaIndex(4),
        ThetaIndex(5),
        ThetaIndex(6),
    ];
    pub const MODEL: [ThetaIndex; 4] = [ThetaIndex(3), ThetaIndex(4), ThetaIndex(5), ThetaIndex(6)];

    pub fn new(i: usize) -> Result<Self> {
        if (1..=N_THETA).contains(&i) {
            Ok(ThetaIndex(i as u8))
        } else {
            Err(Error::config(format!("theta index {i} outside 1..=6")))
        }
    }

    /// 1-based index.
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// 0-based slot for derivative arrays.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn is_threshold(self) -> bool {
        self.0 <= 2
    }
}

impl std::fmt::Display for ThetaIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Model constants plus thresholds. This is the single store for the extended
/// parameter vector: entries 3..=6 are read from and written to `model` directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub model: ModelParams,
    pub thresholds: Thresholds,
}

impl Params {
    pub fn theta(&self, i: ThetaIndex) -> f64 {
        match i.get() {
            1 => self.thresholds.theta1,
            2 => self.thresholds.theta2,
            3 => self.model.alpha1,
            4 => self.model.alpha2,
            5 => self.model.beta1,
            _ => self.model.beta2,
        }
    }

    pub fn set_theta(&mut self, i: ThetaIndex, value: f64) {
        let slot = match i.get() {
            1 => &mut self.thresholds.theta1,
            2 => &mut self.thresholds.theta2,
            3 => &mut self.model.alpha1,
            4 => &mut self.model.alpha2,
            5 => &mut self.model.beta1,
            _ => &mut self.model.beta2,
        };
        *slot = value;
    }

    pub fn with_theta(&self, i: ThetaIndex, value: f64) -> Params {
        let mut p = self.clone();
        p.set_theta(i, value);
        p
    }

    pub fn theta_vector(&self) -> [f64; N_THETA] {
        ThetaIndex::ALL.map(|i| self.theta(i))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.thresholds.validate()
    }
}

/// Discrete mode plus continuous state at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridState {
    pub t: f64,
    pub mode: Mode,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    /// Time spent in the current ON period.
    pub z1: f64,
    /// Time spent in the current OFF period.
    pub z2: f64,
    pub t_mode_entry: f64,
    pub x3_at_entry: f64,
    /// Androgen noise filtered through the degradation kernel since mode entry.
    /// Zero whenever the androgen noise stream is disabled.
    pub zeta3_filtered: f64,
}

impl HybridState {
    pub fn new(mode: Mode, x1: f64, x2: f64, x3: f64) -> Self {
        HybridState {
            t: 0.0,
            mode,
            x1,
            x2,
            x3,
            z1: 0.0,
            z2: 0.0,
            t_mode_entry: 0.0,
            x3_at_entry: x3,
            zeta3_filtered: 0.0,
        }
    }

    /// PSA proxy; both subpopulations secrete PSA equally.
    #[inline]
    pub fn psa(&self) -> f64 {
        self.x1 + self.x2
    }

    fn check_finite(&self) -> Result<()> {
        if self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidState(format!(
                "non-finite state (x1 = {}, x2 = {}, x3 = {}) at t = {}",
                self.x1, self.x2, self.x3, self.t
            )))
        }
    }
}

/// `[1 + exp(-(x3 - center) * slope)]^-1`, with the exponent clamped.
#[inline]
pub fn sigmoid(x3: f64, center: f64, slope: f64) -> f64 {
    let arg = (-(x3 - center) * slope).clamp(-SIGMOID_EXP_CLAMP, SIGMOID_EXP_CLAMP);
    1.0 / (1.0 + arg.exp())
}

#[inline]
pub(crate) fn hsc_rate(x1: f64, x3: f64, p: &ModelParams, zeta1: f64) -> f64 {
    let sa = sigmoid(x3, p.k1, p.k2);
    let sb = sigmoid(x3, p.k3, p.k4);
    (p.alpha1 * sa - p.beta1 * sb - (p.m1 * (1.0 - x3 / p.x3_0) + p.lambda1)) * x1 + p.mu1 + zeta1
}

#[inline]
pub(crate) fn crc_rate(x1: f64, x2: f64, x3: f64, p: &ModelParams, zeta2: f64) -> f64 {
    let r = x3 / p.x3_0;
    (p.alpha2 * (1.0 - p.d * r) - p.beta2) * x2 + p.m1 * (1.0 - r) * x1 + zeta2
}

#[inline]
pub(crate) fn androgen_rate(mode: Mode, x3: f64, p: &ModelParams, zeta3: f64) -> f64 {
    match mode {
        Mode::On => -x3 / p.sigma + p.mu3 + zeta3,
        Mode::Off => (p.x3_0 - x3) / p.sigma + p.mu3 + zeta3,
    }
}

/// Rate of change of the hormone-sensitive population.
pub fn hsc_drift(state: &HybridState, params: &ModelParams, zeta1: f64) -> Result<f64> {
    state.check_finite()?;
    if !zeta1.is_finite() {
        return Err(Error::InvalidState("non-finite noise value".into()));
    }
    Ok(hsc_rate(state.x1, state.x3, params, zeta1))
}

/// Rate of change of the castration-resistant population.
pub fn crc_drift(state: &HybridState, params: &ModelParams, zeta2: f64) -> Result<f64> {
    state.check_finite()?;
    if !zeta2.is_finite() {
        return Err(Error::InvalidState("non-finite noise value".into()));
    }
    Ok(crc_rate(state.x1, state.x2, state.x3, params, zeta2))
}

/// Androgen drift in the given mode.
pub fn androgen_drift(mode: Mode, x3: f64, params: &ModelParams, zeta3: f64) -> f64 {
    androgen_rate(mode, x3, params, zeta3)
}

/// Closed-form androgen level `elapsed` days after entering `mode` with level
/// `x3_at_entry`. `zeta3_filtered` is the noise integrated through the
/// degradation kernel over the same window.
pub fn androgen_closed_form(
    mode: Mode,
    x3_at_entry: f64,
    elapsed: f64,
    params: &ModelParams,
    zeta3_filtered: f64,
) -> Result<f64> {
    if elapsed < 0.0 || elapsed.is_nan() {
        return Err(Error::NegativeElapsed(elapsed));
    }
    Ok(androgen_closed_form_unchecked(
        mode,
        x3_at_entry,
        elapsed,
        params,
        zeta3_filtered,
    ))
}

#[inline]
pub(crate) fn androgen_closed_form_unchecked(
    mode: Mode,
    x3_at_entry: f64,
    elapsed: f64,
    p: &ModelParams,
    zeta3_filtered: f64,
) -> f64 {
    let decay = (-elapsed / p.sigma).exp();
    let target = match mode {
        Mode::On => p.mu3 * p.sigma,
        Mode::Off => p.mu3 * p.sigma + p.x3_0,
    };
    x3_at_entry * decay + target * (1.0 - decay) + zeta3_filtered
}

/// Crossing-based guard: e1 when PSA falls through theta1 while ON, e2 when it
/// rises through theta2 while OFF. `prev_psa` is the PSA at the previous sample.
pub fn guard_event(
    state: &HybridState,
    thresholds: &Thresholds,
    prev_psa: f64,
) -> Result<Option<EventKind>> {
    if thresholds.theta1 >= thresholds.theta2 {
        return Err(Error::config("theta1 < theta2 violated"));
    }
    Ok(crossing(state.mode, prev_psa, state.psa(), thresholds))
}

#[inline]
pub(crate) fn crossing(mode: Mode, prev_psa: f64, psa: f64, th: &Thresholds) -> Option<EventKind> {
    match mode {
        Mode::On if prev_psa > th.theta1 && psa <= th.theta1 => Some(EventKind::Suspend),
        Mode::Off if prev_psa < th.theta2 && psa >= th.theta2 => Some(EventKind::Resume),
        _ => None,
    }
}

/// Partial derivatives of the x1 and x2 drifts. Parameter arrays are indexed
/// by [`ThetaIndex::slot`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftJacobians {
    pub df1_dx1: f64,
    pub df1_dx2: f64,
    pub df1_dx3: f64,
    pub df2_dx1: f64,
    pub df2_dx2: f64,
    pub df2_dx3: f64,
    pub df1_dtheta: [f64; N_THETA],
    pub df2_dtheta: [f64; N_THETA],
}

pub fn drift_jacobians(state: &HybridState, params: &ModelParams) -> Result<DriftJacobians> {
    state.check_finite()?;
    Ok(jacobians_at(state.x1, state.x2, state.x3, params))
}

#[inline]
pub(crate) fn jacobians_at(x1: f64, x2: f64, x3: f64, p: &ModelParams) -> DriftJacobians {
    let sa = sigmoid(x3, p.k1, p.k2);
    let sb = sigmoid(x3, p.k3, p.k4);
    let r = x3 / p.x3_0;
    let dsa = p.k2 * sa * (1.0 - sa);
    let dsb = p.k4 * sb * (1.0 - sb);
    let mut df1_dtheta = [0.0; N_THETA];
    df1_dtheta[2] = x1 * sa;
    df1_dtheta[4] = -x1 * sb;
    let mut df2_dtheta = [0.0; N_THETA];
    df2_dtheta[3] = (1.0 - p.d * r) * x2;
    df2_dtheta[5] = -x2;
    DriftJacobians {
        df1_dx1: p.alpha1 * sa - p.beta1 * sb - p.m1 * (1.0 - r) - p.lambda1,
        df1_dx2: 0.0,
        df1_dx3: (p.alpha1 * dsa - p.beta1 * dsb + p.m1 / p.x3_0) * x1,
        df2_dx1: p.m1 * (1.0 - r),
        df2_dx2: p.alpha2 * (1.0 - p.d * r) - p.beta2,
        df2_dx3: -(p.alpha2 * p.d * x2 + p.m1 * x1) / p.x3_0,
        df1_dtheta,
        df2_dtheta,
    }
}
