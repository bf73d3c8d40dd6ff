//! Expectile loss, sample expectiles, and annealing schedules for the
//! expectile level τ.
//!
//! The asymmetric squared loss is L_τ(u) = |τ − 1(u < 0)| · u², so residuals
//! above zero weigh τ and residuals below zero weigh (1 − τ). Its gradient in
//! u is 2 |τ − 1(u < 0)| · u; the factor 2 is kept so that τ = 0.5 reproduces
//! the plain squared-error gradient u exactly, bit for bit.
//!
//! A [`TauSchedule`] moves τ from `tau_init` down to `tau_final` over a fixed
//! step horizon. All shapes are monotone non-increasing and hit both
//! endpoints exactly; `exp1` decays fast early, `exp2` decays late, `sigmoid`
//! is symmetric around the midpoint, and on the open interval they bracket
//! the linear ramp as exp1 ≤ linear ≤ exp2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpectileError {
    #[error("empty sample")]
    EmptySample,
    #[error("got {got} weights for {want} data points")]
    WeightLength { got: usize, want: usize },
    #[error("weights must be finite, nonnegative, and not all zero")]
    BadWeights,
    #[error("sample values must be finite")]
    NonFiniteData,
    #[error("tau must lie in (0, 1), got {0}")]
    TauOutOfRange(f64),
    #[error("schedule step {t} lies outside [0, {horizon}]")]
    StepOutOfRange { t: u64, horizon: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Asymmetric squared loss L_τ(u) = |τ − 1(u < 0)| · u².
pub fn loss(tau: f64, u: f64) -> f64 {
    debug_assert!(tau > 0.0 && tau < 1.0);
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

/// dL_τ/du = 2 |τ − 1(u < 0)| · u. Continuous at u = 0; equals u when τ = 0.5.
pub fn loss_grad(tau: f64, u: f64) -> f64 {
    debug_assert!(tau > 0.0 && tau < 1.0);
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    2.0 * w * u
}

/// The τ-expectile of a weighted sample, solved by bisection on the
/// first-order condition
///
///   τ · Σ_{x ≥ m} w · (x − m) = (1 − τ) · Σ_{x < m} w · (m − x).
///
/// The balance is strictly decreasing in m with a sign change on
/// [min, max], so bisection converges to the unique root; the bracket is
/// narrowed down to float resolution (well below 1e-10 in absolute terms for
/// sample scales up to ~1e4). With τ = 0.5 this is the weighted mean.
pub fn sample_expectile(data: &[f64], weights: Option<&[f64]>, tau: f64) -> Result<f64, ExpectileError> {
    if data.is_empty() {
        return Err(ExpectileError::EmptySample);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ExpectileError::TauOutOfRange(tau));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(ExpectileError::NonFiniteData);
    }
    let uniform = vec![1.0; data.len()];
    let w = match weights {
        Some(w) => {
            if w.len() != data.len() {
                return Err(ExpectileError::WeightLength { got: w.len(), want: data.len() });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(ExpectileError::BadWeights);
            }
            w
        }
        None => &uniform,
    };

    let lo0 = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi0 = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo0 == hi0 {
        return Ok(lo0);
    }

    // Positive when m sits below the expectile, negative above.
    let balance = |m: f64| -> f64 {
        let mut above = 0.0;
        let mut below = 0.0;
        for (&x, &wx) in data.iter().zip(w) {
            if x >= m {
                above += wx * (x - m);
            } else {
                below += wx * (m - x);
            }
        }
        tau * above - (1.0 - tau) * below
    };

    let (mut lo, mut hi) = (lo0, hi0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid.clamp(lo0, hi0));
        }
        let g = balance(mid);
        if g == 0.0 {
            return Ok(mid);
        } else if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Shape family for [`TauSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    /// Fast early decay: normalized (e^{−k·x} − e^{−k}) / (1 − e^{−k}).
    Exp1,
    /// Slow early decay: normalized (e^k − e^{k·x}) / (e^k − 1).
    Exp2,
    /// Logistic in x, rescaled so both endpoints are hit exactly.
    Sigmoid,
    Constant,
}

/// Annealing schedule for the expectile level: τ(0) = `tau_init`,
/// τ(`horizon`) = `tau_final`, monotone non-increasing in between.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauSchedule {
    kind: ScheduleKind,
    tau_init: f64,
    tau_final: f64,
    horizon: u64,
    shape: f64,
}

impl TauSchedule {
    pub const DEFAULT_TAU_FINAL: f64 = 0.5;
    pub const DEFAULT_SHAPE: f64 = 5.0;

    pub fn new(
        kind: ScheduleKind,
        tau_init: f64,
        tau_final: f64,
        horizon: u64,
        shape: f64,
    ) -> Result<Self, ExpectileError> {
        let bad = |msg: String| Err(ExpectileError::InvalidSchedule(msg));
        if !(tau_init > 0.0 && tau_init < 1.0) {
            return bad(format!("tau_init must lie in (0, 1), got {tau_init}"));
        }
        if !(tau_final > 0.0 && tau_final < 1.0) {
            return bad(format!("tau_final must lie in (0, 1), got {tau_final}"));
        }
        if tau_final > tau_init {
            return bad(format!("tau_final {tau_final} exceeds tau_init {tau_init}"));
        }
        if horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(shape > 0.0 && shape.is_finite()) {
            return bad(format!("shape must be positive and finite, got {shape}"));
        }
        if kind == ScheduleKind::Constant && tau_final != tau_init {
            return bad("constant schedule requires tau_final == tau_init (omit tau_final)".into());
        }
        Ok(Self { kind, tau_init, tau_final, horizon, shape })
    }

    /// Linear ramp from `tau_init` to 0.5 over `horizon` steps.
    pub fn linear(tau_init: f64, horizon: u64) -> Result<Self, ExpectileError> {
        Self::new(ScheduleKind::Linear, tau_init, Self::DEFAULT_TAU_FINAL, horizon, Self::DEFAULT_SHAPE)
    }

    /// τ fixed at `tau` for every step.
    pub fn constant(tau: f64) -> Result<Self, ExpectileError> {
        Self::new(ScheduleKind::Constant, tau, tau, u64::MAX, Self::DEFAULT_SHAPE)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn tau_init(&self) -> f64 {
        self.tau_init
    }

    pub fn tau_final(&self) -> f64 {
        self.tau_final
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Normalized decay s(x) ∈ [0, 1] with s(0) = 1 and s(1) = 0 (1 for
    /// constant schedules); the shape shared by [`value`](Self::value) and
    /// [`weight`](Self::weight).
    fn decay(&self, x: f64) -> f64 {
        let k = self.shape;
        match self.kind {
            ScheduleKind::Linear => 1.0 - x,
            ScheduleKind::Exp1 => {
                let floor = (-k).exp();
                ((-k * x).exp() - floor) / (1.0 - floor)
            }
            ScheduleKind::Exp2 => {
                let cap = k.exp();
                (cap - (k * x).exp()) / (cap - 1.0)
            }
            ScheduleKind::Sigmoid => {
                let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
                let lo = sig(-0.5 * k);
                let hi = sig(0.5 * k);
                (sig(k * (0.5 - x)) - lo) / (hi - lo)
            }
            ScheduleKind::Constant => 1.0,
        }
    }

    /// τ at step `t`. Errors when `t` exceeds the horizon; both endpoints are
    /// returned exactly.
    pub fn value(&self, t: u64) -> Result<f64, ExpectileError> {
        if t > self.horizon {
            return Err(ExpectileError::StepOutOfRange { t, horizon: self.horizon });
        }
        if t == 0 {
            return Ok(self.tau_init);
        }
        if t == self.horizon {
            return Ok(self.tau_final);
        }
        let x = t as f64 / self.horizon as f64;
        Ok(self.tau_final + (self.tau_init - self.tau_final) * self.decay(x))
    }

    /// τ at step `t`, holding `tau_final` past the horizon. Training loops
    /// use this so runs longer than the annealing phase keep the final level.
    pub fn value_saturating(&self, t: u64) -> f64 {
        self.value(t.min(self.horizon)).expect("clamped step is in range")
    }

    /// The schedule's shape remapped onto [1, 0]: a blending weight that
    /// starts at 1 and decays to 0 over the same horizon. Constant schedules
    /// stay at 1.
    pub fn weight(&self, t: u64) -> Result<f64, ExpectileError> {
        if t > self.horizon {
            return Err(ExpectileError::StepOutOfRange { t, horizon: self.horizon });
        }
        if self.kind == ScheduleKind::Constant {
            return Ok(1.0);
        }
        if t == 0 {
            return Ok(1.0);
        }
        if t == self.horizon {
            return Ok(0.0);
        }
        Ok(self.decay(t as f64 / self.horizon as f64))
    }

    /// [`weight`](Self::weight) with the step clamped to the horizon.
    pub fn weight_saturating(&self, t: u64) -> f64 {
        self.weight(t.min(self.horizon)).expect("clamped step is in range")
    }
}

/// On-disk form of [`TauSchedule`]: `{kind, tau_init, tau_final?, horizon?, shape?}`.
/// `tau_final` defaults to 0.5 (to `tau_init` for constant schedules), `shape`
/// to 5, and `horizon` may be omitted only for constant schedules.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TauScheduleSpec {
    kind: ScheduleKind,
    tau_init: f64,
    tau_final: Option<f64>,
    horizon: Option<u64>,
    shape: Option<f64>,
}

impl TryFrom<TauScheduleSpec> for TauSchedule {
    type Error = ExpectileError;

    fn try_from(spec: TauScheduleSpec) -> Result<Self, Self::Error> {
        let tau_final = spec.tau_final.unwrap_or(match spec.kind {
            ScheduleKind::Constant => spec.tau_init,
            _ => Self::DEFAULT_TAU_FINAL,
        });
        let horizon = match (spec.horizon, spec.kind) {
            (Some(h), _) => h,
            (None, ScheduleKind::Constant) => u64::MAX,
            (None, _) => {
                return Err(ExpectileError::InvalidSchedule(
                    "horizon is required for non-constant schedules".into(),
                ))
            }
        };
        TauSchedule::new(
            spec.kind,
            spec.tau_init,
            tau_final,
            horizon,
            spec.shape.unwrap_or(Self::DEFAULT_SHAPE),
        )
    }
}

impl<'de> Deserialize<'de> for TauSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let spec = TauScheduleSpec::deserialize(deserializer)?;
        TauSchedule::try_from(spec).map_err(serde::de::Error::custom)
    }
}
