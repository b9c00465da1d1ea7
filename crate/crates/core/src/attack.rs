//! False-data injection on one measured signal.
//!
//! An attack adds a linear ramp between two endpoint values to the targeted
//! measurement from its onset until the end of the window. The same
//! corrupted value feeds the AGC feedback path and the recorded trace.
//! Generated attacks are rescaled until the post-attack area control error
//! stays within the limit of their subtlety class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{
    self, MeasurementHook, PlantError, ScenarioConfig, SignalId, SignalTrace, INTERNAL_DT_DEFAULT,
};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(
        "attack rescaling did not converge after {iterations} iterations \
         (max |ACE| = {max_ace}, limit = {limit})"
    )]
    RescaleFailed {
        iterations: usize,
        max_ace: f64,
        limit: f64,
    },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Difficulty class of an attack, bounding the post-attack |ACE|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtlety {
    Subtle,
    Noticeable,
}

/// ACE deviation limits per subtlety class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AceLimitPolicy {
    pub subtle_limit: f64,
    pub noticeable_limit: f64,
    /// Relative slack on the limit accepted after rescaling.
    pub tolerance: f64,
}

impl Default for AceLimitPolicy {
    fn default() -> Self {
        AceLimitPolicy {
            subtle_limit: 0.5,
            noticeable_limit: 1.0,
            tolerance: 1e-3,
        }
    }
}

impl AceLimitPolicy {
    pub fn limit_for(&self, subtlety: Subtlety) -> f64 {
        match subtlety {
            Subtlety::Subtle => self.subtle_limit,
            Subtlety::Noticeable => self.noticeable_limit,
        }
    }
}

/// One false-data injection: target signal, onset, ramp endpoints, and the
/// scale applied by limit enforcement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub target: SignalId,
    #[serde(rename = "t_start_s")]
    pub t_start: f64,
    /// Injected value at onset (pu), before scaling.
    #[serde(rename = "f_i_pu")]
    pub f_i: f64,
    /// Injected value at the window end (pu), before scaling.
    #[serde(rename = "f_f_pu")]
    pub f_f: f64,
    pub scale: f64,
    pub subtlety: Subtlety,
    /// max |injected value| over the window after scaling.
    #[serde(rename = "magnitude_pu")]
    pub magnitude: f64,
}

impl AttackSpec {
    /// Injected value at time `t`: zero before onset, then a linear ramp
    /// from `f_i` (at onset) to `f_f` (at `window_end`), times `scale`.
    pub fn injection_value(&self, t: f64, window_end: f64) -> f64 {
        if t < self.t_start {
            return 0.0;
        }
        debug_assert!(window_end > self.t_start);
        let frac = (t - self.t_start) / (window_end - self.t_start);
        self.scale * (self.f_i + (self.f_f - self.f_i) * frac)
    }

    /// max |injected value| over the window for the current scale.
    pub fn peak_injection(&self) -> f64 {
        self.scale.abs() * self.f_i.abs().max(self.f_f.abs())
    }

    /// Measurement hook corrupting the targeted signal additively.
    pub fn hook(&self, window_end: f64) -> AttackHook<'_> {
        AttackHook {
            spec: self,
            window_end,
        }
    }
}

/// [`MeasurementHook`] that applies an [`AttackSpec`] to its target signal
/// and passes every other signal through unchanged.
pub struct AttackHook<'a> {
    spec: &'a AttackSpec,
    window_end: f64,
}

impl MeasurementHook for AttackHook<'_> {
    fn corrupt(&self, signal: SignalId, true_value: f64, t_s: f64) -> f64 {
        if signal == self.spec.target {
            true_value + self.spec.injection_value(t_s, self.window_end)
        } else {
            true_value
        }
    }
}

/// Draws one attack: target uniform over the three signals, onset uniform on
/// `[disturbance_time, 30]` (snapped to the internal integration grid),
/// endpoints independently normal around -0.11 with std 0.02, subtlety a
/// fair coin. Scale starts at 1.0; the magnitude field reflects it.
pub fn sample_attack(rng: &mut Rng, disturbance_time: f64) -> AttackSpec {
    let target = SignalId::ALL[rng.below(3) as usize];
    let raw_start = rng.uniform(disturbance_time, 30.0);
    let t_start = snap_to_grid(raw_start, disturbance_time);
    let f_i = rng.normal_scaled(-0.11, 0.02);
    let f_f = rng.normal_scaled(-0.11, 0.02);
    let subtlety = if rng.bernoulli(0.5) {
        Subtlety::Subtle
    } else {
        Subtlety::Noticeable
    };
    let mut spec = AttackSpec {
        target,
        t_start,
        f_i,
        f_f,
        scale: 1.0,
        subtlety,
        magnitude: 0.0,
    };
    spec.magnitude = spec.peak_injection();
    spec
}

/// Snaps an event time to the default internal step so integration sees the
/// discontinuity exactly on a step boundary, clamped back into the sampled
/// interval.
pub fn snap_to_grid(t: f64, lower: f64) -> f64 {
    let snapped = (t / INTERNAL_DT_DEFAULT).round() * INTERNAL_DT_DEFAULT;
    snapped.clamp(lower, 30.0)
}

/// Simulates the attacked closed loop and rescales the injection until the
/// recorded |ACE| stays within the subtlety's limit, returning the final
/// spec together with the trace of the accepted simulation.
///
/// At most 8 rescale iterations are attempted; in linear mode one
/// proportional rescale suffices because the loop is linear in the
/// injection.
pub fn enforce_ace_limit_with_trace(
    scenario: &ScenarioConfig,
    spec: AttackSpec,
    policy: &AceLimitPolicy,
) -> Result<(AttackSpec, SignalTrace), AttackError> {
    const MAX_RESCALES: usize = 8;
    let limit = policy.limit_for(spec.subtlety);
    let accept = limit * (1.0 + policy.tolerance);
    let mut spec = spec;

    for iteration in 0..=MAX_RESCALES {
        let trace = plant::simulate(scenario, &spec.hook(scenario.window))?;
        let max_ace = trace.max_abs_ace_from(spec.t_start);
        if max_ace <= accept {
            spec.magnitude = spec.peak_injection();
            return Ok((spec, trace));
        }
        if iteration == MAX_RESCALES {
            return Err(AttackError::RescaleFailed {
                iterations: MAX_RESCALES,
                max_ace,
                limit,
            });
        }
        spec.scale *= limit / max_ace;
    }
    unreachable!("loop returns or errors on the final iteration")
}

/// [`enforce_ace_limit_with_trace`] without the trace.
pub fn enforce_ace_limit(
    scenario: &ScenarioConfig,
    spec: AttackSpec,
    policy: &AceLimitPolicy,
) -> Result<AttackSpec, AttackError> {
    enforce_ace_limit_with_trace(scenario, spec, policy).map(|(spec, _)| spec)
}
