//! Deterministic continuous-time model of a two-area AGC system.
//!
//! Each area has a first-order governor and turbine, primary droop, and a
//! secondary integral controller driving the area control error (ACE) to
//! zero. The areas are coupled through a synchronizing tie-line. All
//! quantities are per-unit; the swing equation is written with the nominal
//! frequency folded into the per-unit base, so
//!
//! ```text
//! d(df_i)/dt = (pm_i - load_i - D_i*df_i -/+ p_tie) / (2*H_i)
//! ```
//!
//! with area 1 seeing `-p_tie` and area 2 seeing `+p_tie` (positive tie flow
//! is exported from area 1 to area 2). Nonlinear mode adds a governor
//! deadband, a generation-rate constraint on mechanical power, and an
//! optional transport delay on the ACE feedback path.
//!
//! Integration is classical fixed-step 4th-order Runge-Kutta. Nonlinearities
//! are memoryless and applied inside the derivative evaluation, so the
//! integrator stays step-size-verifiable and bit-deterministic.

// Validation guards use `!(x > 0.0)` forms deliberately: they reject NaN,
// which the suggested `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

/// Default internal integration step (s). Sampled event times (disturbance
/// start, attack onset) are snapped to this grid so halving the step keeps
/// every discontinuity on a step boundary.
pub const INTERNAL_DT_DEFAULT: f64 = 0.01;
/// Default recording interval (s).
pub const RECORD_DT_DEFAULT: f64 = 0.3;
/// Default simulation window (s); 200 recorded points at 0.3 s.
pub const WINDOW_DEFAULT: f64 = 60.0;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("non-finite state passed to the plant model")]
    InvalidState,
    #[error("trajectory diverged at t = {t_s} s (internal step {step})")]
    Divergence { t_s: f64, step: usize },
}

/// The three externally measured signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalId {
    DeltaF1,
    DeltaF2,
    DeltaPTie,
}

impl SignalId {
    pub const ALL: [SignalId; 3] = [SignalId::DeltaF1, SignalId::DeltaF2, SignalId::DeltaPTie];

    /// Canonical serialized name (`delta_f1`, `delta_f2`, `delta_p_tie`).
    pub fn name(self) -> &'static str {
        match self {
            SignalId::DeltaF1 => "delta_f1",
            SignalId::DeltaF2 => "delta_f2",
            SignalId::DeltaPTie => "delta_p_tie",
        }
    }
}

/// Per-area physical and control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaParams {
    /// Inertia constant H (s).
    pub inertia_h: f64,
    /// Load damping D (pu power per pu frequency).
    pub damping_d: f64,
    /// Frequency bias B (pu power per pu frequency); must equal D + 1/R.
    pub bias_b: f64,
    /// Governor time constant (s).
    pub governor_tg: f64,
    /// Turbine time constant (s).
    pub turbine_tt: f64,
    /// Speed regulation (droop) R (pu).
    pub droop_r: f64,
    /// Secondary (AGC) integral gain.
    pub agc_gain_ki: f64,
}

impl AreaParams {
    pub fn validate(&self, which: &str) -> Result<(), PlantError> {
        let positive = [
            (self.inertia_h, "inertia_h"),
            (self.governor_tg, "governor_tg"),
            (self.turbine_tt, "turbine_tt"),
            (self.droop_r, "droop_r"),
        ];
        for (v, name) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParams(format!(
                    "{which}.{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.damping_d >= 0.0) || !(self.agc_gain_ki >= 0.0) {
            return Err(PlantError::InvalidParams(format!(
                "{which}: damping_d and agc_gain_ki must be >= 0"
            )));
        }
        // Bias consistency: B = D + 1/R holds exactly in f64 for the
        // standard parameter set (20.6 = 0.6 + 1/0.05, 16.3 = 0.3 + 1/0.0625).
        let expected = self.damping_d + 1.0 / self.droop_r;
        if (self.bias_b - expected).abs() > 1e-9 {
            return Err(PlantError::InvalidParams(format!(
                "{which}.bias_b = {} but damping_d + 1/droop_r = {expected}",
                self.bias_b
            )));
        }
        Ok(())
    }
}

/// Full two-area system parameters plus nonlinearity settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub area1: AreaParams,
    pub area2: AreaParams,
    /// Tie-line synchronizing coefficient T12 (pu).
    pub tie_sync_t12: f64,
    /// Total governor deadband width (pu frequency); the dead zone spans
    /// `[-width/2, +width/2]`.
    pub deadband_width: f64,
    /// Generation rate constraint (pu/s); 3 pu/min = 0.05 pu/s.
    pub grc_limit: f64,
    /// Transport delay on the ACE feedback path (s); active in nonlinear mode.
    pub ace_delay: f64,
    /// When false, deadband, GRC, and delay are all bypassed.
    pub nonlinear_mode: bool,
}

impl SystemParams {
    /// Standard benchmark parameter set used throughout the toolkit:
    /// H = 5/4 s, D = 0.6/0.3, B = 20.6/16.3, Tg = 0.2/0.3 s, Tt = 0.5/0.6 s,
    /// R = 0.05/0.0625 pu, T12 = 2 pu, deadband 0.06% (0.0006 pu total),
    /// GRC 3 pu/min, Ki = 0.3.
    pub fn standard() -> Self {
        SystemParams {
            area1: AreaParams {
                inertia_h: 5.0,
                damping_d: 0.6,
                bias_b: 20.6,
                governor_tg: 0.2,
                turbine_tt: 0.5,
                droop_r: 0.05,
                agc_gain_ki: 0.3,
            },
            area2: AreaParams {
                inertia_h: 4.0,
                damping_d: 0.3,
                bias_b: 16.3,
                governor_tg: 0.3,
                turbine_tt: 0.6,
                droop_r: 0.0625,
                agc_gain_ki: 0.3,
            },
            tie_sync_t12: 2.0,
            deadband_width: 0.0006,
            grc_limit: 3.0 / 60.0,
            ace_delay: 0.0,
            nonlinear_mode: true,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.area1.validate("area1")?;
        self.area2.validate("area2")?;
        if !(self.tie_sync_t12 > 0.0) {
            return Err(PlantError::InvalidParams("tie_sync_t12 must be > 0".into()));
        }
        if !(self.deadband_width >= 0.0) {
            return Err(PlantError::InvalidParams(
                "deadband_width must be >= 0".into(),
            ));
        }
        if !(self.grc_limit > 0.0) {
            return Err(PlantError::InvalidParams("grc_limit must be > 0".into()));
        }
        if !(self.ace_delay >= 0.0) {
            return Err(PlantError::InvalidParams("ace_delay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Step load disturbance held from `start_time_s` to the end of the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    /// Affected area (1 or 2).
    pub area: u8,
    #[serde(rename = "magnitude_pu")]
    pub magnitude: f64,
    #[serde(rename = "start_time_s")]
    pub start_time: f64,
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<(), PlantError> {
        if self.area != 1 && self.area != 2 {
            return Err(PlantError::InvalidParams(format!(
                "disturbance area must be 1 or 2, got {}",
                self.area
            )));
        }
        if !self.magnitude.is_finite() {
            return Err(PlantError::InvalidParams(
                "disturbance magnitude must be finite".into(),
            ));
        }
        if !(0.0..=30.0).contains(&self.start_time) {
            return Err(PlantError::InvalidParams(format!(
                "disturbance start_time must be in [0, 30] s, got {}",
                self.start_time
            )));
        }
        Ok(())
    }
}

/// The nine plant states. The all-zeros state is an equilibrium when every
/// input is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    /// Frequency deviations (pu).
    pub df1: f64,
    pub df2: f64,
    /// Tie-line power deviation (pu), integrator of T12*(df1 - df2).
    pub p_tie: f64,
    /// Governor valve deviations (pu).
    pub pg1: f64,
    pub pg2: f64,
    /// Mechanical power deviations (pu).
    pub pm1: f64,
    pub pm2: f64,
    /// AGC integrator outputs (reference power setpoints, pu).
    pub pref1: f64,
    pub pref2: f64,
}

impl PlantState {
    pub const ZERO: PlantState = PlantState {
        df1: 0.0,
        df2: 0.0,
        p_tie: 0.0,
        pg1: 0.0,
        pg2: 0.0,
        pm1: 0.0,
        pm2: 0.0,
        pref1: 0.0,
        pref2: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(self) -> [f64; 9] {
        [
            self.df1, self.df2, self.p_tie, self.pg1, self.pg2, self.pm1, self.pm2, self.pref1,
            self.pref2,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        PlantState {
            df1: a[0],
            df2: a[1],
            p_tie: a[2],
            pg1: a[3],
            pg2: a[4],
            pm1: a[5],
            pm2: a[6],
            pref1: a[7],
            pref2: a[8],
        }
    }
}

/// Measurement triple as seen by the AGC and the recorder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub df1: f64,
    pub df2: f64,
    pub p_tie: f64,
}

impl Measurements {
    pub const ZERO: Measurements = Measurements {
        df1: 0.0,
        df2: 0.0,
        p_tie: 0.0,
    };
}

/// Corruption applied to a measured signal before it reaches the AGC
/// feedback path and the recorded trace. The identity hook reproduces the
/// attack-free trajectory exactly.
pub trait MeasurementHook: Sync {
    fn corrupt(&self, signal: SignalId, true_value: f64, t_s: f64) -> f64;

    fn measure(&self, state: &PlantState, t_s: f64) -> Measurements {
        Measurements {
            df1: self.corrupt(SignalId::DeltaF1, state.df1, t_s),
            df2: self.corrupt(SignalId::DeltaF2, state.df2, t_s),
            p_tie: self.corrupt(SignalId::DeltaPTie, state.p_tie, t_s),
        }
    }
}

/// Passes every measurement through unchanged.
pub struct IdentityHook;

impl MeasurementHook for IdentityHook {
    fn corrupt(&self, _signal: SignalId, true_value: f64, _t_s: f64) -> f64 {
        true_value
    }
}

/// Everything needed to run one simulation: parameters, disturbance, noise
/// levels, the time grid, and the noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemParams,
    pub disturbance: DisturbanceSpec,
    #[serde(rename = "process_noise_std_pu")]
    pub process_noise_std: f64,
    #[serde(rename = "measurement_noise_std_pu")]
    pub measurement_noise_std: f64,
    #[serde(rename = "window_s")]
    pub window: f64,
    #[serde(rename = "record_dt_s")]
    pub record_dt: f64,
    #[serde(rename = "internal_dt_s")]
    pub internal_dt: f64,
    /// Seed of the per-scenario noise stream.
    pub seed: u64,
}

impl ScenarioConfig {
    /// Scenario with the standard parameter set, default grid, default
    /// noise levels (1e-6), and the given disturbance and seed.
    pub fn new(disturbance: DisturbanceSpec, seed: u64) -> Self {
        ScenarioConfig {
            system: SystemParams::standard(),
            disturbance,
            process_noise_std: 1e-6,
            measurement_noise_std: 1e-6,
            window: WINDOW_DEFAULT,
            record_dt: RECORD_DT_DEFAULT,
            internal_dt: INTERNAL_DT_DEFAULT,
            seed,
        }
    }

    pub fn with_noise_disabled(mut self) -> Self {
        self.process_noise_std = 0.0;
        self.measurement_noise_std = 0.0;
        self
    }

    /// Number of recorded points; the last sample sits at
    /// `window - record_dt` (recording starts at t = 0).
    pub fn n_records(&self) -> usize {
        (self.window / self.record_dt).round() as usize
    }

    pub fn steps_per_record(&self) -> usize {
        (self.record_dt / self.internal_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.system.validate()?;
        self.disturbance.validate()?;
        if !(self.process_noise_std >= 0.0) || !(self.measurement_noise_std >= 0.0) {
            return Err(PlantError::InvalidParams("noise std must be >= 0".into()));
        }
        if !(self.window > 0.0) || !(self.record_dt > 0.0) || !(self.internal_dt > 0.0) {
            return Err(PlantError::InvalidParams(
                "time grid values must be > 0".into(),
            ));
        }
        let records = self.window / self.record_dt;
        if (records - records.round()).abs() > 1e-9 || records.round() < 2.0 {
            return Err(PlantError::InvalidParams(format!(
                "window must be an integer multiple (>= 2) of record_dt, got {records}"
            )));
        }
        let steps = self.record_dt / self.internal_dt;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(PlantError::InvalidParams(format!(
                "record_dt must be an integer multiple of internal_dt, got {steps}"
            )));
        }
        Ok(())
    }
}

/// Recorded simulation output on the 0.3 s grid. The ACE series is computed
/// from the recorded (corrupted, noisy) measurements; it is kept for limit
/// enforcement and diagnostics but not persisted to dataset files.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub t_s: Vec<f64>,
    pub delta_f1: Vec<f64>,
    pub delta_f2: Vec<f64>,
    pub delta_p_tie: Vec<f64>,
    pub ace1: Vec<f64>,
    pub ace2: Vec<f64>,
}

impl SignalTrace {
    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    pub fn signal(&self, id: SignalId) -> &[f64] {
        match id {
            SignalId::DeltaF1 => &self.delta_f1,
            SignalId::DeltaF2 => &self.delta_f2,
            SignalId::DeltaPTie => &self.delta_p_tie,
        }
    }

    /// Largest |ACE| over both areas for recorded instants `t >= from_t`.
    pub fn max_abs_ace_from(&self, from_t: f64) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.len() {
            if self.t_s[k] >= from_t {
                m = m.max(self.ace1[k].abs()).max(self.ace2[k].abs());
            }
        }
        m
    }
}

/// Offset-style governor dead zone with half-width `width / 2`: returns 0
/// inside the band, otherwise the input shrunk toward zero by the half-width.
pub fn apply_deadband(freq_error: f64, width: f64) -> f64 {
    let half = width / 2.0;
    if freq_error.abs() <= half {
        0.0
    } else {
        freq_error.signum() * (freq_error.abs() - half)
    }
}

/// Clamps the turbine ramp rate to `[-limit, +limit]` (pu/s).
pub fn clamp_grc(turbine_rate: f64, limit: f64) -> f64 {
    turbine_rate.clamp(-limit, limit)
}

/// Area control errors from a measurement triple:
/// `ACE1 = B1*df1 + p_tie`, `ACE2 = B2*df2 - p_tie`.
pub fn ace_pair(params: &SystemParams, meas: &Measurements) -> (f64, f64) {
    (
        params.area1.bias_b * meas.df1 + meas.p_tie,
        params.area2.bias_b * meas.df2 - meas.p_tie,
    )
}

/// Time derivative of all nine states.
///
/// `loads` are the per-area load deviations at this instant; `agc_meas` is
/// the (possibly corrupted and possibly delayed) measurement triple feeding
/// the secondary controllers. The governor droop path senses the true local
/// frequency; in nonlinear mode it passes through the deadband and the
/// turbine ramp is clamped to the GRC.
pub fn derivatives(
    state: &PlantState,
    params: &SystemParams,
    loads: [f64; 2],
    agc_meas: &Measurements,
) -> Result<PlantState, PlantError> {
    if !state.is_finite() {
        return Err(PlantError::InvalidState);
    }
    Ok(derivatives_unchecked(state, params, loads, agc_meas))
}

fn derivatives_unchecked(
    state: &PlantState,
    params: &SystemParams,
    loads: [f64; 2],
    agc_meas: &Measurements,
) -> PlantState {
    let a1 = &params.area1;
    let a2 = &params.area2;
    let nl = params.nonlinear_mode;

    let (ace1, ace2) = ace_pair(params, agc_meas);

    let speed_err1 = if nl {
        apply_deadband(state.df1, params.deadband_width)
    } else {
        state.df1
    };
    let speed_err2 = if nl {
        apply_deadband(state.df2, params.deadband_width)
    } else {
        state.df2
    };

    let mut d = PlantState {
        df1: (state.pm1 - loads[0] - a1.damping_d * state.df1 - state.p_tie) / (2.0 * a1.inertia_h),
        df2: (state.pm2 - loads[1] - a2.damping_d * state.df2 + state.p_tie) / (2.0 * a2.inertia_h),
        p_tie: params.tie_sync_t12 * (state.df1 - state.df2),
        pg1: (state.pref1 - speed_err1 / a1.droop_r - state.pg1) / a1.governor_tg,
        pg2: (state.pref2 - speed_err2 / a2.droop_r - state.pg2) / a2.governor_tg,
        pm1: (state.pg1 - state.pm1) / a1.turbine_tt,
        pm2: (state.pg2 - state.pm2) / a2.turbine_tt,
        pref1: -a1.agc_gain_ki * ace1,
        pref2: -a2.agc_gain_ki * ace2,
    };
    if nl {
        d.pm1 = clamp_grc(d.pm1, params.grc_limit);
        d.pm2 = clamp_grc(d.pm2, params.grc_limit);
    }
    d
}

/// Per-interval noise draws. Consumed in a fixed order independent of the
/// hook so an attacked run and its attack-free twin see identical noise.
struct NoiseStream {
    rng: Rng,
    process_std: f64,
    measurement_std: f64,
}

impl NoiseStream {
    fn new(scenario: &ScenarioConfig) -> Self {
        NoiseStream {
            rng: Rng::seed_from_u64(scenario.seed),
            process_std: scenario.process_noise_std,
            measurement_std: scenario.measurement_noise_std,
        }
    }

    /// Load noise for the next recording interval, one value per area.
    fn process_pair(&mut self) -> [f64; 2] {
        [
            self.process_std * self.rng.normal(),
            self.process_std * self.rng.normal(),
        ]
    }

    /// Measurement noise for one recorded sample (df1, df2, p_tie).
    fn measurement_triple(&mut self) -> [f64; 3] {
        [
            self.measurement_std * self.rng.normal(),
            self.measurement_std * self.rng.normal(),
            self.measurement_std * self.rng.normal(),
        ]
    }
}

/// Runs one scenario, recording corrupted measurements plus measurement
/// noise on the recording grid. Bit-deterministic for a fixed scenario.
pub fn simulate(
    scenario: &ScenarioConfig,
    hook: &dyn MeasurementHook,
) -> Result<SignalTrace, PlantError> {
    simulate_with_observer(scenario, hook, |_, _, _| {})
}

/// [`simulate`] with a per-internal-step observer `(step, t, state)`, called
/// on the initial state and after every integration step. Used by invariant
/// checks that need the fine-grained trajectory.
pub fn simulate_with_observer(
    scenario: &ScenarioConfig,
    hook: &dyn MeasurementHook,
    mut observer: impl FnMut(usize, f64, &PlantState),
) -> Result<SignalTrace, PlantError> {
    scenario.validate()?;
    let params = &scenario.system;
    let n_records = scenario.n_records();
    let steps_per_record = scenario.steps_per_record();
    let dt = scenario.internal_dt;

    // ACE transport delay in whole internal steps; zero in linear mode.
    let delay_steps = if params.nonlinear_mode && params.ace_delay > 0.0 {
        (params.ace_delay / dt).round() as usize
    } else {
        0
    };
    let mut meas_history: Vec<Measurements> = if delay_steps > 0 {
        Vec::with_capacity(n_records * steps_per_record + 1)
    } else {
        Vec::new()
    };

    let mut noise = NoiseStream::new(scenario);
    let mut state = PlantState::ZERO;
    let mut trace = SignalTrace {
        t_s: Vec::with_capacity(n_records),
        delta_f1: Vec::with_capacity(n_records),
        delta_f2: Vec::with_capacity(n_records),
        delta_p_tie: Vec::with_capacity(n_records),
        ace1: Vec::with_capacity(n_records),
        ace2: Vec::with_capacity(n_records),
    };

    // The disturbance gate is evaluated once per integration step, at the
    // step base time. Sampled event times sit on the internal grid, so the
    // right-hand side is smooth within every step and the integrator keeps
    // its full order across the onset.
    let dist = &scenario.disturbance;
    let loads_for_step = |step_base_t: f64, pn: &[f64; 2]| -> [f64; 2] {
        let mut loads = [pn[0], pn[1]];
        if step_base_t >= dist.start_time {
            loads[(dist.area - 1) as usize] += dist.magnitude;
        }
        loads
    };

    observer(0, 0.0, &state);

    for k in 0..n_records {
        let t_k = k as f64 * scenario.record_dt;
        let pn = noise.process_pair();
        let mn = noise.measurement_triple();

        // Record: corrupt each true signal, then add measurement noise.
        let rec_df1 = hook.corrupt(SignalId::DeltaF1, state.df1, t_k) + mn[0];
        let rec_df2 = hook.corrupt(SignalId::DeltaF2, state.df2, t_k) + mn[1];
        let rec_ptie = hook.corrupt(SignalId::DeltaPTie, state.p_tie, t_k) + mn[2];
        let rec = Measurements {
            df1: rec_df1,
            df2: rec_df2,
            p_tie: rec_ptie,
        };
        let (ace1, ace2) = ace_pair(params, &rec);
        trace.t_s.push(t_k);
        trace.delta_f1.push(rec_df1);
        trace.delta_f2.push(rec_df2);
        trace.delta_p_tie.push(rec_ptie);
        trace.ace1.push(ace1);
        trace.ace2.push(ace2);

        if k + 1 == n_records {
            break;
        }

        for s in 0..steps_per_record {
            let step = k * steps_per_record + s;
            let t = step as f64 * dt;
            let loads = loads_for_step(t, &pn);

            let delayed_meas = if delay_steps > 0 {
                // Measurement at the start of this step enters the buffer;
                // the controllers see the triple from `delay_steps` ago
                // (zero before any measurement exists).
                meas_history.push(hook.measure(&state, t));
                if step >= delay_steps {
                    Some(meas_history[step - delay_steps])
                } else {
                    Some(Measurements::ZERO)
                }
            } else {
                None
            };

            state = rk4_step(&state, t, dt, |stage_t, stage_state| {
                let agc_meas = match delayed_meas {
                    Some(m) => m,
                    None => hook.measure(stage_state, stage_t),
                };
                derivatives_unchecked(stage_state, params, loads, &agc_meas)
            });

            if !state.is_finite() {
                return Err(PlantError::Divergence {
                    t_s: (step + 1) as f64 * dt,
                    step: step + 1,
                });
            }
            observer(step + 1, (step + 1) as f64 * dt, &state);
        }
    }

    Ok(trace)
}

/// One classical 4th-order Runge-Kutta step.
fn rk4_step(
    state: &PlantState,
    t: f64,
    h: f64,
    f: impl Fn(f64, &PlantState) -> PlantState,
) -> PlantState {
    let y = state.to_array();
    let k1 = f(t, state).to_array();
    let k2 = f(t + h / 2.0, &offset(y, h / 2.0, k1)).to_array();
    let k3 = f(t + h / 2.0, &offset(y, h / 2.0, k2)).to_array();
    let k4 = f(t + h, &offset(y, h, k3)).to_array();
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    PlantState::from_array(out)
}

fn offset(y: [f64; 9], h: f64, k: [f64; 9]) -> PlantState {
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = y[i] + h * k[i];
    }
    PlantState::from_array(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_disturbance() -> DisturbanceSpec {
        DisturbanceSpec {
            area: 1,
            magnitude: 0.0,
            start_time: 0.0,
        }
    }

    fn load_step(area: u8, magnitude: f64) -> DisturbanceSpec {
        DisturbanceSpec {
            area,
            magnitude,
            start_time: 0.0,
        }
    }

    fn linear_droop_only(dist: DisturbanceSpec, window: f64) -> ScenarioConfig {
        let mut sc = ScenarioConfig::new(dist, 0).with_noise_disabled();
        sc.system.nonlinear_mode = false;
        sc.system.area1.agc_gain_ki = 0.0;
        sc.system.area2.agc_gain_ki = 0.0;
        sc.window = window;
        sc
    }

    #[test]
    fn standard_params_validate() {
        SystemParams::standard().validate().unwrap();
    }

    #[test]
    fn bias_consistency_is_exact_for_standard_set() {
        let p = SystemParams::standard();
        assert_eq!(p.area1.bias_b, p.area1.damping_d + 1.0 / p.area1.droop_r);
        assert_eq!(p.area2.bias_b, p.area2.damping_d + 1.0 / p.area2.droop_r);
    }

    #[test]
    fn bad_bias_rejected() {
        let mut p = SystemParams::standard();
        p.area1.bias_b = 19.0;
        assert!(matches!(p.validate(), Err(PlantError::InvalidParams(_))));
    }

    #[test]
    fn deadband_examples() {
        assert_eq!(apply_deadband(0.0, 0.0006), 0.0);
        assert_eq!(apply_deadband(0.0002, 0.0006), 0.0);
        assert!((apply_deadband(0.001, 0.0006) - 0.0007).abs() < 1e-15);
        assert!((apply_deadband(-0.001, 0.0006) + 0.0007).abs() < 1e-15);
    }

    #[test]
    fn grc_examples() {
        assert_eq!(clamp_grc(0.01, 0.05), 0.01);
        assert_eq!(clamp_grc(0.2, 0.05), 0.05);
        // 3 pu/min converts to exactly 0.05 pu/s.
        assert_eq!(clamp_grc(-3.0 / 60.0, 0.05), -0.05);
    }

    #[test]
    fn zero_state_zero_load_is_equilibrium() {
        let params = SystemParams::standard();
        let d = derivatives(&PlantState::ZERO, &params, [0.0, 0.0], &Measurements::ZERO).unwrap();
        assert_eq!(d, PlantState::ZERO);
    }

    #[test]
    fn swing_equation_slope_under_load_step() {
        let params = SystemParams::standard();
        let d = derivatives(&PlantState::ZERO, &params, [0.02, 0.0], &Measurements::ZERO).unwrap();
        assert!((d.df1 - (-0.002)).abs() < 1e-15, "d.df1 = {}", d.df1);
        let rest = [d.df2, d.p_tie, d.pg1, d.pg2, d.pm1, d.pm2, d.pref1, d.pref2];
        assert!(rest.iter().all(|v| *v == 0.0), "{rest:?}");
    }

    #[test]
    fn tie_line_rate_from_frequency_split() {
        let params = SystemParams::standard();
        let mut state = PlantState::ZERO;
        state.df1 = 0.01;
        state.df2 = -0.01;
        // ACE feedback is driven by measurements; pass the true values but a
        // linear-mode system so the deadband does not interfere.
        let mut lin = params;
        lin.nonlinear_mode = false;
        let meas = Measurements {
            df1: 0.01,
            df2: -0.01,
            p_tie: 0.0,
        };
        let d = derivatives(&state, &lin, [0.0, 0.0], &meas).unwrap();
        assert!((d.p_tie - 0.04).abs() < 1e-15, "d.p_tie = {}", d.p_tie);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let params = SystemParams::standard();
        let mut state = PlantState::ZERO;
        state.df1 = f64::NAN;
        assert!(matches!(
            derivatives(&state, &params, [0.0, 0.0], &Measurements::ZERO),
            Err(PlantError::InvalidState)
        ));
    }

    #[test]
    fn equilibrium_trace_is_exactly_zero() {
        let sc = ScenarioConfig::new(zero_disturbance(), 42).with_noise_disabled();
        let trace = simulate(&sc, &IdentityHook).unwrap();
        assert_eq!(trace.len(), 200);
        for k in 0..trace.len() {
            assert_eq!(trace.delta_f1[k], 0.0);
            assert_eq!(trace.delta_f2[k], 0.0);
            assert_eq!(trace.delta_p_tie[k], 0.0);
        }
    }

    #[test]
    fn recording_grid_is_exact() {
        let sc = ScenarioConfig::new(zero_disturbance(), 1).with_noise_disabled();
        let trace = simulate(&sc, &IdentityHook).unwrap();
        assert_eq!(trace.len(), 200);
        for (k, t) in trace.t_s.iter().enumerate() {
            assert_eq!(*t, k as f64 * 0.3);
        }
        assert_eq!(*trace.t_s.last().unwrap(), 199.0 * 0.3);
    }

    #[test]
    fn droop_only_steady_state_matches_analytic_balance() {
        let sc = linear_droop_only(load_step(1, 0.02), 120.0);
        let trace = simulate(&sc, &IdentityHook).unwrap();
        let df_expected = -0.02 / 36.9;
        let ptie_expected = df_expected * 16.3;
        let last = trace.len() - 1;
        assert!(
            (trace.delta_f1[last] - df_expected).abs() < 0.02 * df_expected.abs(),
            "df1 = {}, expected {df_expected}",
            trace.delta_f1[last]
        );
        assert!(
            (trace.delta_f2[last] - df_expected).abs() < 0.02 * df_expected.abs(),
            "df2 = {}, expected {df_expected}",
            trace.delta_f2[last]
        );
        assert!(
            (trace.delta_p_tie[last] - ptie_expected).abs() < 0.02 * ptie_expected.abs(),
            "p_tie = {}, expected {ptie_expected}",
            trace.delta_p_tie[last]
        );
    }

    #[test]
    fn integral_action_restores_frequency_and_tie_flow() {
        let mut sc = ScenarioConfig::new(load_step(1, 0.02), 0).with_noise_disabled();
        sc.system.nonlinear_mode = false;
        sc.window = 120.0;
        let trace = simulate(&sc, &IdentityHook).unwrap();
        let last = trace.len() - 1;
        assert!(trace.delta_f1[last].abs() < 1e-4);
        assert!(trace.delta_f2[last].abs() < 1e-4);
        assert!(trace.delta_p_tie[last].abs() < 1e-4);
    }

    #[test]
    fn linear_mode_scales_with_disturbance() {
        let base = linear_droop_only(load_step(1, 0.01), 60.0);
        let mut scaled = base.clone();
        scaled.disturbance.magnitude = 0.03;
        let t1 = simulate(&base, &IdentityHook).unwrap();
        let t3 = simulate(&scaled, &IdentityHook).unwrap();
        for k in 0..t1.len() {
            for (a, b) in [
                (t1.delta_f1[k], t3.delta_f1[k]),
                (t1.delta_f2[k], t3.delta_f2[k]),
                (t1.delta_p_tie[k], t3.delta_p_tie[k]),
            ] {
                let scaled_ref = 3.0 * a;
                let denom = scaled_ref.abs().max(1e-300);
                if a.abs() > 1e-15 {
                    assert!(((b - scaled_ref) / denom).abs() < 1e-9, "k={k} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn tie_flow_antisymmetric_in_disturbance_area() {
        let sc1 = linear_droop_only(load_step(1, 0.02), 120.0);
        let sc2 = linear_droop_only(load_step(2, 0.02), 120.0);
        let t1 = simulate(&sc1, &IdentityHook).unwrap();
        let t2 = simulate(&sc2, &IdentityHook).unwrap();
        let last = t1.len() - 1;
        let a = t1.delta_p_tie[last];
        let b = t2.delta_p_tie[last];
        // Moving the load across the tie flips the flow direction. The
        // magnitudes differ because the areas are asymmetric; each one must
        // land on its own droop balance.
        assert!(a < 0.0, "area-1 load imports over the tie: {a}");
        assert!(b > 0.0, "area-2 load exports over the tie: {b}");
        let df = -0.02 / 36.9;
        assert!(((a - df * 16.3) / a.abs()).abs() < 0.02, "a={a}");
        assert!(((b + df * 20.6) / b.abs()).abs() < 0.02, "b={b}");
    }

    #[test]
    fn halving_internal_step_barely_moves_samples() {
        let mut sc = linear_droop_only(load_step(1, 0.02), 60.0);
        sc.disturbance.start_time = 3.57; // on the 0.01 s grid, off the 0.3 s grid
        let coarse = simulate(&sc, &IdentityHook).unwrap();
        let mut fine_sc = sc.clone();
        fine_sc.internal_dt = 0.005;
        let fine = simulate(&fine_sc, &IdentityHook).unwrap();
        for k in 0..coarse.len() {
            assert!((coarse.delta_f1[k] - fine.delta_f1[k]).abs() < 1e-6);
            assert!((coarse.delta_f2[k] - fine.delta_f2[k]).abs() < 1e-6);
            assert!((coarse.delta_p_tie[k] - fine.delta_p_tie[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn grc_bounds_mechanical_power_rate() {
        let mut sc = ScenarioConfig::new(load_step(1, 0.08), 3).with_noise_disabled();
        sc.system.nonlinear_mode = true;
        let mut prev: Option<PlantState> = None;
        let mut max_rate: f64 = 0.0;
        let dt = sc.internal_dt;
        simulate_with_observer(&sc, &IdentityHook, |_, _, state| {
            if let Some(p) = prev {
                max_rate = max_rate
                    .max(((state.pm1 - p.pm1) / dt).abs())
                    .max(((state.pm2 - p.pm2) / dt).abs());
            }
            prev = Some(*state);
        })
        .unwrap();
        assert!(
            max_rate <= sc.system.grc_limit + 1e-9,
            "max pm rate {max_rate}"
        );
    }

    #[test]
    fn same_seed_reproduces_trace_bit_exactly() {
        let sc = ScenarioConfig::new(load_step(2, -0.015), 99);
        let a = simulate(&sc, &IdentityHook).unwrap();
        let b = simulate(&sc, &IdentityHook).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ace_delay_shifts_response_without_blowup() {
        let mut sc = ScenarioConfig::new(load_step(1, 0.02), 5).with_noise_disabled();
        sc.system.ace_delay = 0.5;
        sc.system.nonlinear_mode = true;
        let delayed = simulate(&sc, &IdentityHook).unwrap();
        sc.system.ace_delay = 0.0;
        let immediate = simulate(&sc, &IdentityHook).unwrap();
        assert_ne!(delayed, immediate);
        assert!(delayed.delta_f1.iter().all(|v| v.is_finite()));
        // Both settle: integral action still zeroes ACE with a short delay.
        assert!(delayed.delta_f1.last().unwrap().abs() < 1e-3);
    }

    #[test]
    fn invalid_grid_rejected() {
        let mut sc = ScenarioConfig::new(zero_disturbance(), 0);
        sc.record_dt = 0.07; // not a multiple of internal_dt or divisor of window
        assert!(sc.validate().is_err());
    }

    #[test]
    fn stiff_governor_reports_divergence_with_timestep() {
        let mut sc = ScenarioConfig::new(load_step(1, 0.02), 0).with_noise_disabled();
        // A microsecond governor lag is far outside the fixed step's
        // stability region; the integrator must flag the first non-finite
        // step rather than return garbage.
        sc.system.area1.governor_tg = 1e-6;
        match simulate(&sc, &IdentityHook) {
            Err(PlantError::Divergence { t_s, step }) => {
                assert!(step > 0);
                assert!(t_s > 0.0 && t_s <= sc.window, "t_s = {t_s}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
