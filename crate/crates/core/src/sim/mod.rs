//! Longitudinal two-vehicle simulator.
//!
//! The EGO vehicle is driven by an external action in `[-1, 1]`, mapped
//! linearly onto `[-4, 4]` m/s². The lead vehicle (MIO) follows the
//! free-road form of the intelligent driver model towards its target speed.
//! Both vehicles are integrated with explicit Euler at `dt = 0.1` s, and the
//! gap between them is measured bumper to bumper: a gap `<= 0` is a
//! collision.

mod env;
mod episode;
mod idm;
mod metrics;
mod obs;

pub use env::{AccEnv, DoneReason, StepOutcome, VehicleState};
pub use episode::{
    run_episode, write_trajectory_csv, Controller, EpisodeResult, FnController, IdmController,
    TrajectoryRow, TRAJECTORY_HEADER,
};
pub use idm::{idm_acceleration, idm_desired_gap, idm_free_road_acceleration};
pub use metrics::{gap_reward, reward, time_gap, ttc};
pub use obs::{normalize_obs, Observation, ObservationRanges, OBS_DIM};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intelligent driver model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Maximum acceleration `α_max` (m/s²).
    pub accel_max: f64,
    /// Acceleration exponent `δ`.
    pub exponent: f64,
    /// Minimum standstill gap `d0` (m).
    pub min_gap: f64,
    /// Desired deceleration `b` (m/s²). Stored signed; only `|b|` enters the model.
    pub comfort_decel: f64,
    /// Safe time headway (s).
    pub time_headway: f64,
    /// Lower clamp on the produced acceleration (m/s²).
    pub decel_limit: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            accel_max: 4.0,
            exponent: 4.0,
            min_gap: 3.0,
            comfort_decel: -2.0,
            time_headway: 1.5,
            decel_limit: -4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub jerk_coeff: f64,
    pub speed_coeff: f64,
    pub collision_penalty: f64,
    pub v_max: f64,
    /// Lower edge of the rewarded time-gap band (s).
    pub band_lo: f64,
    /// Upper edge of the rewarded time-gap band (s).
    pub band_hi: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            jerk_coeff: -0.5,
            speed_coeff: 5.0,
            collision_penalty: -10.0,
            v_max: 40.0,
            band_lo: 0.8,
            band_hi: 2.0,
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Admissible ranges of the four scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioBounds {
    pub v_ego0: Range,
    pub d_mio0: Range,
    pub v_mio0: Range,
    pub v_mio_target: Range,
}

impl Default for ScenarioBounds {
    fn default() -> Self {
        Self {
            v_ego0: Range::new(10.0, 40.0),
            d_mio0: Range::new(10.0, 120.0),
            v_mio0: Range::new(10.0, 40.0),
            v_mio_target: Range::new(10.0, 40.0),
        }
    }
}

impl ScenarioBounds {
    pub fn as_array(&self) -> [Range; 4] {
        [self.v_ego0, self.d_mio0, self.v_mio0, self.v_mio_target]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Integration step (s).
    pub dt: f64,
    /// Episode length in steps.
    pub horizon: usize,
    pub idm: IdmParams,
    pub reward: RewardConfig,
    /// EGO acceleration for a full-scale action (m/s²).
    pub ego_accel_max: f64,
    /// EGO speed limit (m/s); pass `f64::INFINITY` for none.
    pub ego_speed_max: f64,
    /// Jerk clamp used for the observation and the jerk penalty (m/s³).
    pub jerk_limit: f64,
    /// Stand-in for an undefined time-to-collision (no closing speed).
    pub ttc_cap: f64,
    /// Floor applied to a zero time gap before the reward bands.
    pub tgap_floor: f64,
    pub bounds: ScenarioBounds,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 250,
            idm: IdmParams::default(),
            reward: RewardConfig::default(),
            ego_accel_max: 4.0,
            ego_speed_max: 40.0,
            jerk_limit: 8.0,
            ttc_cap: 100.0,
            tgap_floor: 1e-6,
            bounds: ScenarioBounds::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.ego_speed_max > 0.0) {
            return Err(Error::Config("ego_speed_max must be positive".into()));
        }
        if self.ttc_cap <= 0.0 {
            return Err(Error::Config("ttc_cap must be positive".into()));
        }
        for (name, r) in ["v_ego0", "d_mio0", "v_mio0", "v_mio_target"]
            .iter()
            .zip(self.bounds.as_array())
        {
            if !(r.lo < r.hi) {
                return Err(Error::Config(format!("bounds.{name}: lo must be < hi")));
            }
        }
        Ok(())
    }
}

/// The four-dimensional scenario vector: initial EGO speed, initial gap,
/// initial MIO speed and MIO target speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub v_ego0: f64,
    pub d_mio0: f64,
    pub v_mio0: f64,
    pub v_mio_target: f64,
}

impl ScenarioParams {
    pub const FIELDS: [&'static str; 4] = ["v_ego0", "d_mio0", "v_mio0", "v_mio_target"];

    pub const fn new(v_ego0: f64, d_mio0: f64, v_mio0: f64, v_mio_target: f64) -> Self {
        Self {
            v_ego0,
            d_mio0,
            v_mio0,
            v_mio_target,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.v_ego0, self.d_mio0, self.v_mio0, self.v_mio_target]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [a, b, c, d] => Ok(Self::new(*a, *b, *c, *d)),
            _ => Err(Error::ShapeMismatch(format!(
                "scenario vector needs 4 entries, got {}",
                x.len()
            ))),
        }
    }

    pub fn validate(&self, bounds: &ScenarioBounds) -> Result<()> {
        for ((field, value), range) in Self::FIELDS
            .iter()
            .zip(self.to_array())
            .zip(bounds.as_array())
        {
            if !value.is_finite() || !range.contains(value) {
                return Err(Error::ScenarioOutOfRange {
                    field,
                    value,
                    lo: range.lo,
                    hi: range.hi,
                });
            }
        }
        Ok(())
    }
}
