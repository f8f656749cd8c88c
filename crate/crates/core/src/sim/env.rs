use serde::{Deserialize, Serialize};

use super::{
    idm_free_road_acceleration, reward, time_gap, ttc, Observation, ScenarioParams, SimConfig,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub v: f64,
    pub a: f64,
    pub a_prev: f64,
}

impl VehicleState {
    fn at(x: f64, v: f64) -> Self {
        Self {
            x,
            v,
            a: 0.0,
            a_prev: 0.0,
        }
    }

    /// One explicit Euler step under acceleration `a`; speed stays in `[0, v_max]`.
    fn advance(&mut self, a: f64, dt: f64, v_max: f64) {
        self.a_prev = self.a;
        self.a = a;
        self.x += self.v * dt;
        self.v = (self.v + a * dt).clamp(0.0, v_max);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Collision,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub reason: Option<DoneReason>,
    pub ttc: f64,
    pub tgap: f64,
}

/// A single EGO/MIO episode.
#[derive(Debug, Clone)]
pub struct AccEnv {
    cfg: SimConfig,
    ego: VehicleState,
    mio: VehicleState,
    v_mio_target: f64,
    jerk: f64,
    steps: usize,
    done: bool,
}

impl AccEnv {
    /// Place EGO at `x = 0` and the MIO `d_mio0` ahead, both unaccelerated.
    pub fn reset(params: &ScenarioParams, cfg: &SimConfig) -> Result<(Self, Observation)> {
        params.validate(&cfg.bounds)?;
        let env = Self {
            cfg: *cfg,
            ego: VehicleState::at(0.0, params.v_ego0),
            mio: VehicleState::at(params.d_mio0, params.v_mio0),
            v_mio_target: params.v_mio_target,
            jerk: 0.0,
            steps: 0,
            done: false,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn mio(&self) -> &VehicleState {
        &self.mio
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn gap(&self) -> f64 {
        self.mio.x - self.ego.x
    }

    pub fn ttc(&self) -> f64 {
        ttc(self.gap(), self.ego.v, self.mio.v, &self.cfg)
    }

    pub fn time_gap(&self) -> f64 {
        time_gap(self.gap(), self.ego.v, &self.cfg)
    }

    pub fn observation(&self) -> Observation {
        Observation {
            v_ego: self.ego.v,
            a_ego: self.ego.a,
            jerk_ego: self.jerk,
            d_mio: self.gap(),
            dv_mio: self.mio.v - self.ego.v,
        }
    }

    /// Advance one control period with an action in `[-1, 1]` (clamped).
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if !action.is_finite() {
            return Err(Error::NonFinite {
                what: "action",
                index: self.steps,
            });
        }
        let cfg = &self.cfg;
        let a_ego = action.clamp(-1.0, 1.0) * cfg.ego_accel_max;
        let a_mio = idm_free_road_acceleration(self.mio.v, self.v_mio_target, &cfg.idm);

        self.ego.advance(a_ego, cfg.dt, cfg.ego_speed_max);
        self.mio.advance(a_mio, cfg.dt, f64::INFINITY);
        self.jerk = ((self.ego.a - self.ego.a_prev) / cfg.dt).clamp(-cfg.jerk_limit, cfg.jerk_limit);
        self.steps += 1;

        let gap = self.gap();
        let collided = gap <= 0.0;
        let tgap = time_gap(gap.max(0.0), self.ego.v, cfg);
        let ttc = ttc(gap, self.ego.v, self.mio.v, cfg);
        let reward = reward(tgap, self.jerk, self.ego.v, collided, cfg);

        let reason = if collided {
            Some(DoneReason::Collision)
        } else if self.steps >= cfg.horizon {
            Some(DoneReason::Horizon)
        } else {
            None
        };
        self.done = reason.is_some();
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done: self.done,
            reason,
            ttc,
            tgap,
        })
    }
}
