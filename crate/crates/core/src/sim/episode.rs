use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{idm_acceleration, AccEnv, IdmParams, Observation, ScenarioParams, SimConfig};
use crate::error::Result;

/// Anything that maps an observation to an action in `[-1, 1]`.
///
/// Implementations receive the raw observation; learned policies normalize it
/// themselves.
pub trait Controller {
    fn act(&self, obs: &Observation) -> f64;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn act(&self, obs: &Observation) -> f64 {
        (**self).act(obs)
    }
}

/// Wraps a closure as a [`Controller`].
pub struct FnController<F>(pub F);

impl<F: Fn(&Observation) -> f64> Controller for FnController<F> {
    fn act(&self, obs: &Observation) -> f64 {
        (self.0)(obs)
    }
}

/// Rule-based EGO controller following the lead vehicle with the full IDM.
#[derive(Debug, Clone, Copy)]
pub struct IdmController {
    pub params: IdmParams,
    pub v_desired: f64,
    /// Acceleration corresponding to a full-scale action.
    pub accel_scale: f64,
}

impl Default for IdmController {
    fn default() -> Self {
        Self {
            params: IdmParams::default(),
            v_desired: 40.0,
            accel_scale: 4.0,
        }
    }
}

impl Controller for IdmController {
    fn act(&self, obs: &Observation) -> f64 {
        let approach = -obs.dv_mio;
        match idm_acceleration(obs.v_ego, self.v_desired, obs.d_mio, approach, &self.params) {
            Ok(a) => (a / self.accel_scale).clamp(-1.0, 1.0),
            Err(_) => -1.0,
        }
    }
}

pub const TRAJECTORY_HEADER: &str = "t,x_ego,v_ego,a_ego,x_mio,v_mio,d_mio,ttc,tgap,reward";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x_ego: f64,
    pub v_ego: f64,
    pub a_ego: f64,
    pub x_mio: f64,
    pub v_mio: f64,
    pub d_mio: f64,
    pub ttc: f64,
    pub tgap: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub params: ScenarioParams,
    /// Minimum time to collision over the whole trajectory (s).
    pub min_ttc: f64,
    pub collided: bool,
    /// Number of actions applied.
    pub steps: usize,
    pub total_reward: f64,
    /// Row 0 is the initial state (reward 0); row `k` follows action `k`.
    pub trajectory: Vec<TrajectoryRow>,
}

impl EpisodeResult {
    pub fn mean_time_gap(&self) -> f64 {
        let n = self.trajectory.len() as f64;
        self.trajectory.iter().map(|r| r.tgap).sum::<f64>() / n
    }
}

/// Roll out `controller` on `params` until collision or the horizon.
pub fn run_episode<C: Controller + ?Sized>(
    controller: &C,
    params: &ScenarioParams,
    cfg: &SimConfig,
) -> Result<EpisodeResult> {
    let (mut env, mut obs) = AccEnv::reset(params, cfg)?;
    let mut trajectory = Vec::with_capacity(cfg.horizon + 1);
    let row = |env: &AccEnv, ttc: f64, tgap: f64, reward: f64| TrajectoryRow {
        t: env.steps() as f64 * cfg.dt,
        x_ego: env.ego().x,
        v_ego: env.ego().v,
        a_ego: env.ego().a,
        x_mio: env.mio().x,
        v_mio: env.mio().v,
        d_mio: env.gap(),
        ttc,
        tgap,
        reward,
    };
    trajectory.push(row(&env, env.ttc(), env.time_gap(), 0.0));

    let mut min_ttc = env.ttc();
    let mut total_reward = 0.0;
    let mut collided = false;
    while !env.is_done() {
        let out = env.step(controller.act(&obs))?;
        total_reward += out.reward;
        min_ttc = min_ttc.min(out.ttc);
        collided = out.reason == Some(super::DoneReason::Collision);
        trajectory.push(row(&env, out.ttc, out.tgap, out.reward));
        obs = out.obs;
    }
    Ok(EpisodeResult {
        params: *params,
        min_ttc,
        collided,
        steps: env.steps(),
        total_reward,
        trajectory,
    })
}

/// Write a trajectory as CSV with [`TRAJECTORY_HEADER`].
///
/// Floats use the shortest representation that round-trips, which is never
/// fewer digits than the value carries.
pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.t, r.x_ego, r.v_ego, r.a_ego, r.x_mio, r.v_mio, r.d_mio, r.ttc, r.tgap, r.reward
        )?;
    }
    Ok(())
}
