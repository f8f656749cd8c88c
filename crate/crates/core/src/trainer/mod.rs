//! On-policy PPO training against the simulator.

mod adam;
mod advantage;
mod loss;

pub use adam::Adam;
pub use advantage::compute_advantages;
pub use loss::{gaussian_kl, ppo_loss, LossCoefficients, LossReport, LossSample};

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{NormObs, PolicyParams};
use crate::sim::{normalize_obs, AccEnv, DoneReason, ScenarioBounds, ScenarioParams, SimConfig};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepEnd {
    Continue,
    /// Episode ended for real (collision); bootstrap with zero.
    Terminal,
    /// Segment cut at the horizon or the batch boundary.
    Truncated { bootstrap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: NormObs,
    pub raw_action: f64,
    pub log_prob: f64,
    pub mean: f64,
    pub log_std: f64,
    pub reward: f64,
    pub value: f64,
    pub end: StepEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub clip: f64,
    pub kl_coeff: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub steps_per_generation: usize,
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub normalize_advantages: bool,
    /// Abort when the mean absolute weight exceeds this.
    pub max_mean_abs_weight: f64,
    /// Clamp each training reward to `[-c, c]`. The environment reward and
    /// the reported returns are not affected.
    pub reward_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lambda: 1.0,
            lr: 3e-4,
            clip: 0.2,
            kl_coeff: 0.01,
            value_coeff: 0.5,
            entropy_coeff: 0.0,
            steps_per_generation: 300_000,
            rollout_steps: 2048,
            epochs: 10,
            minibatch: 256,
            normalize_advantages: true,
            max_mean_abs_weight: 1e3,
            reward_clip: Some(1000.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.clip <= 0.0 || self.lr <= 0.0 {
            return Err(Error::Config("clip and lr must be positive".into()));
        }
        if matches!(self.reward_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("reward_clip must be positive".into()));
        }
        if self.rollout_steps == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::Config("rollout_steps, minibatch and epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip: self.clip,
            kl_coeff: self.kl_coeff,
            value_coeff: self.value_coeff,
            entropy_coeff: self.entropy_coeff,
        }
    }
}

/// Source of episode initial conditions.
pub trait ScenarioSampler {
    fn sample(&self, rng: &mut util::Rng) -> ScenarioParams;
}

/// I.i.d. uniform draws over the scenario bounds.
#[derive(Debug, Clone, Copy)]
pub struct UniformSampler(pub ScenarioBounds);

pub fn sample_uniform<R: Rng + ?Sized>(bounds: &ScenarioBounds, rng: &mut R) -> ScenarioParams {
    let [a, b, c, d] = bounds.as_array().map(|r| rng.random_range(r.lo..=r.hi));
    ScenarioParams::new(a, b, c, d)
}

impl ScenarioSampler for UniformSampler {
    fn sample(&self, rng: &mut util::Rng) -> ScenarioParams {
        sample_uniform(&self.0, rng)
    }
}

/// One line of the training metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub steps: usize,
    /// Mean undiscounted return of episodes finished in this batch.
    pub mean_return: Option<f64>,
    pub collision_rate: Option<f64>,
    pub episodes: usize,
    pub kl: f64,
    pub clip_frac: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<IterationMetrics>,
}

struct Rollout {
    env: AccEnv,
    obs: NormObs,
    episode_return: f64,
}

impl Rollout {
    fn start(sampler: &dyn ScenarioSampler, sim: &SimConfig, rng: &mut util::Rng) -> Result<Self> {
        let params = sampler.sample(rng);
        let (env, obs) = AccEnv::reset(&params, sim)?;
        Ok(Self {
            env,
            obs: normalize_obs(&obs),
            episode_return: 0.0,
        })
    }
}

#[derive(Default)]
struct BatchStats {
    returns: Vec<f64>,
    collisions: usize,
}

fn collect(
    policy: &PolicyParams,
    rollout: &mut Rollout,
    n_steps: usize,
    sampler: &dyn ScenarioSampler,
    sim: &SimConfig,
    reward_clip: Option<f64>,
    rng: &mut util::Rng,
) -> Result<(Vec<Transition>, BatchStats)> {
    let mut batch = Vec::with_capacity(n_steps);
    let mut stats = BatchStats::default();
    for k in 0..n_steps {
        let obs = rollout.obs;
        let sample = policy.sample_action(&obs, rng);
        let value = policy.critic_forward(&obs);
        let out = rollout.env.step(sample.action)?;
        rollout.episode_return += out.reward;
        let next_obs = normalize_obs(&out.obs);
        let end = match out.reason {
            Some(DoneReason::Collision) => StepEnd::Terminal,
            Some(DoneReason::Horizon) => StepEnd::Truncated {
                bootstrap: policy.critic_forward(&next_obs),
            },
            None if k + 1 == n_steps => StepEnd::Truncated {
                bootstrap: policy.critic_forward(&next_obs),
            },
            None => StepEnd::Continue,
        };
        batch.push(Transition {
            obs,
            raw_action: sample.raw,
            log_prob: sample.log_prob,
            mean: sample.mean,
            log_std: policy.log_std,
            reward: match reward_clip {
                Some(c) => out.reward.clamp(-c, c),
                None => out.reward,
            },
            value,
            end,
        });
        if out.done {
            stats.returns.push(rollout.episode_return);
            if out.reason == Some(DoneReason::Collision) {
                stats.collisions += 1;
            }
            *rollout = Rollout::start(sampler, sim, rng)?;
        } else {
            rollout.obs = next_obs;
        }
    }
    Ok((batch, stats))
}

fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

/// Train `initial` for `cfg.steps_per_generation` environment steps.
///
/// Each batch is collected by the current policy, then used for
/// `cfg.epochs` passes of shuffled minibatch updates and discarded.
pub fn train_generation(
    initial: &PolicyParams,
    sampler: &dyn ScenarioSampler,
    cfg: &TrainConfig,
    sim: &SimConfig,
    rng: &mut util::Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    initial.check_finite()?;
    let mut params = initial.clone();
    let mut metrics = Vec::new();
    if cfg.steps_per_generation == 0 {
        return Ok(TrainOutcome { params, metrics });
    }
    let mut opt = Adam::new(params.param_count(), cfg.lr);
    let coef = cfg.loss_coefficients();
    let mut rollout = Rollout::start(sampler, sim, rng)?;
    let mut steps = 0;
    let mut iter = 0;

    while steps < cfg.steps_per_generation {
        let n = cfg.rollout_steps.min(cfg.steps_per_generation - steps);
        let (batch, stats) = collect(&params, &mut rollout, n, sampler, sim, cfg.reward_clip, rng)?;
        steps += n;

        let (mut adv, returns) = compute_advantages(&batch, cfg.gamma, cfg.lambda)?;
        if cfg.normalize_advantages && adv.len() > 1 {
            normalize(&mut adv);
        }
        let samples: Vec<LossSample> = batch
            .iter()
            .zip(adv.iter().zip(&returns))
            .map(|(t, (a, r))| LossSample {
                obs: t.obs,
                raw_action: t.raw_action,
                old_log_prob: t.log_prob,
                old_mean: t.mean,
                old_log_std: t.log_std,
                advantage: *a,
                target_return: *r,
            })
            .collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        let mut last_epoch = LossReport::default();
        let mut last_epoch_batches = 0usize;
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch) {
                let mb: Vec<LossSample> = chunk.iter().map(|&i| samples[i]).collect();
                let (report, grad) = ppo_loss(&mb, &params, &coef)?;
                opt.step(&mut params, &grad)?;
                params.clamp_log_std();
                loss_sum += report.total;
                updates += 1;
                if epoch + 1 == cfg.epochs {
                    last_epoch.kl += report.kl;
                    last_epoch.clip_frac += report.clip_frac;
                    last_epoch_batches += 1;
                }
            }
        }
        params.check_finite()?;
        let maw = params.mean_abs_weight();
        if maw > cfg.max_mean_abs_weight {
            return Err(Error::Diverged(format!("mean |weight| {maw:.3e} exceeds limit")));
        }

        let episodes = stats.returns.len();
        let m = IterationMetrics {
            iter,
            steps,
            mean_return: (episodes > 0).then(|| stats.returns.iter().sum::<f64>() / episodes as f64),
            collision_rate: (episodes > 0).then(|| stats.collisions as f64 / episodes as f64),
            episodes,
            kl: last_epoch.kl / last_epoch_batches.max(1) as f64,
            clip_frac: last_epoch.clip_frac / last_epoch_batches.max(1) as f64,
            loss: loss_sum / updates.max(1) as f64,
        };
        debug!(
            "iter {} steps {} return {:?} collisions {:?} kl {:.4} clip {:.3}",
            m.iter, m.steps, m.mean_return, m.collision_rate, m.kl, m.clip_frac
        );
        metrics.push(m);
        iter += 1;
    }
    Ok(TrainOutcome { params, metrics })
}
