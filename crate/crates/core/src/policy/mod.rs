//! Actor-critic network for the EGO vehicle.
//!
//! Both the actor and the critic are `5 -> 64 -> 64 -> 1` perceptrons with
//! ReLU hidden layers. The actor squashes its output with `tanh` to get the
//! mean of a Gaussian whose log standard deviation is a single learnable
//! scalar; samples are clamped to `[-1, 1]` before they reach the simulator
//! while the log-probability is evaluated on the unclamped draw.

mod io;
mod mlp;

pub use io::{load, read_from, save, write_to, FORMAT_VERSION, MAGIC};
pub use mlp::{Dense, ForwardCache, Mlp, OutputActivation};

use std::cell::RefCell;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{normalize_obs, Controller, Observation, OBS_DIM};

pub const HIDDEN: usize = 64;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub type NormObs = [f64; OBS_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    /// Action sent to the simulator, in `[-1, 1]`.
    pub action: f64,
    /// Unclamped Gaussian draw.
    pub raw: f64,
    pub log_prob: f64,
    pub mean: f64,
    pub std: f64,
}

/// Activations of one minibatch, kept for [`PolicyParams::backward`].
#[derive(Debug, Clone, Default)]
pub struct BatchForward {
    actor: Vec<ForwardCache>,
    critic: Vec<ForwardCache>,
    pub means: Vec<f64>,
    pub values: Vec<f64>,
}

fn sizes() -> [usize; 4] {
    [OBS_DIM, HIDDEN, HIDDEN, 1]
}

/// Log-density of `N(mean, exp(log_std)^2)` at `x`.
pub fn gaussian_log_prob(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - LN_SQRT_2PI
}

impl PolicyParams {
    /// Random init: orthogonal weights with gain 1 in hidden layers and 0.01
    /// on the output layers, zero biases, unit standard deviation.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            actor: Mlp::new(&sizes(), OutputActivation::Tanh, 1.0, 0.01, rng),
            critic: Mlp::new(&sizes(), OutputActivation::Identity, 1.0, 0.01, rng),
            log_std: 0.0,
        }
    }

    pub fn zeros() -> Self {
        Self {
            actor: Mlp::zeros(&sizes(), OutputActivation::Tanh),
            critic: Mlp::zeros(&sizes(), OutputActivation::Identity),
            log_std: 0.0,
        }
    }

    /// Same topology, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.params_mut().for_each(|p| *p = 0.0);
        z
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    pub fn actor_forward(&self, obs: &NormObs) -> (f64, f64) {
        (self.actor.forward(obs), self.std())
    }

    pub fn critic_forward(&self, obs: &NormObs) -> f64 {
        self.critic.forward(obs)
    }

    pub fn log_prob(&self, obs: &NormObs, raw_action: f64) -> f64 {
        gaussian_log_prob(raw_action, self.actor.forward(obs), self.log_std)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &NormObs, rng: &mut R) -> ActionSample {
        let (mean, std) = self.actor_forward(obs);
        let noise: f64 = rng.sample(StandardNormal);
        let raw = mean + std * noise;
        ActionSample {
            action: raw.clamp(-1.0, 1.0),
            raw,
            log_prob: gaussian_log_prob(raw, mean, self.log_std),
            mean,
            std,
        }
    }

    pub fn forward_batch(&self, obs: &[NormObs]) -> BatchForward {
        let mut fwd = BatchForward {
            actor: vec![ForwardCache::default(); obs.len()],
            critic: vec![ForwardCache::default(); obs.len()],
            means: Vec::with_capacity(obs.len()),
            values: Vec::with_capacity(obs.len()),
        };
        for (i, o) in obs.iter().enumerate() {
            fwd.means.push(self.actor.forward_cached(o, &mut fwd.actor[i]));
            fwd.values.push(self.critic.forward_cached(o, &mut fwd.critic[i]));
        }
        fwd
    }

    /// Reverse-mode gradient of a scalar loss given its partial derivatives
    /// with respect to each sample's actor mean and critic value, and with
    /// respect to the shared log standard deviation.
    pub fn backward(
        &self,
        fwd: &BatchForward,
        d_means: &[f64],
        d_values: &[f64],
        d_log_std: f64,
    ) -> Result<PolicyParams> {
        let n = fwd.means.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if d_means.len() != n || d_values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "batch of {n} but {} mean and {} value gradients",
                d_means.len(),
                d_values.len()
            )));
        }
        let mut grad = self.zeros_like();
        for i in 0..n {
            if d_means[i] != 0.0 {
                self.actor.backward(&fwd.actor[i], d_means[i], &mut grad.actor);
            }
            if d_values[i] != 0.0 {
                self.critic.backward(&fwd.critic[i], d_values[i], &mut grad.critic);
            }
        }
        grad.log_std = d_log_std;
        Ok(grad)
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count() + 1
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.actor
            .params()
            .chain(self.critic.params())
            .chain(std::iter::once(&self.log_std))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.actor
            .params_mut()
            .chain(self.critic.params_mut())
            .chain(std::iter::once(&mut self.log_std))
    }

    pub fn check_shape(&self, other: &PolicyParams) -> Result<()> {
        self.actor.check_shape(&other.actor)?;
        self.critic.check_shape(&other.critic)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params().position(|p| !p.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                what: "weight",
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }

    pub fn mean_abs_weight(&self) -> f64 {
        self.params().map(|p| p.abs()).sum::<f64>() / self.param_count() as f64
    }

    /// Hex SHA-256 of the serialized weights.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_to(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }

    /// Deterministic controller acting with the actor mean.
    pub fn greedy(&self) -> GreedyPolicy<'_> {
        GreedyPolicy(self)
    }
}

/// Evaluates a policy with its mean action (no exploration noise).
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a>(pub &'a PolicyParams);

impl Controller for GreedyPolicy<'_> {
    fn act(&self, obs: &Observation) -> f64 {
        self.0.actor.forward(&normalize_obs(obs))
    }
}

/// Samples from the policy distribution, like during training.
pub struct StochasticPolicy<'a> {
    pub params: &'a PolicyParams,
    rng: RefCell<crate::util::Rng>,
}

impl<'a> StochasticPolicy<'a> {
    pub fn new(params: &'a PolicyParams, rng: crate::util::Rng) -> Self {
        Self {
            params,
            rng: RefCell::new(rng),
        }
    }
}

impl Controller for StochasticPolicy<'_> {
    fn act(&self, obs: &Observation) -> f64 {
        self.params
            .sample_action(&normalize_obs(obs), &mut *self.rng.borrow_mut())
            .action
    }
}

impl Controller for PolicyParams {
    fn act(&self, obs: &Observation) -> f64 {
        self.actor.forward(&normalize_obs(obs))
    }
}
