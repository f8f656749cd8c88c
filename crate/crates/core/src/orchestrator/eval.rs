use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, StochasticPolicy};
use crate::sim::{run_episode, Controller, EpisodeResult, IdmController, ScenarioBounds, ScenarioParams, SimConfig};
use crate::trainer::sample_uniform;
use crate::util::rng_for;

/// RNG stream for the uniform evaluation scenarios of a seed.
pub const EVAL_STREAM: u64 = 300;
// action noise of stochastic evaluation; one stream per episode above this
const ACTION_STREAM_BASE: u64 = 1 << 32;

/// What drives the EGO vehicle during evaluation.
#[derive(Debug, Clone)]
pub enum EvalPolicy {
    Idm(IdmController),
    /// Actor mean, no noise.
    Greedy(PolicyParams),
    /// Sampled actions; the noise depends on the seed and episode index.
    Stochastic(PolicyParams),
}

impl EvalPolicy {
    pub fn from_params(params: PolicyParams, stochastic: bool) -> Self {
        if stochastic {
            EvalPolicy::Stochastic(params)
        } else {
            EvalPolicy::Greedy(params)
        }
    }

    pub(crate) fn episode(
        &self,
        params: &ScenarioParams,
        sim: &SimConfig,
        seed: u64,
        i: usize,
    ) -> Result<EpisodeResult> {
        match self {
            EvalPolicy::Idm(c) => run_episode(c, params, sim),
            EvalPolicy::Greedy(p) => run_episode(&p.greedy(), params, sim),
            EvalPolicy::Stochastic(p) => {
                let c = StochasticPolicy::new(p, rng_for(seed, ACTION_STREAM_BASE + i as u64));
                run_episode(&c as &dyn Controller, params, sim)
            }
        }
    }
}

/// One evaluated episode. Every aggregate in an [`EvalReport`] is computed
/// from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub label: String,
    pub seed: u64,
    pub i: usize,
    pub params: [f64; 4],
    pub collided: bool,
    pub min_ttc: f64,
    pub mean_tgap: f64,
    pub steps: usize,
    pub total_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Nearest-rank quantiles of a per-scenario metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Self {
            min: v[0],
            q10: q(0.1),
            q50: q(0.5),
            q90: q(0.9),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedCount {
    pub seed: u64,
    pub episodes: usize,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGroup {
    pub label: String,
    pub per_seed: Vec<SeedCount>,
    pub collisions: Spread,
    /// Per-seed collisions divided by the baseline group's mean.
    pub ratio: Option<Spread>,
    pub min_ttc: Quantiles,
    pub mean_tgap: Quantiles,
}

impl EvalGroup {
    /// Aggregate the records carrying `label`, seeds in first-seen order.
    pub fn from_records(label: &str, records: &[EpisodeRecord]) -> Result<Self> {
        let mine: Vec<&EpisodeRecord> = records.iter().filter(|r| r.label == label).collect();
        if mine.is_empty() {
            return Err(Error::InvalidArgument(format!("no episode records labelled `{label}`")));
        }
        let mut per_seed: Vec<SeedCount> = Vec::new();
        for r in &mine {
            let slot = match per_seed.iter().position(|s| s.seed == r.seed) {
                Some(k) => &mut per_seed[k],
                None => {
                    per_seed.push(SeedCount { seed: r.seed, episodes: 0, collisions: 0 });
                    per_seed.last_mut().unwrap()
                }
            };
            slot.episodes += 1;
            slot.collisions += r.collided as usize;
        }
        let counts: Vec<f64> = per_seed.iter().map(|s| s.collisions as f64).collect();
        let ttc: Vec<f64> = mine.iter().map(|r| r.min_ttc).collect();
        let tgap: Vec<f64> = mine.iter().map(|r| r.mean_tgap).collect();
        Ok(Self {
            label: label.to_string(),
            per_seed,
            collisions: Spread::of(&counts).unwrap(),
            ratio: None,
            min_ttc: Quantiles::of(&ttc).unwrap(),
            mean_tgap: Quantiles::of(&tgap).unwrap(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Label of the group whose mean collision count is the ratio unit.
    pub baseline: Option<String>,
    pub groups: Vec<EvalGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn new(groups: Vec<EvalGroup>, config_hash: Option<String>) -> Self {
        Self {
            config_hash,
            baseline: None,
            groups,
            warnings: Vec::new(),
        }
    }

    /// Express every group's collision counts relative to the mean of
    /// `baseline`, so the baseline's mean ratio is exactly 1.
    pub fn normalize(&mut self, baseline: &str) -> Result<()> {
        let base = self
            .groups
            .iter()
            .find(|g| g.label == baseline)
            .ok_or_else(|| Error::InvalidArgument(format!("no group labelled `{baseline}`")))?
            .collisions
            .mean;
        self.baseline = Some(baseline.to_string());
        if base == 0.0 {
            self.warnings
                .push(format!("baseline `{baseline}` has no collisions; ratios are undefined"));
            self.groups.iter_mut().for_each(|g| g.ratio = None);
            return Ok(());
        }
        for g in &mut self.groups {
            let r: Vec<f64> = g.per_seed.iter().map(|s| s.collisions as f64 / base).collect();
            g.ratio = Spread::of(&r);
        }
        Ok(())
    }

    pub fn group(&self, label: &str) -> Option<&EvalGroup> {
        self.groups.iter().find(|g| g.label == label)
    }
}

/// The `n` uniform evaluation scenarios belonging to `seed`.
pub fn uniform_scenarios(bounds: &ScenarioBounds, n: usize, seed: u64) -> Vec<ScenarioParams> {
    let mut rng = rng_for(seed, EVAL_STREAM);
    (0..n).map(|_| sample_uniform(bounds, &mut rng)).collect()
}

fn evaluate(
    policy: &EvalPolicy,
    label: &str,
    sim: &SimConfig,
    seeds: &[u64],
    scenarios_for: impl Fn(u64) -> Vec<ScenarioParams>,
) -> Result<(EvalGroup, Vec<EpisodeRecord>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let mut records = Vec::new();
    for &seed in seeds {
        for (i, p) in scenarios_for(seed).iter().enumerate() {
            let r = policy.episode(p, sim, seed, i)?;
            records.push(EpisodeRecord {
                label: label.to_string(),
                seed,
                i,
                params: p.to_array(),
                collided: r.collided,
                min_ttc: r.min_ttc,
                mean_tgap: r.mean_time_gap(),
                steps: r.steps,
                total_reward: r.total_reward,
                config_hash: None,
            });
        }
    }
    let group = EvalGroup::from_records(label, &records)?;
    Ok((group, records))
}

/// Run `n_scenarios` i.i.d. uniform episodes per seed.
pub fn evaluate_uniform(
    policy: &EvalPolicy,
    label: &str,
    sim: &SimConfig,
    n_scenarios: usize,
    seeds: &[u64],
) -> Result<(EvalGroup, Vec<EpisodeRecord>)> {
    if n_scenarios == 0 {
        return Err(Error::InvalidArgument("n_scenarios must be positive".into()));
    }
    evaluate(policy, label, sim, seeds, |s| uniform_scenarios(&sim.bounds, n_scenarios, s))
}

/// Run every suite scenario once per seed. With a deterministic policy all
/// seeds give the same counts.
pub fn evaluate_suite(
    policy: &EvalPolicy,
    label: &str,
    sim: &SimConfig,
    suite: &[ScenarioParams],
    seeds: &[u64],
) -> Result<(EvalGroup, Vec<EpisodeRecord>)> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument("scenario suite is empty".into()));
    }
    evaluate(policy, label, sim, seeds, |_| suite.to_vec())
}
