//! Generation loop, evaluation harness and run configuration.

mod eval;
mod export;
mod run;
mod suite;

pub use eval::{
    evaluate_suite, evaluate_uniform, uniform_scenarios, EpisodeRecord, EvalGroup, EvalPolicy, EvalReport,
    Spread, EVAL_STREAM,
};
pub use export::{export_trajectories, IndexRecord};
pub use run::{
    chain_dir, gen_dir, initial_policy, read_verify_file, run_loop, train_stage, verify_policy, LoopOutcome,
    TrainMetricsLine, VerifyStage,
};
pub use suite::{build_risky_suite, is_unavoidable, read_suite, write_suite, RiskySuite, SuiteEntry, SuiteHeader};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::falsify::Algorithm;
use crate::sim::SimConfig;
use crate::trainer::TrainConfig;
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Keep verification samples with a minimum TTC strictly below this (s).
    pub tau_risk: f64,
    pub count: usize,
    /// Falsifiers whose samples are pooled.
    pub algorithms: Vec<Algorithm>,
    /// Drop scenarios where full braking from the first step still collides.
    pub exclude_unavoidable: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            tau_risk: 5.0,
            count: 1000,
            algorithms: vec![Algorithm::CrossEntropy, Algorithm::BayesOpt, Algorithm::Splitting],
            exclude_unavoidable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Falsifier used in the verification stage.
    pub algorithm: Algorithm,
    /// Generations after Generation-0.
    pub generations: usize,
    /// Evaluation budget per verification.
    pub n_verify: usize,
    /// Failure threshold on the episode minimum TTC (s).
    pub tau: f64,
    /// One independent training chain per seed. The seed also fixes that
    /// chain's uniform evaluation scenarios.
    pub seeds: Vec<u64>,
    pub n_eval_scenarios: usize,
    /// Evaluate with sampled actions instead of the actor mean.
    pub eval_stochastic: bool,
    /// Initial log standard deviation of a freshly initialized policy.
    pub init_log_std: f64,
    /// Replay only library entries with objective at or below `tau`.
    pub tau_filter: bool,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub suite: SuiteConfig,
    /// Output directory. Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RunConfig {
    /// Full-size protocol: 4 × 300K training steps, N = 8192, 7 seeds.
    pub fn paper() -> Self {
        Self {
            algorithm: Algorithm::Splitting,
            generations: 3,
            n_verify: 8192,
            tau: 2.0,
            seeds: (0..7).collect(),
            n_eval_scenarios: 500,
            eval_stochastic: false,
            init_log_std: -1.0,
            tau_filter: false,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            suite: SuiteConfig::default(),
            out: None,
        }
    }

    /// Small profile: 50K steps per generation, N = 512, 5 seeds.
    pub fn desk() -> Self {
        Self {
            n_verify: 512,
            seeds: (0..5).collect(),
            train: TrainConfig {
                steps_per_generation: 50_000,
                ..TrainConfig::default()
            },
            ..Self::paper()
        }
    }

    /// Profile defaults overlaid with the keys present in a TOML document.
    pub fn from_toml(text: &str, desk_scale: bool) -> Result<Self> {
        let base = if desk_scale { Self::desk() } else { Self::paper() };
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut value = serde_json::to_value(&base)?;
        merge(&mut value, serde_json::to_value(overlay)?);
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, desk_scale: bool) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text, desk_scale)
            }
            None => {
                let cfg = if desk_scale { Self::desk() } else { Self::paper() };
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.n_verify < 4 {
            return Err(Error::Config("n_verify must be at least 4".into()));
        }
        if self.n_eval_scenarios == 0 {
            return Err(Error::Config("n_eval_scenarios must be positive".into()));
        }
        if self.tau.is_nan() || self.suite.tau_risk.is_nan() {
            return Err(Error::Config("tau must be a number".into()));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::Config("init_log_std must be finite".into()));
        }
        self.sim.validate()?;
        self.train.validate()
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `out`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        // serde_json maps are ordered by key, so this is canonical
        util::sha256_hex(v.to_string().as_bytes())
    }

    /// Total environment steps one training chain consumes.
    pub fn steps_per_chain(&self) -> usize {
        (self.generations + 1) * self.train.steps_per_generation
    }
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
