//! Black-box rare-event search over the scenario space.
//!
//! Every algorithm minimizes an [`Objective`] (for the driving task: the
//! episode minimum time-to-collision) over a box-shaped [`SearchSpace`]
//! and estimates `p_τ = P(F(x) <= τ)` under the uniform base distribution
//! on that box. The estimators differ in kind and the [`Diagnostics`] of
//! each result says which one produced `p_hat`:
//!
//! | algorithm | estimator |
//! |-----------|-----------|
//! | grid search | lattice fraction |
//! | Monte Carlo | sample mean of the indicator |
//! | cross-entropy | importance-weighted indicator under the final proposal |
//! | Bayesian optimization | indicator mean over adaptively chosen points (biased) |
//! | multilevel splitting | product of level survival fractions |

mod ams;
mod bo;
mod ce;
mod gp;
mod grid;
mod mc;
pub mod normal;
mod verify;

pub use ams::{ams, AmsConfig, AmsLevel};
pub use bo::{bayes_opt, expected_improvement, BoConfig};
pub use ce::{cross_entropy_search, CeConfig, CeDistribution, CeIteration};
pub use gp::{gp_fit, GpConfig, GpHyper, GpSurrogate};
pub use grid::grid_search;
pub use mc::monte_carlo;
pub use verify::{run_verification, PolicyObjective, VerifyRecord, VerifySummary};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Range, ScenarioBounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "GS", alias = "gs")]
    GridSearch,
    #[serde(rename = "MC", alias = "mc")]
    MonteCarlo,
    #[serde(rename = "CE", alias = "ce")]
    CrossEntropy,
    #[serde(rename = "BO", alias = "bo")]
    BayesOpt,
    #[serde(rename = "AMS", alias = "ams")]
    Splitting,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::GridSearch,
        Algorithm::MonteCarlo,
        Algorithm::CrossEntropy,
        Algorithm::BayesOpt,
        Algorithm::Splitting,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::GridSearch => "GS",
            Algorithm::MonteCarlo => "MC",
            Algorithm::CrossEntropy => "CE",
            Algorithm::BayesOpt => "BO",
            Algorithm::Splitting => "AMS",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gs" => Ok(Algorithm::GridSearch),
            "mc" => Ok(Algorithm::MonteCarlo),
            "ce" => Ok(Algorithm::CrossEntropy),
            "bo" => Ok(Algorithm::BayesOpt),
            "ams" => Ok(Algorithm::Splitting),
            _ => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{s}` (expected gs, mc, ce, bo or ams)"
            ))),
        }
    }
}

/// Axis-aligned box of admissible parameter vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub bounds: Vec<Range>,
}

impl SearchSpace {
    pub fn new(bounds: Vec<Range>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("search space needs at least one dimension".into()));
        }
        if let Some(i) = bounds.iter().position(|r| !(r.lo < r.hi)) {
            return Err(Error::InvalidArgument(format!("dimension {i}: lo must be < hi")));
        }
        Ok(Self { bounds })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            bounds: vec![Range::new(0.0, 1.0); dim],
        }
    }

    pub fn scenario(bounds: &ScenarioBounds) -> Self {
        Self {
            bounds: bounds.as_array().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(u, r)| r.lo + u * r.width())
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(x, r)| (x - r.lo) / r.width())
            .collect()
    }

    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(0.0..=1.0)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(x, r)| r.contains(*x))
    }
}

/// Outcome of one black-box evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    pub collided: bool,
}

pub trait Objective {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;
}

/// A plain function as an objective; never reports a collision.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Objective for FnObjective<F> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation {
            value: (self.0)(x),
            collided: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSample {
    pub x: Vec<f64>,
    pub objective: f64,
    pub collided: bool,
    pub algorithm: Algorithm,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    LatticeFraction,
    NaiveMonteCarlo,
    ImportanceSampling,
    ExplorationBiased,
    MultilevelSplitting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub estimator: EstimatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub levels: Vec<AmsLevel>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ce_trace: Vec<CeIteration>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl Diagnostics {
    fn new(estimator: EstimatorKind) -> Self {
        Self {
            estimator,
            std_error: None,
            levels: Vec::new(),
            ce_trace: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEventEstimate {
    pub algorithm: Algorithm,
    pub p_hat: f64,
    pub tau: f64,
    pub n_evals: usize,
    pub samples: Vec<EvaluatedSample>,
    pub diagnostics: Diagnostics,
}

impl RareEventEstimate {
    /// Objective value at quantile `q` of the sample set (nearest rank).
    pub fn objective_quantile(&self, q: f64) -> Option<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s.objective).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
        Some(v[k])
    }

    pub fn best(&self) -> Option<&EvaluatedSample> {
        self.samples.iter().min_by(|a, b| a.objective.total_cmp(&b.objective))
    }
}

/// Counts and records every objective call made by an algorithm.
pub(crate) struct Recorder<'a> {
    objective: &'a dyn Objective,
    space: &'a SearchSpace,
    algorithm: Algorithm,
    pub samples: Vec<EvaluatedSample>,
}

impl<'a> Recorder<'a> {
    pub fn new(objective: &'a dyn Objective, space: &'a SearchSpace, algorithm: Algorithm) -> Self {
        Self {
            objective,
            space,
            algorithm,
            samples: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Evaluate at unit-cube coordinates `u`.
    pub fn eval_unit(&mut self, u: &[f64]) -> Result<Evaluation> {
        let x = self.space.from_unit(u);
        self.eval(x)
    }

    pub fn eval(&mut self, x: Vec<f64>) -> Result<Evaluation> {
        let e = self.objective.evaluate(&x)?;
        self.samples.push(EvaluatedSample {
            x,
            objective: e.value,
            collided: e.collided,
            algorithm: self.algorithm,
            index: self.samples.len(),
        });
        Ok(e)
    }

    pub fn finish(self, p_hat: f64, tau: f64, diagnostics: Diagnostics) -> RareEventEstimate {
        RareEventEstimate {
            algorithm: self.algorithm,
            p_hat: p_hat.clamp(0.0, 1.0),
            tau,
            n_evals: self.samples.len(),
            samples: self.samples,
            diagnostics,
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() {
        return Err(Error::InvalidArgument("tau must not be NaN".into()));
    }
    Ok(())
}
