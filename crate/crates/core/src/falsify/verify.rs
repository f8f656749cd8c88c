use serde::{Deserialize, Serialize};

use super::{
    ams, bayes_opt, cross_entropy_search, grid::points_per_dim, grid_search, monte_carlo, Algorithm,
    AmsConfig, BoConfig, CeConfig, Diagnostics, Evaluation, Objective, RareEventEstimate, SearchSpace,
};
use crate::error::{Error, Result};
use crate::sim::{run_episode, Controller, ScenarioParams, SimConfig};
use crate::util::Rng;

/// Episode minimum TTC of a controller as a function of the scenario
/// parameters `(v_ego0, d_mio0, v_mio0, v_mio_target)`.
pub struct PolicyObjective<'a, C: ?Sized> {
    pub controller: &'a C,
    pub sim: &'a SimConfig,
}

impl<C: Controller + ?Sized> Objective for PolicyObjective<'_, C> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let params = ScenarioParams::from_slice(x)?;
        let r = run_episode(self.controller, &params, self.sim)?;
        Ok(Evaluation {
            value: r.min_ttc,
            collided: r.collided,
        })
    }
}

/// Run one algorithm with an evaluation budget of `n`.
///
/// Budget use per algorithm: grid search evaluates the largest full
/// lattice that fits in `n`; cross-entropy splits `n` over
/// `clamp(n / 128, 2, 8)` iterations; Bayesian optimization starts from
/// `clamp(n / 16, 4, 32)` Latin-hypercube points; splitting runs `n / 4`
/// walkers and spends whatever remains of `n` on further moves within the
/// last level. Monte Carlo and all the others return exactly `n` samples
/// except grid search, which returns the lattice size.
pub fn run_verification(
    algorithm: Algorithm,
    objective: &dyn Objective,
    space: &SearchSpace,
    n: usize,
    tau: f64,
    rng: &mut Rng,
) -> Result<RareEventEstimate> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("verification budget {n} is below 4")));
    }
    match algorithm {
        Algorithm::GridSearch => {
            let p = points_per_dim(n, space.dim());
            grid_search(objective, space, p, tau, n)
        }
        Algorithm::MonteCarlo => monte_carlo(objective, space, n, tau, rng),
        Algorithm::CrossEntropy => {
            let cfg = CeConfig {
                n_total: n,
                iterations: (n / 128).clamp(2, 8),
                ..Default::default()
            };
            cross_entropy_search(objective, space, &cfg, tau, rng)
        }
        Algorithm::BayesOpt => {
            let cfg = BoConfig {
                budget: n,
                n_init: (n / 16).clamp(4, 32),
                ..Default::default()
            };
            bayes_opt(objective, space, &cfg, tau, rng)
        }
        Algorithm::Splitting => {
            let cfg = AmsConfig {
                population: (n / 4).max(2),
                max_evals: Some(n),
                fill_budget: true,
                ..Default::default()
            };
            ams(objective, space, &cfg, tau, rng)
        }
    }
}

/// One line of a verification output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRecord {
    pub algo: Algorithm,
    pub gen: usize,
    pub i: usize,
    pub params: [f64; 4],
    pub objective: f64,
    pub collided: bool,
}

/// Closing line of a verification output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub kind: String,
    pub algo: Algorithm,
    pub gen: usize,
    pub p_hat: f64,
    pub tau: f64,
    pub n: usize,
    pub collisions: usize,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

impl RareEventEstimate {
    /// Per-sample records for scenario-space results.
    pub fn records(&self, gen: usize) -> Result<Vec<VerifyRecord>> {
        self.samples
            .iter()
            .map(|s| {
                let params: [f64; 4] = s.x.as_slice().try_into().map_err(|_| {
                    Error::ShapeMismatch(format!("expected 4 scenario parameters, got {}", s.x.len()))
                })?;
                Ok(VerifyRecord {
                    algo: s.algorithm,
                    gen,
                    i: s.index,
                    params,
                    objective: s.objective,
                    collided: s.collided,
                })
            })
            .collect()
    }

    pub fn summary(&self, gen: usize, config_hash: Option<String>) -> VerifySummary {
        VerifySummary {
            kind: "summary".into(),
            algo: self.algorithm,
            gen,
            p_hat: self.p_hat,
            tau: self.tau,
            n: self.n_evals,
            collisions: self.samples.iter().filter(|s| s.collided).count(),
            diagnostics: self.diagnostics.clone(),
            config_hash,
        }
    }

    /// Records followed by the summary, one JSON object per line.
    pub fn to_jsonl(&self, gen: usize, config_hash: Option<String>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for r in self.records(gen)? {
            serde_json::to_writer(&mut out, &r)?;
            out.push(b'\n');
        }
        serde_json::to_writer(&mut out, &self.summary(gen, config_hash))?;
        out.push(b'\n');
        Ok(out)
    }
}
