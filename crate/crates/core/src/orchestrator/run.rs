//! The train → verify → store → retrain loop.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.json                 resolved config and its hash
//! report.json                 collision counts per generation, normalized to Generation-0
//! eval_idm.jsonl              IDM baseline episodes on the same scenarios
//! seed-<s>/library.jsonl      scenario library of that training chain
//! seed-<s>/gen-<k>/policy.bin
//! seed-<s>/gen-<k>/train_metrics.jsonl
//! seed-<s>/gen-<k>/eval_uniform.jsonl
//! seed-<s>/gen-<k>/verify.jsonl
//! ```
//!
//! Each file is written atomically once its stage is complete, so the set
//! of files present is the checkpoint. A rerun skips every stage whose
//! output exists and refuses to touch a directory made with another config.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{evaluate_uniform, EpisodeRecord, EvalGroup, EvalPolicy, EvalReport, RunConfig};
use crate::error::{Error, Result};
use crate::falsify::{run_verification, Algorithm, PolicyObjective, RareEventEstimate, SearchSpace, VerifyRecord, VerifySummary};
use crate::library::Library;
use crate::policy::{self, PolicyParams};
use crate::sim::IdmController;
use crate::trainer::{train_generation, IterationMetrics};
use crate::util::{self, rng_for};

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 100;
const VERIFY_STREAM: u64 = 200;

pub fn chain_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn gen_dir(out: &Path, seed: u64, gen: usize) -> PathBuf {
    chain_dir(out, seed).join(format!("gen-{gen}"))
}

/// One line of `train_metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetricsLine {
    #[serde(flatten)]
    pub metrics: IterationMetrics,
    pub seed: u64,
    pub gen: usize,
    pub config_hash: String,
}

/// Verification outcome of one generation of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyStage {
    pub seed: u64,
    pub gen: usize,
    pub algo: Algorithm,
    pub p_hat: f64,
    pub n: usize,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub config_hash: String,
    /// Groups `gen-0` … `gen-G` plus `idm`, ratios relative to `gen-0`.
    pub eval: EvalReport,
    pub verification: Vec<VerifyStage>,
}

impl LoopOutcome {
    /// Mean normalized collision ratio of generation `gen`.
    pub fn ratio(&self, gen: usize) -> Option<f64> {
        self.eval.group(&format!("gen-{gen}"))?.ratio.map(|r| r.mean)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    config_hash: String,
    config: RunConfig,
}

/// Verify a policy (greedy actions) with the configured falsifier.
pub fn verify_policy(params: &PolicyParams, cfg: &RunConfig, seed: u64, gen: usize) -> Result<RareEventEstimate> {
    let greedy = params.greedy();
    let objective = PolicyObjective {
        controller: &greedy,
        sim: &cfg.sim,
    };
    let space = SearchSpace::scenario(&cfg.sim.bounds);
    let mut rng = rng_for(seed, VERIFY_STREAM + gen as u64);
    run_verification(cfg.algorithm, &objective, &space, cfg.n_verify, cfg.tau, &mut rng)
}

/// Fresh policy of a chain: random weights, configured log std.
pub fn initial_policy(cfg: &RunConfig, seed: u64) -> PolicyParams {
    let mut p = PolicyParams::init(&mut rng_for(seed, INIT_STREAM));
    p.log_std = cfg.init_log_std;
    p.clamp_log_std();
    p
}

/// Train one generation from `init` on `library` and write its outputs.
pub fn train_stage(
    init: &PolicyParams,
    library: &Library,
    cfg: &RunConfig,
    seed: u64,
    gen: usize,
    dir: &Path,
    hash: &str,
) -> Result<PolicyParams> {
    let mut rng = rng_for(seed, TRAIN_STREAM + gen as u64);
    let outcome = train_generation(init, library, &cfg.train, &cfg.sim, &mut rng)?;
    let lines = outcome.metrics.into_iter().map(|metrics| TrainMetricsLine {
        metrics,
        seed,
        gen,
        config_hash: hash.to_string(),
    });
    util::write_atomic(&dir.join("train_metrics.jsonl"), &util::to_jsonl(lines)?)?;
    policy::save(&outcome.params, &dir.join("policy.bin"))?;
    Ok(outcome.params)
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Records and summary of a `verify.jsonl` file.
pub fn read_verify_file(path: &Path) -> Result<(Vec<VerifyRecord>, VerifySummary)> {
    let mut records = Vec::new();
    let mut summary = None;
    for v in read_jsonl::<serde_json::Value>(path)? {
        if v.get("kind").is_some() {
            summary = Some(serde_json::from_value(v)?);
        } else {
            records.push(serde_json::from_value(v)?);
        }
    }
    let summary = summary.ok_or_else(|| Error::Config(format!("{}: no summary line", path.display())))?;
    Ok((records, summary))
}

fn check_or_write_config(cfg: &RunConfig, hash: &str, out: &Path) -> Result<()> {
    let path = out.join("config.json");
    if path.exists() {
        let existing: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?,
        )?;
        if existing["config_hash"] != hash {
            return Err(Error::Config(format!(
                "{} holds a run with config hash {}, this config hashes to {hash}",
                out.display(),
                existing["config_hash"]
            )));
        }
        return Ok(());
    }
    let mut c = cfg.clone();
    c.out = None;
    let body = serde_json::to_vec_pretty(&ConfigFile {
        config_hash: hash.to_string(),
        config: c,
    })?;
    util::write_atomic(&path, &body)
}

fn run_chain(cfg: &RunConfig, hash: &str, out: &Path, seed: u64) -> Result<Vec<VerifyStage>> {
    let lib_path = chain_dir(out, seed).join("library.jsonl");
    let mut library = if lib_path.exists() {
        Library::open(&lib_path)?
    } else {
        let mut l = Library::new(cfg.sim.bounds);
        l.config_hash = Some(hash.to_string());
        l
    };
    if library.config_hash.as_deref() != Some(hash) {
        return Err(Error::Config(format!("{} was written by another config", lib_path.display())));
    }
    library.tau_filter = cfg.tau_filter.then_some(cfg.tau);

    let mut stages = Vec::new();
    let mut prev: Option<PolicyParams> = None;
    for gen in 0..=cfg.generations {
        let dir = gen_dir(out, seed, gen);
        let policy_path = dir.join("policy.bin");
        let params = if policy_path.exists() {
            policy::load(&policy_path)?
        } else {
            if library.num_generations() != gen {
                return Err(Error::GenerationGap {
                    expected: gen,
                    got: library.num_generations(),
                });
            }
            let init = match &prev {
                Some(p) => p.clone(),
                None => initial_policy(cfg, seed),
            };
            info!("seed {seed} gen {gen}: training {} steps", cfg.train.steps_per_generation);
            train_stage(&init, &library, cfg, seed, gen, &dir, hash)?
        };

        let eval_path = dir.join("eval_uniform.jsonl");
        if !eval_path.exists() {
            info!("seed {seed} gen {gen}: uniform evaluation");
            let pol = EvalPolicy::from_params(params.clone(), cfg.eval_stochastic);
            let (_, mut recs) = evaluate_uniform(&pol, &format!("gen-{gen}"), &cfg.sim, cfg.n_eval_scenarios, &[seed])?;
            recs.iter_mut().for_each(|r| r.config_hash = Some(hash.to_string()));
            util::write_atomic(&eval_path, &util::to_jsonl(&recs)?)?;
        }

        let verify_path = dir.join("verify.jsonl");
        if !verify_path.exists() {
            info!("seed {seed} gen {gen}: {} verification, N = {}", cfg.algorithm, cfg.n_verify);
            let est = verify_policy(&params, cfg, seed, gen)?;
            util::write_atomic(&verify_path, &est.to_jsonl(gen, Some(hash.to_string()))?)?;
        }
        let (records, summary) = read_verify_file(&verify_path)?;
        stages.push(VerifyStage {
            seed,
            gen,
            algo: summary.algo,
            p_hat: summary.p_hat,
            n: summary.n,
            collisions: summary.collisions,
        });

        if library.num_generations() == gen {
            library.add_generation(gen, cfg.algorithm, &params.fingerprint(), cfg.tau, records)?;
            library.append_last(&lib_path)?;
        }
        prev = Some(params);
    }
    Ok(stages)
}

/// Run every training chain, the IDM baseline, and write `report.json`.
pub fn run_loop(cfg: &RunConfig, out: &Path) -> Result<LoopOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    check_or_write_config(cfg, &hash, out)?;

    let mut verification = Vec::new();
    for &seed in &cfg.seeds {
        verification.extend(run_chain(cfg, &hash, out, seed)?);
    }

    let idm_path = out.join("eval_idm.jsonl");
    if !idm_path.exists() {
        let idm = EvalPolicy::Idm(IdmController::default());
        let (_, mut recs) = evaluate_uniform(&idm, "idm", &cfg.sim, cfg.n_eval_scenarios, &cfg.seeds)?;
        recs.iter_mut().for_each(|r| r.config_hash = Some(hash.clone()));
        util::write_atomic(&idm_path, &util::to_jsonl(&recs)?)?;
    }

    // aggregate only from the persisted episode records
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for gen in 0..=cfg.generations {
        for &seed in &cfg.seeds {
            records.extend(read_jsonl(&gen_dir(out, seed, gen).join("eval_uniform.jsonl"))?);
        }
    }
    records.extend(read_jsonl(&idm_path)?);
    let mut groups = (0..=cfg.generations)
        .map(|g| EvalGroup::from_records(&format!("gen-{g}"), &records))
        .collect::<Result<Vec<_>>>()?;
    groups.push(EvalGroup::from_records("idm", &records)?);
    let mut eval = EvalReport::new(groups, Some(hash.clone()));
    eval.normalize("gen-0")?;

    let outcome = LoopOutcome {
        config_hash: hash,
        eval,
        verification,
    };
    util::write_atomic(&out.join("report.json"), &serde_json::to_vec_pretty(&outcome)?)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::desk();
        c.generations = 1;
        c.seeds = vec![4];
        c.n_verify = 32;
        c.n_eval_scenarios = 10;
        c.train.steps_per_generation = 256;
        c.train.rollout_steps = 128;
        c.train.minibatch = 64;
        c.train.epochs = 1;
        c
    }

    #[test]
    fn loop_writes_every_stage_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let a = run_loop(&cfg, dir.path()).unwrap();
        assert_eq!(a.verification.len(), 2);
        assert_eq!(a.ratio(0), a.eval.group("gen-0").unwrap().ratio.map(|r| r.mean));
        let lib = Library::open(&chain_dir(dir.path(), 4).join("library.jsonl")).unwrap();
        assert_eq!(lib.num_generations(), 2);
        assert_eq!(lib.generations()[0].entries.len(), 32);

        // drop the last verification; a rerun redoes only that stage
        let g1 = gen_dir(dir.path(), 4, 1);
        let policy_before = fs::read(g1.join("policy.bin")).unwrap();
        let verify_before = fs::read(g1.join("verify.jsonl")).unwrap();
        fs::remove_file(g1.join("verify.jsonl")).unwrap();
        let metrics_mtime = fs::metadata(g1.join("train_metrics.jsonl")).unwrap().modified().unwrap();
        let b = run_loop(&cfg, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read(g1.join("policy.bin")).unwrap(), policy_before);
        assert_eq!(fs::read(g1.join("verify.jsonl")).unwrap(), verify_before);
        assert_eq!(fs::metadata(g1.join("train_metrics.jsonl")).unwrap().modified().unwrap(), metrics_mtime);
    }

    #[test]
    fn zero_generations_trains_and_verifies_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.generations = 0;
        let out = run_loop(&cfg, dir.path()).unwrap();
        assert_eq!(out.verification.len(), 1);
        assert!(!gen_dir(dir.path(), 4, 1).exists());
        assert_eq!(out.ratio(0).unwrap_or(1.0), 1.0);
    }

    #[test]
    fn mismatched_config_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.generations = 0;
        run_loop(&cfg, dir.path()).unwrap();
        cfg.tau = 3.0;
        assert!(matches!(run_loop(&cfg, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn metric_lines_carry_hash_and_spec_keys() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.generations = 0;
        let out = run_loop(&cfg, dir.path()).unwrap();
        let lines: Vec<serde_json::Value> = read_jsonl(&gen_dir(dir.path(), 4, 0).join("train_metrics.jsonl")).unwrap();
        assert_eq!(lines.len(), 2);
        for key in ["iter", "steps", "mean_return", "collision_rate", "kl", "clip_frac", "loss"] {
            assert!(lines[0].get(key).is_some(), "{key}");
        }
        assert_eq!(lines[0]["config_hash"], out.config_hash.as_str());
    }
}
