use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::SuiteConfig;
use crate::error::{Error, Result};
use crate::falsify::{run_verification, Algorithm, PolicyObjective, SearchSpace, VerifyRecord};
use crate::policy::PolicyParams;
use crate::sim::{run_episode, FnController, Observation, ScenarioParams, SimConfig};
use crate::util::{self, rng_for, Rng};

/// RNG streams for suite construction start here.
const SUITE_STREAM: u64 = 400;

/// True when braking as hard as possible from the first step still ends in
/// a collision, so no controller could avoid it.
pub fn is_unavoidable(params: &ScenarioParams, sim: &SimConfig) -> Result<bool> {
    let brake = FnController(|_: &Observation| -1.0);
    Ok(run_episode(&brake, params, sim)?.collided)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub i: usize,
    pub params: [f64; 4],
    /// Minimum TTC seen by the falsifier that found the scenario.
    pub objective: f64,
    pub algo: Algorithm,
    /// Fingerprint of the policy under test when the scenario was found.
    pub policy_hash: String,
}

impl SuiteEntry {
    pub fn scenario(&self) -> ScenarioParams {
        let [a, b, c, d] = self.params;
        ScenarioParams::new(a, b, c, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteHeader {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub tau_risk: f64,
    pub requested: usize,
    pub count: usize,
    /// Qualifying samples before subsampling.
    pub pooled: usize,
    pub excluded_unavoidable: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskySuite {
    pub header: SuiteHeader,
    pub entries: Vec<SuiteEntry>,
}

impl RiskySuite {
    pub fn scenarios(&self) -> Vec<ScenarioParams> {
        self.entries.iter().map(SuiteEntry::scenario).collect()
    }

    /// Keep samples with objective below `cfg.tau_risk` and draw up to
    /// `cfg.count` of them uniformly without replacement, preserving pool
    /// order.
    pub fn select(
        pool: &[(VerifyRecord, String)],
        cfg: &SuiteConfig,
        sim: &SimConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut excluded = 0;
        let mut risky = Vec::new();
        for (r, hash) in pool {
            if !(r.objective < cfg.tau_risk) || !cfg.algorithms.contains(&r.algo) {
                continue;
            }
            let p = ScenarioParams::from_slice(&r.params)?;
            if cfg.exclude_unavoidable && is_unavoidable(&p, sim)? {
                excluded += 1;
                continue;
            }
            risky.push((r, hash));
        }
        let mut warnings = Vec::new();
        let picked: Vec<usize> = if risky.len() <= cfg.count {
            if risky.len() < cfg.count {
                let msg = format!("only {} qualifying scenarios for a suite of {}", risky.len(), cfg.count);
                warn!("{msg}");
                warnings.push(msg);
            }
            (0..risky.len()).collect()
        } else {
            let mut v = index::sample(rng, risky.len(), cfg.count).into_vec();
            v.sort_unstable();
            v
        };
        let entries = picked
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                let (r, hash) = risky[k];
                SuiteEntry {
                    i,
                    params: r.params,
                    objective: r.objective,
                    algo: r.algo,
                    policy_hash: hash.clone(),
                }
            })
            .collect::<Vec<_>>();
        Ok(Self {
            header: SuiteHeader {
                kind: "suite_header".into(),
                config_hash: None,
                tau_risk: cfg.tau_risk,
                requested: cfg.count,
                count: entries.len(),
                pooled: risky.len(),
                excluded_unavoidable: excluded,
                warnings,
            },
            entries,
        })
    }
}

/// Run every configured falsifier with budget `n_verify` and failure
/// threshold `tau` against each policy, then select the risky suite from
/// the pooled samples.
pub fn build_risky_suite(
    policies: &[PolicyParams],
    cfg: &SuiteConfig,
    n_verify: usize,
    tau: f64,
    sim: &SimConfig,
    seed: u64,
) -> Result<RiskySuite> {
    if policies.is_empty() {
        return Err(Error::InvalidArgument("at least one policy is required".into()));
    }
    let space = SearchSpace::scenario(&sim.bounds);
    let mut pool = Vec::new();
    let mut stream = SUITE_STREAM;
    for p in policies {
        let hash = p.fingerprint();
        let greedy = p.greedy();
        let objective = PolicyObjective { controller: &greedy, sim };
        for &algo in &cfg.algorithms {
            stream += 1;
            let est = run_verification(algo, &objective, &space, n_verify, tau, &mut rng_for(seed, stream))?;
            pool.extend(est.records(0)?.into_iter().map(|r| (r, hash.clone())));
        }
    }
    RiskySuite::select(&pool, cfg, sim, &mut rng_for(seed, SUITE_STREAM))
}

pub fn write_suite(suite: &RiskySuite, path: &Path) -> Result<()> {
    let mut out = util::to_jsonl([&suite.header])?;
    out.extend(util::to_jsonl(&suite.entries)?);
    util::write_atomic(path, &out)
}

pub fn read_suite(path: &Path) -> Result<RiskySuite> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, reason: String| Error::LibraryFormat {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let header: SuiteHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(l).map_err(|e| fail(1, e.to_string()))?,
        None => return Err(fail(1, "empty suite file".into())),
    };
    if header.kind != "suite_header" {
        return Err(fail(1, "missing suite header".into()));
    }
    let entries = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| serde_json::from_str(l).map_err(|e| fail(k + 1, e.to_string())))
        .collect::<Result<Vec<SuiteEntry>>>()?;
    if entries.len() != header.count {
        return Err(fail(1, format!("header declares {} entries, found {}", header.count, entries.len())));
    }
    Ok(RiskySuite { header, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, objective: f64, params: [f64; 4]) -> (VerifyRecord, String) {
        (
            VerifyRecord {
                algo: Algorithm::Splitting,
                gen: 0,
                i,
                params,
                objective,
                collided: objective == 0.0,
            },
            "h".into(),
        )
    }

    #[test]
    fn full_braking_screen() {
        let sim = SimConfig::default();
        // closing at 30 m/s from 10 m cannot be avoided at 4 m/s²
        assert!(is_unavoidable(&ScenarioParams::new(40.0, 10.0, 10.0, 10.0), &sim).unwrap());
        assert!(!is_unavoidable(&ScenarioParams::new(20.0, 100.0, 20.0, 20.0), &sim).unwrap());
    }

    #[test]
    fn selection_respects_threshold_and_count() {
        let sim = SimConfig::default();
        let pool: Vec<_> = (0..50).map(|i| rec(i, i as f64 * 0.2, [20.0, 60.0, 20.0, 20.0])).collect();
        let cfg = SuiteConfig {
            count: 10,
            exclude_unavoidable: false,
            ..Default::default()
        };
        let s = RiskySuite::select(&pool, &cfg, &sim, &mut rng_for(0, 0)).unwrap();
        assert_eq!(s.header.pooled, 25);
        assert_eq!(s.entries.len(), 10);
        assert!(s.entries.iter().all(|e| e.objective < 5.0));
        assert!(s.entries.windows(2).all(|w| w[0].objective < w[1].objective));
    }

    #[test]
    fn shortfall_and_empty_suites_warn() {
        let sim = SimConfig::default();
        let pool = vec![rec(0, 1.0, [20.0, 60.0, 20.0, 20.0]), rec(1, 9.0, [20.0, 60.0, 20.0, 20.0])];
        let s = RiskySuite::select(&pool, &SuiteConfig::default(), &sim, &mut rng_for(0, 0)).unwrap();
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.header.warnings.len(), 1);
        let none = RiskySuite::select(&pool[1..], &SuiteConfig::default(), &sim, &mut rng_for(0, 0)).unwrap();
        assert!(none.entries.is_empty());
        assert!(!none.header.warnings.is_empty());
    }

    #[test]
    fn unavoidable_samples_are_dropped() {
        let sim = SimConfig::default();
        let pool = vec![rec(0, 0.0, [40.0, 10.0, 10.0, 10.0]), rec(1, 1.0, [20.0, 60.0, 20.0, 20.0])];
        let s = RiskySuite::select(&pool, &SuiteConfig::default(), &sim, &mut rng_for(0, 0)).unwrap();
        assert_eq!(s.header.excluded_unavoidable, 1);
        assert_eq!(s.entries.len(), 1);
    }

    #[test]
    fn suite_file_round_trip() {
        let sim = SimConfig::default();
        let pool: Vec<_> = (0..5).map(|i| rec(i, 1.0, [20.0 + i as f64, 60.0, 20.0, 20.0])).collect();
        let mut s = RiskySuite::select(&pool, &SuiteConfig::default(), &sim, &mut rng_for(0, 0)).unwrap();
        s.header.config_hash = Some("abc".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.jsonl");
        write_suite(&s, &path).unwrap();
        assert_eq!(read_suite(&path).unwrap(), s);
    }

    #[test]
    fn built_suite_entries_are_risky_on_rerun() {
        let sim = SimConfig::default();
        let policy = PolicyParams::init(&mut rng_for(0, 0));
        let cfg = SuiteConfig { count: 30, ..Default::default() };
        let s = build_risky_suite(&[policy.clone()], &cfg, 64, 2.0, &sim, 1).unwrap();
        assert!(!s.entries.is_empty());
        for e in &s.entries {
            let r = run_episode(&policy.greedy(), &e.scenario(), &sim).unwrap();
            assert_eq!(r.min_ttc, e.objective);
            assert!(r.min_ttc < cfg.tau_risk);
        }
    }
}
