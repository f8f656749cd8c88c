use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalPolicy;
use crate::error::{Error, Result};
use crate::sim::{write_trajectory_csv, ScenarioParams, SimConfig};
use crate::util;

/// One line of `index.jsonl` next to the exported trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub i: usize,
    pub file: String,
    pub params: [f64; 4],
    pub collided: bool,
    pub min_ttc: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Simulate each scenario and write `traj_NNNN.csv` per scenario plus
/// `index.jsonl` into `dir`. Stochastic policies use seed 0.
pub fn export_trajectories(
    policy: &EvalPolicy,
    scenarios: &[ScenarioParams],
    sim: &SimConfig,
    dir: &Path,
    config_hash: Option<&str>,
) -> Result<Vec<IndexRecord>> {
    let mut index = Vec::with_capacity(scenarios.len());
    for (i, p) in scenarios.iter().enumerate() {
        p.validate(&sim.bounds)?;
        let r = policy.episode(p, sim, 0, i)?;
        let file = format!("traj_{i:04}.csv");
        let mut csv = Vec::new();
        write_trajectory_csv(&mut csv, &r.trajectory).map_err(|e| Error::io(dir.join(&file), e))?;
        util::write_atomic(&dir.join(&file), &csv)?;
        index.push(IndexRecord {
            i,
            file,
            params: p.to_array(),
            collided: r.collided,
            min_ttc: r.min_ttc,
            steps: r.steps,
            config_hash: config_hash.map(str::to_string),
        });
    }
    util::write_atomic(&dir.join("index.jsonl"), &util::to_jsonl(&index)?)?;
    Ok(index)
}
