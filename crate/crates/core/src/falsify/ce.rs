use serde::{Deserialize, Serialize};

use super::normal;
use super::{check_tau, Algorithm, Diagnostics, EstimatorKind, Objective, RareEventEstimate, Recorder, SearchSpace};
use crate::error::{Error, Result};
use crate::util::Rng;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CeConfig {
    /// Total evaluation budget, split evenly across iterations.
    pub n_total: usize,
    pub iterations: usize,
    /// Elite fraction.
    pub rho: f64,
    /// Weight of the freshly fitted parameters in the smoothed update.
    pub smoothing: f64,
    /// Lower bound on each standard deviation, as a fraction of the axis width.
    pub min_std: f64,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self {
            n_total: 2000,
            iterations: 4,
            rho: 0.1,
            smoothing: 0.7,
            min_std: 0.01,
        }
    }
}

/// Product of independent normals truncated to the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CeDistribution {
    fn bounds(&self, d: usize) -> (f64, f64) {
        let a = (0.0 - self.mean[d]) / self.std[d];
        let b = (1.0 - self.mean[d]) / self.std[d];
        (a, b)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.mean.len())
            .map(|d| {
                let (a, b) = self.bounds(d);
                let (ca, cb) = (normal::cdf(a), normal::cdf(b));
                let u = ca + rng.random::<f64>() * (cb - ca);
                let z = normal::quantile(u).clamp(a, b);
                (self.mean[d] + self.std[d] * z).clamp(0.0, 1.0)
            })
            .collect()
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        (0..self.mean.len())
            .map(|d| {
                let (a, b) = self.bounds(d);
                let z = (u[d] - self.mean[d]) / self.std[d];
                let mass = normal::cdf(b) - normal::cdf(a);
                -0.5 * z * z + normal::INV_SQRT_2PI.ln() - self.std[d].ln() - mass.ln()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub iteration: usize,
    /// Intermediate level `max(tau, rho-quantile)`.
    pub gamma: f64,
    pub elites: usize,
    /// Proposal the batch was drawn from; `None` for the uniform first batch.
    pub proposal: Option<CeDistribution>,
}

/// Adaptive importance sampling with the cross-entropy method.
///
/// The first batch is drawn from the uniform base distribution. After each
/// batch a truncated diagonal Gaussian is fitted to the likelihood-ratio
/// weighted elites (`F <= gamma_t`) and blended with the previous one. The
/// returned `p_hat` is the importance-sampling estimate over the batches
/// whose proposal was fitted at level `tau`, or over the final batch if the
/// level was never reached.
pub fn cross_entropy_search(
    objective: &dyn Objective,
    space: &SearchSpace,
    cfg: &CeConfig,
    tau: f64,
    rng: &mut Rng,
) -> Result<RareEventEstimate> {
    check_tau(tau)?;
    if cfg.iterations == 0 || cfg.n_total < cfg.iterations * 2 {
        return Err(Error::InvalidArgument(
            "cross-entropy needs at least two samples per iteration".into(),
        ));
    }
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) || !(cfg.smoothing > 0.0 && cfg.smoothing <= 1.0) {
        return Err(Error::InvalidArgument("rho must be in (0,1) and smoothing in (0,1]".into()));
    }
    let dim = space.dim();
    let batch = cfg.n_total / cfg.iterations;
    let mut rec = Recorder::new(objective, space, Algorithm::CrossEntropy);
    let mut diag = Diagnostics::new(EstimatorKind::ImportanceSampling);

    let mut proposal: Option<CeDistribution> = None;
    let mut proposal_at_tau = false;
    // importance-weighted indicator sums for the estimate
    let mut tau_terms: Vec<f64> = Vec::new();
    let mut last_terms: Vec<f64> = Vec::new();

    for it in 0..cfg.iterations {
        let n = if it + 1 == cfg.iterations {
            cfg.n_total - batch * (cfg.iterations - 1)
        } else {
            batch
        };
        let mut us = Vec::with_capacity(n);
        let mut fs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for _ in 0..n {
            let u = match &proposal {
                None => space.sample_unit(rng),
                Some(q) => q.sample(rng),
            };
            let f = rec.eval_unit(&u)?.value;
            let w = match &proposal {
                None => 1.0,
                Some(q) => (-q.log_density(&u)).exp(),
            };
            us.push(u);
            fs.push(f);
            ws.push(w);
        }

        last_terms = fs
            .iter()
            .zip(&ws)
            .map(|(f, w)| if *f <= tau { *w } else { 0.0 })
            .collect();
        if proposal_at_tau {
            tau_terms.extend_from_slice(&last_terms);
        }

        let mut sorted = fs.clone();
        sorted.sort_by(f64::total_cmp);
        let k = ((cfg.rho * n as f64).ceil() as usize).clamp(1, n);
        let gamma = sorted[k - 1].max(tau);
        let elite: Vec<usize> = (0..n).filter(|&i| fs[i] <= gamma).collect();
        diag.ce_trace.push(CeIteration {
            iteration: it,
            gamma,
            elites: elite.len(),
            proposal: proposal.clone(),
        });
        if it + 1 == cfg.iterations {
            break;
        }

        let wsum: f64 = elite.iter().map(|&i| ws[i]).sum();
        if !(wsum > 0.0) || !wsum.is_finite() {
            diag.warnings.push(format!("iteration {it}: degenerate elite weights, proposal kept"));
            continue;
        }
        let prev = proposal.clone().unwrap_or(CeDistribution {
            mean: vec![0.5; dim],
            std: vec![1.0 / 12f64.sqrt(); dim],
        });
        let mut next = prev.clone();
        for d in 0..dim {
            let m = elite.iter().map(|&i| ws[i] * us[i][d]).sum::<f64>() / wsum;
            let v = elite.iter().map(|&i| ws[i] * (us[i][d] - m).powi(2)).sum::<f64>() / wsum;
            let a = cfg.smoothing;
            next.mean[d] = (a * m + (1.0 - a) * prev.mean[d]).clamp(0.0, 1.0);
            next.std[d] = (a * v.sqrt() + (1.0 - a) * prev.std[d]).max(cfg.min_std);
        }
        proposal = Some(next);
        proposal_at_tau = gamma <= tau;
    }

    let terms = if tau_terms.is_empty() { &last_terms } else { &tau_terms };
    let n = terms.len() as f64;
    let p = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - p).powi(2)).sum::<f64>() / n;
    diag.std_error = Some((var / n).sqrt());
    Ok(rec.finish(p, tau, diag))
}
