use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{gaussian_log_prob, NormObs, PolicyParams};

/// One training sample with everything recorded at collection time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub obs: NormObs,
    pub raw_action: f64,
    pub old_log_prob: f64,
    pub old_mean: f64,
    pub old_log_std: f64,
    pub advantage: f64,
    pub target_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip: f64,
    pub kl_coeff: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

/// `KL(old || new)` between two univariate Gaussians given by mean and log-std.
pub fn gaussian_kl(old_mean: f64, old_log_std: f64, mean: f64, log_std: f64) -> f64 {
    let var_ratio = (2.0 * (old_log_std - log_std)).exp();
    let d = (old_mean - mean) * (-log_std).exp();
    log_std - old_log_std + 0.5 * (var_ratio + d * d) - 0.5
}

/// Clipped surrogate loss plus value, KL and entropy terms, and its exact
/// gradient with respect to every policy parameter.
///
/// `loss = -mean(min(r A, clip(r, 1-ε, 1+ε) A)) + c_v mean((V - R)^2)
///         + β mean(KL(old || new)) - c_H H`
pub fn ppo_loss(
    batch: &[LossSample],
    params: &PolicyParams,
    coef: &LossCoefficients,
) -> Result<(LossReport, PolicyParams)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let obs: Vec<NormObs> = batch.iter().map(|s| s.obs).collect();
    let fwd = params.forward_batch(&obs);
    let ls = params.log_std;
    let inv_var = (-2.0 * ls).exp();

    let mut report = LossReport::default();
    let mut d_means = vec![0.0; n];
    let mut d_values = vec![0.0; n];
    let mut d_log_std = 0.0;
    let mut clipped = 0usize;

    for (i, s) in batch.iter().enumerate() {
        let mean = fwd.means[i];
        let logp = gaussian_log_prob(s.raw_action, mean, ls);
        let ratio = (logp - s.old_log_prob).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                what: "probability ratio",
                index: i,
            });
        }
        let lo = 1.0 - coef.clip;
        let hi = 1.0 + coef.clip;
        let unclipped = ratio * s.advantage;
        let clipped_obj = ratio.clamp(lo, hi) * s.advantage;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        // the gradient flows only through the unclipped branch when it is the minimum
        let d_ratio = if unclipped <= clipped_obj { s.advantage } else { 0.0 };
        report.policy -= unclipped.min(clipped_obj) * inv_n;

        // dL/dlogp = -(1/n) * dsurr/dr * r
        let d_logp = -inv_n * d_ratio * ratio;
        let resid = s.raw_action - mean;
        d_means[i] += d_logp * resid * inv_var;
        d_log_std += d_logp * (resid * resid * inv_var - 1.0);

        let kl = gaussian_kl(s.old_mean, s.old_log_std, mean, ls);
        report.kl += kl * inv_n;
        let w = coef.kl_coeff * inv_n;
        d_means[i] += w * (mean - s.old_mean) * inv_var;
        let old_var = (2.0 * s.old_log_std).exp();
        d_log_std += w * (1.0 - (old_var + (s.old_mean - mean).powi(2)) * inv_var);

        let err = fwd.values[i] - s.target_return;
        report.value += coef.value_coeff * err * err * inv_n;
        d_values[i] = 2.0 * coef.value_coeff * err * inv_n;
    }

    report.entropy = ls + HALF_LN_2PI_E;
    d_log_std -= coef.entropy_coeff;
    report.clip_frac = clipped as f64 * inv_n;
    report.total =
        report.policy + report.value + coef.kl_coeff * report.kl - coef.entropy_coeff * report.entropy;
    if !report.total.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {}", report.total)));
    }
    let grad = params.backward(&fwd, &d_means, &d_values, d_log_std)?;
    Ok((report, grad))
}
