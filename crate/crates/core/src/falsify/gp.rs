use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Random restarts of the hyperparameter search beyond the default start.
    pub restarts: usize,
    /// Initial diagonal jitter; multiplied by 10 on each failed factorization.
    pub jitter: f64,
    pub max_jitter: f64,
    /// Likelihood evaluations allowed per start.
    pub max_lml_evals: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            jitter: 1e-8,
            max_jitter: 1e-2,
            max_lml_evals: 120,
        }
    }
}

/// Log-scale kernel hyperparameters: ARD length-scales, signal variance and
/// noise variance, all for standardized targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_length: Vec<f64>,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL: (f64, f64) = (-4.6, 4.6);
const LOG_NOISE: (f64, f64) = (-18.4, 0.0);

impl GpHyper {
    fn default_for(dim: usize) -> Self {
        Self {
            log_length: vec![(0.3f64).ln(); dim],
            log_signal_var: 0.0,
            log_noise_var: (1e-4f64).ln(),
        }
    }

    fn random(dim: usize, rng: &mut Rng) -> Self {
        Self {
            log_length: (0..dim).map(|_| rng.random_range(-3.0..0.5)).collect(),
            log_signal_var: rng.random_range(-1.0..1.0),
            log_noise_var: rng.random_range(-14.0..-4.0),
        }
    }

    fn as_vec(&self) -> Vec<f64> {
        let mut v = self.log_length.clone();
        v.push(self.log_signal_var);
        v.push(self.log_noise_var);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            log_length: v[..d].to_vec(),
            log_signal_var: v[d],
            log_noise_var: v[d + 1],
        }
    }

    fn clamp_coord(k: usize, dim: usize, x: f64) -> f64 {
        let (lo, hi) = if k < dim {
            LOG_LENGTH
        } else if k == dim {
            LOG_SIGNAL
        } else {
            LOG_NOISE
        };
        x.clamp(lo, hi)
    }
}

/// Gaussian-process regression with a squared-exponential ARD kernel.
///
/// Inputs are expected in the unit cube; targets are standardized
/// internally and predictions are returned on the original scale.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    xs: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    hyper: GpHyper,
    inv_len2: Vec<f64>,
    signal_var: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
    jitter_used: f64,
}

fn kernel(a: &[f64], b: &[f64], inv_len2: &[f64], signal_var: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(inv_len2).map(|((a, b), w)| (a - b).powi(2) * w).sum();
    signal_var * (-0.5 * r2).exp()
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
    jitter: f64,
}

fn factor(xs: &[Vec<f64>], y: &DVector<f64>, h: &GpHyper, cfg: &GpConfig) -> Result<Factor> {
    let n = xs.len();
    let inv_len2: Vec<f64> = h.log_length.iter().map(|l| (-2.0 * l).exp()).collect();
    let sf2 = h.log_signal_var.exp();
    let sn2 = h.log_noise_var.exp();
    let mut k = DMatrix::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j], &inv_len2, sf2));
    for i in 0..n {
        k[(i, i)] += sn2;
    }
    let mut jitter = cfg.jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            let alpha = chol.solve(y);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            if lml.is_finite() {
                return Ok(Factor { chol, alpha, lml, jitter });
            }
        }
        jitter *= 10.0;
        if jitter > cfg.max_jitter {
            return Err(Error::SingularCovariance(jitter / 10.0));
        }
    }
}

/// Fit a GP to `(xs, ys)`, choosing hyperparameters by maximizing the log
/// marginal likelihood with coordinate ascent in log space from a default
/// start, an optional warm start and `cfg.restarts` random starts.
pub fn gp_fit(
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &GpConfig,
    warm_start: Option<&GpHyper>,
    rng: &mut Rng,
) -> Result<GpSurrogate> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("gp needs at least two paired samples".into()));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::ShapeMismatch("gp inputs of differing dimension".into()));
    }
    if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFinite { what: "gp target", index: i });
    }
    let (y_mean, y_std, y) = standardize(ys);

    let mut starts = vec![warm_start.cloned().unwrap_or_else(|| GpHyper::default_for(dim))];
    for _ in 0..cfg.restarts {
        starts.push(GpHyper::random(dim, rng));
    }
    let mut best: Option<(GpHyper, Factor)> = None;
    for start in starts {
        let Some((h, f)) = ascend(xs, &y, start, cfg) else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, b)| f.lml > b.lml) {
            best = Some((h, f));
        }
    }
    let (hyper, f) = best.ok_or(Error::SingularCovariance(cfg.max_jitter))?;
    Ok(GpSurrogate::assemble(xs, y_mean, y_std, hyper, f))
}

fn standardize(ys: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
    (mean, std, DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - mean) / std)))
}

fn ascend(
    xs: &[Vec<f64>],
    y: &DVector<f64>,
    start: GpHyper,
    cfg: &GpConfig,
) -> Option<(GpHyper, Factor)> {
    let dim = start.log_length.len();
    let mut theta = start.as_vec();
    for (k, t) in theta.iter_mut().enumerate() {
        *t = GpHyper::clamp_coord(k, dim, *t);
    }
    let mut cur = factor(xs, y, &GpHyper::from_vec(&theta), cfg).ok()?;
    let mut evals = 1;
    let mut step = 1.0;
    while step > 0.05 && evals < cfg.max_lml_evals {
        let mut improved = false;
        for k in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let mut trial = theta.clone();
                trial[k] = GpHyper::clamp_coord(k, dim, trial[k] + dir * step);
                if trial[k] == theta[k] {
                    continue;
                }
                evals += 1;
                if let Ok(f) = factor(xs, y, &GpHyper::from_vec(&trial), cfg) {
                    if f.lml > cur.lml + 1e-9 {
                        theta = trial;
                        cur = f;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some((GpHyper::from_vec(&theta), cur))
}

impl GpSurrogate {
    /// Condition on `(xs, ys)` with fixed hyperparameters.
    pub fn with_hyper(xs: &[Vec<f64>], ys: &[f64], hyper: GpHyper, cfg: &GpConfig) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::InvalidArgument("gp needs paired samples".into()));
        }
        let (y_mean, y_std, y) = standardize(ys);
        let f = factor(xs, &y, &hyper, cfg)?;
        Ok(Self::assemble(xs, y_mean, y_std, hyper, f))
    }

    fn assemble(xs: &[Vec<f64>], y_mean: f64, y_std: f64, hyper: GpHyper, f: Factor) -> Self {
        Self {
            xs: xs.to_vec(),
            y_mean,
            y_std,
            inv_len2: hyper.log_length.iter().map(|l| (-2.0 * l).exp()).collect(),
            signal_var: hyper.log_signal_var.exp(),
            hyper,
            chol: f.chol,
            alpha: f.alpha,
            log_marginal_likelihood: f.lml,
            jitter_used: f.jitter,
        }
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Prior variance of the latent function on the original scale.
    pub fn signal_variance(&self) -> f64 {
        self.signal_var * self.y_std * self.y_std
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| kernel(x, xi, &self.inv_len2, self.signal_var)),
        );
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (self.signal_var - v.norm_squared()).max(0.0);
        (
            self.y_mean + self.y_std * mean,
            var * self.y_std * self.y_std,
        )
    }
}
