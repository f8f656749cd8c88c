use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gp::GpHyper;
use super::normal;
use super::{
    check_tau, gp_fit, Algorithm, Diagnostics, EstimatorKind, GpConfig, GpSurrogate, Objective,
    RareEventEstimate, Recorder, SearchSpace,
};
use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub budget: usize,
    /// Latin-hypercube points evaluated before the first surrogate fit.
    pub n_init: usize,
    /// Uniform candidates scored per iteration.
    pub candidates: usize,
    /// Incumbents whose neighbourhoods are searched locally per iteration.
    pub local_starts: usize,
    /// Perturbations tried around each incumbent.
    pub local_samples: usize,
    /// Largest training set handed to the surrogate.
    pub max_gp_points: usize,
    /// Iterations between hyperparameter re-optimizations.
    pub refit_every: usize,
    pub gp: GpConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            n_init: 10,
            candidates: 2048,
            local_starts: 8,
            local_samples: 32,
            max_gp_points: 200,
            refit_every: 10,
            gp: GpConfig::default(),
        }
    }
}

/// Expected improvement below the incumbent `best` for a Gaussian
/// prediction with mean `mu` and standard deviation `sigma`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let imp = best - mu;
    if sigma <= 0.0 {
        return imp.max(0.0);
    }
    let z = imp / sigma;
    (imp * normal::cdf(z) + sigma * normal::pdf(z)).max(0.0)
}

fn latin_hypercube(n: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Indices of the training subset: the best half by objective plus the
/// most recent evaluations.
fn training_subset(fs: &[f64], cap: usize) -> Vec<usize> {
    if fs.len() <= cap {
        return (0..fs.len()).collect();
    }
    let mut order: Vec<usize> = (0..fs.len()).collect();
    order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
    let mut keep: Vec<usize> = order[..cap / 2].to_vec();
    let mut chosen = vec![false; fs.len()];
    keep.iter().for_each(|&i| chosen[i] = true);
    for i in (0..fs.len()).rev() {
        if keep.len() == cap {
            break;
        }
        if !chosen[i] {
            keep.push(i);
        }
    }
    keep.sort_unstable();
    keep
}

/// Sequential Bayesian optimization minimizing the objective with a GP
/// surrogate and expected improvement.
///
/// `p_hat` is the fraction of evaluated points with `F <= tau`. The points
/// are chosen adaptively, so this is an exploration statistic and not an
/// unbiased estimate of the base-distribution probability.
pub fn bayes_opt(
    objective: &dyn Objective,
    space: &SearchSpace,
    cfg: &BoConfig,
    tau: f64,
    rng: &mut Rng,
) -> Result<RareEventEstimate> {
    check_tau(tau)?;
    if cfg.budget == 0 {
        return Err(Error::InvalidArgument("bayesian optimization needs a positive budget".into()));
    }
    let dim = space.dim();
    let mut rec = Recorder::new(objective, space, Algorithm::BayesOpt);
    let mut diag = Diagnostics::new(EstimatorKind::ExplorationBiased);
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut fs: Vec<f64> = Vec::new();

    let n_init = cfg.n_init.clamp(2.min(cfg.budget), cfg.budget);
    for u in latin_hypercube(n_init, dim, rng) {
        fs.push(rec.eval_unit(&u)?.value);
        us.push(u);
    }

    let mut hyper: Option<GpHyper> = None;
    let mut since_refit = usize::MAX;
    let mut fallbacks = 0usize;
    while us.len() < cfg.budget {
        let idx = training_subset(&fs, cfg.max_gp_points);
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| us[i].clone()).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| fs[i]).collect();
        let fitted = if hyper.is_none() || since_refit >= cfg.refit_every {
            let gp_cfg = GpConfig {
                restarts: if hyper.is_none() { cfg.gp.restarts } else { 0 },
                ..cfg.gp
            };
            since_refit = 0;
            gp_fit(&xs, &ys, &gp_cfg, hyper.as_ref(), rng)
        } else {
            GpSurrogate::with_hyper(&xs, &ys, hyper.clone().unwrap(), &cfg.gp)
        };
        since_refit = since_refit.saturating_add(1);

        let next = match fitted {
            Ok(gp) => {
                hyper = Some(gp.hyper().clone());
                let best = fs.iter().copied().fold(f64::INFINITY, f64::min);
                propose(&gp, &us, &fs, best, dim, cfg, rng)
            }
            Err(e) => {
                fallbacks += 1;
                if fallbacks == 1 {
                    diag.warnings.push(format!("surrogate fit failed ({e}); sampling uniformly"));
                }
                None
            }
        };
        let u = next.unwrap_or_else(|| space.sample_unit(rng));
        fs.push(rec.eval_unit(&u)?.value);
        us.push(u);
    }
    if fallbacks > 1 {
        diag.warnings.push(format!("{fallbacks} iterations fell back to uniform sampling"));
    }
    let hits = fs.iter().filter(|f| **f <= tau).count();
    let p = hits as f64 / fs.len() as f64;
    Ok(rec.finish(p, tau, diag))
}

fn propose(
    gp: &GpSurrogate,
    us: &[Vec<f64>],
    fs: &[f64],
    best: f64,
    dim: usize,
    cfg: &BoConfig,
    rng: &mut Rng,
) -> Option<Vec<f64>> {
    let score = |u: &[f64]| {
        let (m, v) = gp.predict(u);
        expected_improvement(m, v.sqrt(), best)
    };
    let mut best_u: Option<Vec<f64>> = None;
    let mut best_ei = 0.0;
    let mut consider = |u: Vec<f64>, ei: f64| {
        if ei > best_ei && ei.is_finite() {
            best_ei = ei;
            best_u = Some(u);
        }
    };
    for _ in 0..cfg.candidates {
        let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let ei = score(&u);
        consider(u, ei);
    }
    let mut order: Vec<usize> = (0..fs.len()).collect();
    order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
    for &i in order.iter().take(cfg.local_starts) {
        for k in 0..cfg.local_samples {
            let radius = if k % 2 == 0 { 0.05 } else { 0.01 };
            let u: Vec<f64> = us[i]
                .iter()
                .map(|x| (x + radius * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect();
            let ei = score(&u);
            consider(u, ei);
        }
    }
    // a proposal on top of an existing point adds nothing
    best_u.filter(|u| {
        us.iter().all(|p| p.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 1e-18)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::falsify::FnObjective;
    use crate::sim::Range;
    use crate::util::rng_for;

    #[test]
    fn expected_improvement_closed_form() {
        // Φ(1) + φ(1)
        assert!((expected_improvement(-1.0, 1.0, 0.0) - 1.083_315_470_6).abs() < 1e-6);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
    }

    #[test]
    fn expected_improvement_monotone() {
        let mut last = 0.0;
        for k in 0..50 {
            let ei = expected_improvement(1.0 - 0.1 * k as f64, 0.3, 0.0);
            assert!(ei >= last);
            last = ei;
        }
    }

    #[test]
    fn lhs_hits_every_stratum() {
        let pts = latin_hypercube(10, 3, &mut rng_for(0, 0));
        for d in 0..3 {
            let mut s: Vec<usize> = pts.iter().map(|p| (p[d] * 10.0) as usize).collect();
            s.sort_unstable();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn subset_keeps_best_and_recent() {
        let fs: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        let idx = training_subset(&fs, 4);
        assert_eq!(idx.len(), 4);
        // two best (values 0 and 1 at i=0 and i=3), two most recent (9, 8)
        assert_eq!(idx, vec![0, 3, 8, 9]);
    }

    fn branin(x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let pi = std::f64::consts::PI;
        let b = 5.1 / (4.0 * pi * pi);
        let c = 5.0 / pi;
        let t = 1.0 / (8.0 * pi);
        (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
    }

    #[test]
    fn branin_minimum_found() {
        let space = SearchSpace::new(vec![Range::new(-5.0, 10.0), Range::new(0.0, 15.0)]).unwrap();
        let f = FnObjective(branin);
        let mut ok = 0;
        for seed in 0..5 {
            let r = bayes_opt(&f, &space, &BoConfig::default(), 1.0, &mut rng_for(seed, 0)).unwrap();
            assert_eq!(r.n_evals, 100);
            if r.best().unwrap().objective - 0.397_887 < 0.5 {
                ok += 1;
            }
        }
        assert!(ok >= 4, "{ok}/5 seeds reached the minimum");
    }
}
