use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_tau, Algorithm, Diagnostics, EstimatorKind, Objective, RareEventEstimate, Recorder, SearchSpace};
use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmsConfig {
    /// Number of walkers.
    pub population: usize,
    /// Fraction of walkers discarded per level.
    pub discard: f64,
    pub max_levels: usize,
    /// Hard cap on objective evaluations, including the initial population.
    pub max_evals: Option<usize>,
    /// Largest proposal standard deviation, as a fraction of each axis width.
    pub max_step: f64,
    /// Smallest proposal standard deviation, same units.
    pub min_step: f64,
    /// Spend evaluations left under `max_evals` on extra moves inside the
    /// final level once the run has stopped.
    pub fill_budget: bool,
}

impl Default for AmsConfig {
    fn default() -> Self {
        Self {
            population: 1000,
            discard: 0.1,
            max_levels: 100,
            max_evals: None,
            max_step: 0.1,
            min_step: 1e-6,
            fill_budget: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmsLevel {
    pub threshold: f64,
    pub survival: f64,
    pub accepted: usize,
    pub proposed: usize,
}

struct Walker {
    u: Vec<f64>,
    f: f64,
}

/// Reflect `x` back into `[0, 1]`.
fn reflect(mut x: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > 1.0 {
            x = 2.0 - x;
        } else {
            return x;
        }
    }
}

/// Per-axis proposal scale: the survivors' spread, capped at `max_step`.
fn step_sizes(walkers: &[Walker], alive: &[usize], cfg: &AmsConfig, dim: usize) -> Vec<f64> {
    let n = alive.len() as f64;
    (0..dim)
        .map(|d| {
            let m = alive.iter().map(|&i| walkers[i].u[d]).sum::<f64>() / n;
            let v = alive.iter().map(|&i| (walkers[i].u[d] - m).powi(2)).sum::<f64>() / n;
            v.sqrt().clamp(cfg.min_step, cfg.max_step)
        })
        .collect()
}

fn propose(u: &[f64], step: &[f64], rng: &mut Rng) -> Vec<f64> {
    u.iter()
        .zip(step)
        .map(|(x, s)| {
            let z: f64 = StandardNormal.sample(rng);
            reflect(x + s * z)
        })
        .collect()
}

/// Adaptive multilevel splitting.
///
/// Each level sets `tau_j` to the objective of the `ceil(discard·N)`-th
/// worst walker, removes every walker with `F >= tau_j`, and resurrects the
/// removed ones as clones of random survivors followed by one Metropolis
/// move restricted to `{F < tau_j}`. The loop ends when `tau_j <= tau`, in
/// which case `p_hat = Π survival_j · mean(F <= tau)`, or when the level or
/// evaluation cap is hit, in which case the same product over the completed
/// levels is returned with a warning that the estimate is partial.
pub fn ams(
    objective: &dyn Objective,
    space: &SearchSpace,
    cfg: &AmsConfig,
    tau: f64,
    rng: &mut Rng,
) -> Result<RareEventEstimate> {
    check_tau(tau)?;
    let n = cfg.population;
    if n < 2 {
        return Err(Error::InvalidArgument("splitting needs at least two walkers".into()));
    }
    if !(cfg.discard > 0.0 && cfg.discard < 1.0) {
        return Err(Error::InvalidArgument("discard fraction must be in (0, 1)".into()));
    }
    if let Some(m) = cfg.max_evals {
        if m < n {
            return Err(Error::BudgetExceeded { budget: m, requested: n });
        }
    }
    let budget = cfg.max_evals.unwrap_or(usize::MAX);
    let dim = space.dim();
    let mut rec = Recorder::new(objective, space, Algorithm::Splitting);
    let mut diag = Diagnostics::new(EstimatorKind::MultilevelSplitting);

    let mut walkers = Vec::with_capacity(n);
    for _ in 0..n {
        let u = space.sample_unit(rng);
        let f = rec.eval_unit(&u)?.value;
        walkers.push(Walker { u, f });
    }

    let k = ((cfg.discard * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut log_p = 0.0;
    let mut reached = false;
    let mut last_level = f64::INFINITY;
    loop {
        let mut sorted: Vec<f64> = walkers.iter().map(|w| w.f).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let level = sorted[k - 1];
        if level <= tau {
            reached = true;
            break;
        }
        if diag.levels.len() == cfg.max_levels {
            diag.warnings.push(format!("stopped at the level cap ({}) above tau", cfg.max_levels));
            break;
        }
        let alive: Vec<usize> = (0..n).filter(|&i| walkers[i].f < level).collect();
        let dead: Vec<usize> = (0..n).filter(|&i| walkers[i].f >= level).collect();
        if alive.is_empty() {
            diag.warnings.push(format!("no walker below level {level}; objective is flat"));
            log_p = f64::NEG_INFINITY;
            break;
        }
        if rec.count() + dead.len() > budget {
            diag.warnings.push("evaluation budget exhausted above tau".into());
            break;
        }
        let step = step_sizes(&walkers, &alive, cfg, dim);
        let mut accepted = 0;
        for &i in &dead {
            let j = alive[rng.random_range(0..alive.len())];
            let start = walkers[j].u.clone();
            let start_f = walkers[j].f;
            let y = propose(&start, &step, rng);
            let fy = rec.eval_unit(&y)?.value;
            walkers[i] = if fy < level {
                accepted += 1;
                Walker { u: y, f: fy }
            } else {
                Walker { u: start, f: start_f }
            };
        }
        if accepted == 0 && walkers.iter().all(|w| w.u == walkers[0].u) {
            return Err(Error::DegeneratePopulation(diag.levels.len()));
        }
        let survival = alive.len() as f64 / n as f64;
        log_p += survival.ln();
        last_level = level;
        diag.levels.push(AmsLevel {
            threshold: level,
            survival,
            accepted,
            proposed: dead.len(),
        });
    }

    let frac = walkers.iter().filter(|w| w.f <= tau).count() as f64 / n as f64;
    let p = log_p.exp() * frac;
    if !reached {
        diag.warnings.push(format!("final level {last_level} is above tau; estimate is partial"));
    }

    if cfg.fill_budget {
        let step = step_sizes(&walkers, &(0..n).collect::<Vec<_>>(), cfg, dim);
        let mut i = 0;
        while rec.count() < budget {
            let y = propose(&walkers[i].u, &step, rng);
            let fy = rec.eval_unit(&y)?.value;
            if fy < last_level {
                walkers[i] = Walker { u: y, f: fy };
            }
            i = (i + 1) % n;
        }
    }
    Ok(rec.finish(p, tau, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::falsify::{monte_carlo, normal, FnObjective};
    use crate::util::rng_for;

    fn tail() -> FnObjective<impl Fn(&[f64]) -> f64> {
        FnObjective(|u: &[f64]| -normal::quantile(u[0]))
    }

    #[test]
    fn reflection_stays_in_unit_interval() {
        for x in [-2.3, -0.1, 0.0, 0.4, 1.0, 1.7, 3.2] {
            assert!((0.0..=1.0).contains(&reflect(x)));
        }
        assert!((reflect(-0.25) - 0.25).abs() < 1e-15);
        assert!((reflect(1.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn moderate_tail_estimate() {
        let r = ams(&tail(), &SearchSpace::unit(1), &AmsConfig::default(), -2.0, &mut rng_for(0, 0))
            .unwrap();
        let truth = normal::sf(2.0);
        assert!((r.p_hat / truth - 1.0).abs() < 0.3, "{} vs {truth}", r.p_hat);
        assert!(r.diagnostics.levels.iter().all(|l| l.survival == 0.9));
        // levels strictly decrease
        assert!(r.diagnostics.levels.windows(2).all(|w| w[1].threshold < w[0].threshold));
    }

    #[test]
    fn four_sigma_tail_beats_equal_budget_monte_carlo() {
        let truth = normal::sf(4.0);
        let r = ams(&tail(), &SearchSpace::unit(1), &AmsConfig::default(), -4.0, &mut rng_for(1, 0))
            .unwrap();
        assert!(r.p_hat / truth > 1.0 / 3.0 && r.p_hat / truth < 3.0, "{}", r.p_hat);
        let mc = monte_carlo(&tail(), &SearchSpace::unit(1), r.n_evals, -4.0, &mut rng_for(1, 1)).unwrap();
        assert!(mc.p_hat == 0.0 || mc.p_hat > 3.0 * truth || mc.p_hat < truth / 3.0);
    }

    #[test]
    fn budget_cap_is_respected_and_filled() {
        let cfg = AmsConfig {
            population: 64,
            max_evals: Some(400),
            fill_budget: true,
            ..Default::default()
        };
        let r = ams(&tail(), &SearchSpace::unit(1), &cfg, -6.0, &mut rng_for(2, 0)).unwrap();
        assert_eq!(r.n_evals, 400);
        assert!(!r.diagnostics.warnings.is_empty());
    }

    #[test]
    fn flat_objective_gives_zero() {
        let f = FnObjective(|_: &[f64]| 1.0);
        let r = ams(&f, &SearchSpace::unit(2), &AmsConfig { population: 20, ..Default::default() }, 0.0, &mut rng_for(0, 0))
            .unwrap();
        assert_eq!(r.p_hat, 0.0);
        assert_eq!(r.n_evals, 20);
    }

    #[test]
    fn easy_event_needs_no_levels() {
        let f = FnObjective(|u: &[f64]| u[0]);
        let r = ams(&f, &SearchSpace::unit(1), &AmsConfig::default(), 0.95, &mut rng_for(3, 0)).unwrap();
        assert!(r.diagnostics.levels.is_empty());
        assert!((r.p_hat - 0.95).abs() < 0.03);
    }
}
