use super::{check_tau, Algorithm, Diagnostics, EstimatorKind, Objective, RareEventEstimate, Recorder, SearchSpace};
use crate::error::{Error, Result};

/// Largest `p` with `p^dim <= budget`.
pub(crate) fn points_per_dim(budget: usize, dim: usize) -> usize {
    let mut p = (budget as f64).powf(1.0 / dim as f64).floor() as usize;
    while p > 0 && p.checked_pow(dim as u32).is_none_or(|n| n > budget) {
        p -= 1;
    }
    while (p + 1).checked_pow(dim as u32).is_some_and(|n| n <= budget) {
        p += 1;
    }
    p
}

/// Evaluate a full lattice with `points_per_dim` equally spaced values per
/// axis (endpoints included) and report the fraction of lattice points
/// with `F <= tau`. Refuses to start when the lattice exceeds `budget`.
pub fn grid_search(
    objective: &dyn Objective,
    space: &SearchSpace,
    points_per_dim: usize,
    tau: f64,
    budget: usize,
) -> Result<RareEventEstimate> {
    check_tau(tau)?;
    if points_per_dim < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per dimension".into()));
    }
    let total = (points_per_dim as u128).saturating_pow(space.dim() as u32);
    if total > budget as u128 {
        return Err(Error::BudgetExceeded {
            budget,
            requested: usize::try_from(total).unwrap_or(usize::MAX),
        });
    }
    let total = total as usize;
    let mut rec = Recorder::new(objective, space, Algorithm::GridSearch);
    let step = 1.0 / (points_per_dim - 1) as f64;
    let mut hits = 0usize;
    let mut idx = vec![0usize; space.dim()];
    for _ in 0..total {
        let u: Vec<f64> = idx.iter().map(|&k| k as f64 * step).collect();
        if rec.eval_unit(&u)?.value <= tau {
            hits += 1;
        }
        // odometer increment, first axis fastest
        for k in idx.iter_mut() {
            *k += 1;
            if *k < points_per_dim {
                break;
            }
            *k = 0;
        }
    }
    let p = hits as f64 / total as f64;
    Ok(rec.finish(p, tau, Diagnostics::new(EstimatorKind::LatticeFraction)))
}
