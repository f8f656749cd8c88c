use super::{check_tau, Algorithm, Diagnostics, EstimatorKind, Objective, RareEventEstimate, Recorder, SearchSpace};
use crate::error::{Error, Result};
use crate::util::Rng;

/// Plain Monte Carlo: `n` i.i.d. uniform draws, `p_hat` is the hit fraction.
pub fn monte_carlo(
    objective: &dyn Objective,
    space: &SearchSpace,
    n: usize,
    tau: f64,
    rng: &mut Rng,
) -> Result<RareEventEstimate> {
    check_tau(tau)?;
    if n == 0 {
        return Err(Error::InvalidArgument("monte carlo needs at least one sample".into()));
    }
    let mut rec = Recorder::new(objective, space, Algorithm::MonteCarlo);
    let mut hits = 0usize;
    for _ in 0..n {
        let u = space.sample_unit(rng);
        if rec.eval_unit(&u)?.value <= tau {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    let mut diag = Diagnostics::new(EstimatorKind::NaiveMonteCarlo);
    diag.std_error = Some((p * (1.0 - p) / n as f64).sqrt());
    Ok(rec.finish(p, tau, diag))
}
