use crate::error::{Error, Result};

use super::{StepEnd, Transition};

/// Generalized advantage estimation over an ordered batch.
///
/// Terminal steps bootstrap with zero, truncated steps with their stored
/// value estimate of the next state. With `lambda = 1` the advantage is the
/// discounted reward sum to the end of the segment plus the discounted
/// bootstrap, minus the value of the current state.
pub fn compute_advantages(
    transitions: &[Transition],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match transitions.last() {
        None => return Ok((Vec::new(), Vec::new())),
        Some(t) if t.end == StepEnd::Continue => return Err(Error::UnterminatedBatch),
        _ => {}
    }
    let n = transitions.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for i in (0..n).rev() {
        let t = &transitions[i];
        let (next_value, carry) = match t.end {
            StepEnd::Terminal => (0.0, 0.0),
            StepEnd::Truncated { bootstrap } => (bootstrap, 0.0),
            StepEnd::Continue => (transitions[i + 1].value, running),
        };
        let delta = t.reward + gamma * next_value - t.value;
        running = delta + gamma * lambda * carry;
        adv[i] = running;
    }
    let returns = adv.iter().zip(transitions).map(|(a, t)| a + t.value).collect();
    Ok((adv, returns))
}
