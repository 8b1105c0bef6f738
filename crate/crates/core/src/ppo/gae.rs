use crate::error::{Error, Result};

/// Generalized advantage estimation over one trajectory.
///
/// `values` carries one bootstrap entry past the last reward (0 after a
/// terminal step). Returns `(advantages, returns)` with
/// `returns = advantages + values[..n]`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::invalid(format!(
            "need {} values (rewards + bootstrap), got {}",
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut advantages = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}
