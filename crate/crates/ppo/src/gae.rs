use rock_core::{Error, Result};

/// Generalized advantage estimates for one trajectory segment.
///
/// `dones[t]` marks that the episode ended with step `t`, so nothing is
/// bootstrapped across it. `bootstrap` is the value of the state after the
/// last step. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::InputDomain(format!(
            "gae shapes differ: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// In-place standardization to zero mean and unit standard deviation over
/// the entries selected by `mask`. Unselected entries are set to zero.
pub fn normalize(xs: &mut [f64], mask: &[bool]) {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        xs.fill(0.0);
        return;
    }
    let selected = || xs.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x);
    let mean = selected().sum::<f64>() / count as f64;
    let var = selected().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
    let std = var.sqrt() + 1e-8;
    for (x, &m) in xs.iter_mut().zip(mask) {
        *x = if m { (*x - mean) / std } else { 0.0 };
    }
}
