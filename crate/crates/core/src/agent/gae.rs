use crate::error::{Error, Result};

/// Advantages and regression targets for one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalised advantage estimation over a trajectory without terminations.
///
/// `values` has one more entry than `signals`: the bootstrap value (zero if
/// the trajectory ended in a terminal state).
pub fn gae(values: &[f64], signals: &[f64], gamma: f64, lambda: f64) -> Result<Estimates> {
    gae_with_dones(values, signals, &vec![false; signals.len()], gamma, lambda)
}

/// Like [`gae`], but `dones[t]` marks `t` as the last frame of an episode:
/// nothing is bootstrapped or accumulated across it.
pub fn gae_with_dones(
    values: &[f64],
    signals: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Estimates> {
    let len = signals.len();
    if values.len() != len + 1 {
        return Err(Error::Dimension {
            context: "GAE values",
            expected: len + 1,
            found: values.len(),
        });
    }
    if dones.len() != len {
        return Err(Error::Dimension {
            context: "GAE done flags",
            expected: len,
            found: dones.len(),
        });
    }
    let mut advantages = vec![0.0; len];
    let mut acc = 0.0;
    for t in (0..len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = signals[t] + gamma * values[t + 1] * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(Estimates { advantages, returns })
}
