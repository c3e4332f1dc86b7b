//! Value, policy and entropy losses over a batch of observation records,
//! with their exact gradient.

use serde::{Deserialize, Serialize};

use crate::mdp::{ActionDistribution, STATE_DIM};

use super::network::{backward as net_backward, forward, Carry, Params};
use super::LearnerError;

/// Floor applied to π(a) before taking its log.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

/// One decision `w = (a, R, v, Ψ)` plus the inputs and fixed targets the
/// losses need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    /// `[s_v, s_v′]`, with zeros standing in for a missing successor.
    pub inputs: [[f64; STATE_DIM]; 2],
    /// Ψ before this decision.
    pub carry: Carry,
    pub action: usize,
    pub reward: f64,
    /// Discounted return from this session onward.
    pub discounted_return: f64,
    pub session_index: usize,
    /// Bootstrapped target `r + γ V(next)`.
    pub target: f64,
    /// TD advantage Λ, a constant with respect to the parameters.
    pub advantage: f64,
}

/// `Q − V`.
pub fn td_advantage(q_estimate: f64, value: f64) -> f64 {
    q_estimate - value
}

/// Bootstrapped target; `None` for the terminal session.
pub fn td_target(reward: f64, gamma: f64, next_value: Option<f64>) -> f64 {
    reward + gamma * next_value.unwrap_or(0.0)
}

pub fn policy_entropy(dist: &ActionDistribution) -> f64 {
    [dist.schedule, dist.queue]
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub value: f64,
    pub policy: f64,
    /// Mean policy entropy (the loss carries it with weight −β).
    pub entropy: f64,
    pub total: f64,
}

/// Which terms enter the differentiated objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub value: f64,
    pub policy: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn total(beta: f64) -> Self {
        LossWeights { value: 1.0, policy: 1.0, beta }
    }
}

fn log_prob(p: f64) -> (f64, bool) {
    if p < LOG_PROB_FLOOR {
        log::debug!("action probability {p:e} clamped to {LOG_PROB_FLOOR:e}");
        (LOG_PROB_FLOOR.ln(), true)
    } else {
        (p.ln(), false)
    }
}

/// Losses and, when `grad` is given, `∂(weighted total)/∂θ` accumulated into it.
///
/// `value = ½ mean (y − V)²`, `policy = −mean Λ log π(a)`,
/// `entropy = mean H(π)`, `total = w_v·value + w_p·policy − β·entropy`.
pub fn evaluate(
    params: &Params,
    batch: &[ObservationRecord],
    weights: LossWeights,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown, LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut out = LossBreakdown::default();
    for rec in batch {
        let fwd = forward(params, &rec.inputs, &rec.carry)?;
        let p = [fwd.dist.schedule, fwd.dist.queue];
        let residual = fwd.value - rec.target;
        out.value += 0.5 * residual * residual / n;
        let (lp, clamped) = log_prob(p[rec.action]);
        out.policy -= rec.advantage * lp / n;
        let h = policy_entropy(&fwd.dist);
        out.entropy += h / n;

        if let Some(g) = grad.as_deref_mut() {
            let dvalue = weights.value * residual / n;
            let mut dlogits = [0.0; 2];
            for k in 0..2 {
                if !clamped {
                    let onehot = if k == rec.action { 1.0 } else { 0.0 };
                    dlogits[k] -= weights.policy * rec.advantage * (onehot - p[k]) / n;
                }
                if p[k] > 0.0 {
                    // ∂H/∂z_k = −p_k (ln p_k + H)
                    dlogits[k] += weights.beta * p[k] * (p[k].ln() + h) / n;
                }
            }
            net_backward(params, &fwd, dlogits, dvalue, g);
        }
    }
    out.total = weights.value * out.value + weights.policy * out.policy - weights.beta * out.entropy;
    if !out.total.is_finite() {
        return Err(LearnerError::NonFinite(format!("loss {out:?}")));
    }
    if let Some(g) = grad {
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(LearnerError::NonFinite(format!("gradient component {i}")));
        }
    }
    Ok(out)
}

pub fn value_loss(params: &Params, batch: &[ObservationRecord]) -> Result<f64, LearnerError> {
    Ok(evaluate(params, batch, LossWeights::total(0.0), None)?.value)
}

pub fn policy_loss(params: &Params, batch: &[ObservationRecord]) -> Result<f64, LearnerError> {
    Ok(evaluate(params, batch, LossWeights::total(0.0), None)?.policy)
}

pub fn total_loss(params: &Params, batch: &[ObservationRecord], beta: f64) -> Result<f64, LearnerError> {
    Ok(evaluate(params, batch, LossWeights::total(beta), None)?.total)
}

/// Gradient of the total loss with respect to every parameter.
pub fn backward(params: &Params, batch: &[ObservationRecord], beta: f64) -> Result<(LossBreakdown, Vec<f64>), LearnerError> {
    let mut grad = vec![0.0; params.data.len()];
    let losses = evaluate(params, batch, LossWeights::total(beta), Some(&mut grad))?;
    Ok((losses, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(inputs: [[f64; STATE_DIM]; 2], action: usize, target: f64, advantage: f64, hidden: usize) -> ObservationRecord {
        ObservationRecord {
            inputs,
            carry: Carry::zeros(hidden),
            action,
            reward: 0.0,
            discounted_return: 0.0,
            session_index: 0,
            target,
            advantage,
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(td_advantage(2.0, 2.0), 0.0);
        assert!((td_advantage(td_target(1.0, 0.9, Some(2.0)), 2.0) - 0.8).abs() < 1e-12);
        assert!(td_advantage(1.0, 1.5) < 0.0 && td_advantage(1.0, 0.5) > 0.0);
        assert_eq!(td_target(0.7, 0.9, None), 0.7);
    }

    #[test]
    fn entropy_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((policy_entropy(&ActionDistribution::new(0.5, 0.5).unwrap()) - ln2).abs() < 1e-15);
        assert_eq!(policy_entropy(&ActionDistribution::new(1.0, 0.0).unwrap()), 0.0);
        for k in 0..=100 {
            let p = k as f64 / 100.0;
            let h = policy_entropy(&ActionDistribution::new(p, 1.0 - p).unwrap());
            assert!(h <= ln2 + 1e-15);
        }
    }

    #[test]
    fn zero_params_loss_examples() {
        // zero weights: V = 0 and π = (½, ½)
        let p = Params::zeros(4);
        let perfect = [record([[0.1; STATE_DIM]; 2], 0, 0.0, 0.0, 4)];
        assert_eq!(value_loss(&p, &perfect).unwrap(), 0.0);
        assert_eq!(policy_loss(&p, &perfect).unwrap(), 0.0);
        let off = [record([[0.1; STATE_DIM]; 2], 0, 2.0, 0.0, 4)];
        assert_eq!(value_loss(&p, &off).unwrap(), 2.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((total_loss(&p, &perfect, 0.05).unwrap() + 0.05 * ln2).abs() < 1e-15);
        let adv = [record([[0.1; STATE_DIM]; 2], 1, 0.0, 1.0, 4)];
        assert!((policy_loss(&p, &adv).unwrap() - ln2).abs() < 1e-15);
        let neg = [record([[0.1; STATE_DIM]; 2], 1, 0.0, -1.0, 4)];
        assert!((policy_loss(&p, &neg).unwrap() + ln2).abs() < 1e-15);
        assert!(matches!(value_loss(&p, &[]), Err(LearnerError::EmptyBatch)));
    }

    #[test]
    fn policy_loss_at_inverse_e() {
        // logits chosen so that π(schedule) = e⁻¹
        let mut p = Params::zeros(2);
        let l = p.layout;
        let e = std::f64::consts::E;
        p.data[l.policy_bias()] = (1.0 / (e - 1.0)).ln();
        let rec = [record([[0.0; STATE_DIM]; 2], 0, 0.0, 1.0, 2)];
        assert!((policy_loss(&p, &rec).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_gives_zero_gradient() {
        let p = Params::zeros(4);
        let recs = [record([[0.3; STATE_DIM]; 2], 0, 0.0, 0.0, 4), record([[0.7; STATE_DIM]; 2], 1, 0.0, 0.0, 4)];
        let (_, g) = backward(&p, &recs, 0.0).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_is_mean_weighted_over_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Params::init(5, &mut rng);
        let mk = |rng: &mut ChaCha8Rng| {
            let x: [[f64; STATE_DIM]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen()));
            record(x, rng.gen_range(0..2), rng.gen(), rng.gen_range(-1.0..1.0), 5)
        };
        let a: Vec<_> = (0..3).map(|_| mk(&mut rng)).collect();
        let b: Vec<_> = (0..5).map(|_| mk(&mut rng)).collect();
        let ab: Vec<_> = a.iter().chain(&b).cloned().collect();
        let (_, ga) = backward(&p, &a, 0.05).unwrap();
        let (_, gb) = backward(&p, &b, 0.05).unwrap();
        let (_, gab) = backward(&p, &ab, 0.05).unwrap();
        for i in 0..ga.len() {
            let mixed = (3.0 * ga[i] + 5.0 * gb[i]) / 8.0;
            assert!((mixed - gab[i]).abs() <= 1e-12 * (1.0 + gab[i].abs()));
        }
    }
}
