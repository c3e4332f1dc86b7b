//! Episode loop of the multi-agent actor-critic.
//!
//! Every EVSE agent walks its session sequence with the coordinator's
//! current parameters, samples schedule/queue actions, collects rewards and
//! computes a clipped gradient. The coordinator then applies the agents'
//! updates one after another in `evse_id` order, and all agents re-sync
//! before the next episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{discounted_return, eta, session_reward, EvseState, QUEUE, SCHEDULE, STATE_DIM};
use crate::risk::{estimate_risk_with, CvarVariant, RiskEstimate, RiskOptions};
use crate::session::{energy_ratio, rate_ratio, time_ratio, ChargingSession, SessionBatch};

use super::loss::{backward, td_advantage, td_target, LossBreakdown, ObservationRecord};
use super::model::{AgentCarry, TrainedModel};
use super::network::{forward, Carry, Layout, Params};
use super::optim::{clipped_delta, grad_norm, Adam};
use super::LearnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub hidden: usize,
    pub clip: f64,
    pub seed: u64,
    pub cvar_variant: CvarVariant,
    pub risk_off: bool,
    /// Overrides the default risk normalization scale (hours).
    pub risk_reference_hours: Option<f64>,
    /// Decisions between parameter updates; 0 updates once per sequence.
    pub sessions_per_update: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            learning_rate: 0.001,
            gamma: 0.9,
            beta: 0.05,
            alpha: 0.99,
            hidden: 64,
            clip: 40.0,
            seed: 0,
            cvar_variant: CvarVariant::Standard,
            risk_off: false,
            risk_reference_hours: None,
            sessions_per_update: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} must lie in (0, 1)", self.gamma));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be non-negative", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip {} must be positive", self.clip));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub cumulative_reward: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    /// `−β · mean entropy`, the entropy term as it enters the total loss.
    pub entropy_loss: f64,
}

/// Static per-session quantities an agent needs during training.
#[derive(Debug, Clone)]
pub struct AgentData {
    pub evse_id: String,
    pub zeta: f64,
    pub rho: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub inputs: Vec<[[f64; STATE_DIM]; 2]>,
}

/// `[s_v, s_v′]` network input for a decision on `head` with `next` waiting.
pub fn decision_inputs(head: &ChargingSession, next: Option<&ChargingSession>) -> [[f64; STATE_DIM]; 2] {
    [
        EvseState::of(head).normalized(),
        next.map_or([0.0; STATE_DIM], |n| EvseState::of(n).normalized()),
    ]
}

pub fn prepare_agents(batch: &SessionBatch) -> Result<Vec<AgentData>, LearnerError> {
    let mut agents = Vec::new();
    for (evse_id, group) in batch.groups() {
        let usable: Vec<&ChargingSession> = group
            .iter()
            .filter(|s| {
                let ok = s.energy_requested_kwh > 0.0 && s.plugged_minutes() > 0.0;
                if !ok {
                    log::warn!("session {} has no request or no plugged time; skipped in training", s.session_id);
                }
                ok
            })
            .collect();
        if usable.is_empty() {
            continue;
        }
        let owned: Vec<ChargingSession> = usable.iter().map(|s| (*s).clone()).collect();
        let zeta = rate_ratio(&owned)?;
        let mut rho = Vec::with_capacity(owned.len());
        let mut upsilon = Vec::with_capacity(owned.len());
        let mut inputs = Vec::with_capacity(owned.len());
        for (v, s) in owned.iter().enumerate() {
            rho.push(time_ratio(s)?);
            upsilon.push(energy_ratio(s)?);
            inputs.push(decision_inputs(s, owned.get(v + 1)));
        }
        agents.push(AgentData { evse_id: evse_id.clone(), zeta, rho, upsilon, inputs });
    }
    if agents.is_empty() {
        return Err(LearnerError::Config("batch has no usable sessions".into()));
    }
    Ok(agents)
}

/// Reward of `action` on session `v` of an agent's sequence.
pub fn reward_of(agent: &AgentData, v: usize, action: usize, risk: f64) -> f64 {
    let schedule = action == SCHEDULE;
    let here = eta(agent.upsilon[v], schedule);
    let next = agent.upsilon.get(v + 1).map(|&u| eta(u, schedule));
    session_reward(here, next, agent.zeta, agent.rho[v], risk)
}

/// Outcome of one agent's pass over its sequence.
#[derive(Debug, Clone)]
pub struct AgentEpisode {
    pub cumulative_reward: f64,
    /// Record-weighted mean of the losses seen before each update.
    pub losses: LossBreakdown,
    pub updates: usize,
    pub max_raw_grad_norm: f64,
    pub final_carry: Carry,
}

/// Walks one agent's sequence, updating the shared parameters through
/// `adam` after every `sessions_per_update` decisions (once at the end of
/// the sequence when that is 0).
pub fn run_agent_episode(
    params: &mut Params,
    adam: &mut Adam,
    agent: &AgentData,
    cfg: &TrainConfig,
    risk: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AgentEpisode, LearnerError> {
    let len = agent.inputs.len();
    let chunk = if cfg.sessions_per_update == 0 { len } else { cfg.sessions_per_update };
    let mut carry = Carry::zeros(params.layout.hidden);
    let mut out = AgentEpisode {
        cumulative_reward: 0.0,
        losses: LossBreakdown::default(),
        updates: 0,
        max_raw_grad_norm: 0.0,
        final_carry: carry.clone(),
    };
    let mut start = 0;
    while start < len {
        let end = (start + chunk).min(len);
        let records = rollout_range(params, agent, start..end, &mut carry, cfg.gamma, risk, rng)?;
        let (losses, grad) = backward(params, &records, cfg.beta)?;
        let w = records.len() as f64 / len as f64;
        out.losses.value += w * losses.value;
        out.losses.policy += w * losses.policy;
        out.losses.entropy += w * losses.entropy;
        out.losses.total += w * losses.total;
        out.cumulative_reward += records.iter().map(|r| r.reward).sum::<f64>();
        out.max_raw_grad_norm = out.max_raw_grad_norm.max(grad_norm(&grad));
        let delta = clipped_delta(&grad, cfg.clip)?;
        adam.apply(&mut params.data, &delta)?;
        out.updates += 1;
        start = end;
    }
    out.final_carry = carry;
    Ok(out)
}

/// Samples actions over the whole sequence from a zero carry; targets and
/// advantages use the values seen during the pass.
pub fn rollout(
    params: &Params,
    agent: &AgentData,
    gamma: f64,
    risk: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ObservationRecord>, LearnerError> {
    let mut carry = Carry::zeros(params.layout.hidden);
    rollout_range(params, agent, 0..agent.inputs.len(), &mut carry, gamma, risk, rng)
}

/// Samples actions for sessions `range`, advancing `carry`. The last
/// record bootstraps from the value of the session after the range.
pub fn rollout_range(
    params: &Params,
    agent: &AgentData,
    range: std::ops::Range<usize>,
    carry: &mut Carry,
    gamma: f64,
    risk: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ObservationRecord>, LearnerError> {
    let end = range.end;
    let mut records = Vec::with_capacity(range.len());
    let mut values = Vec::with_capacity(range.len());
    for v in range {
        let inputs = &agent.inputs[v];
        let fwd = forward(params, inputs, carry)?;
        let action = if rng.gen::<f64>() < fwd.dist.schedule { SCHEDULE } else { QUEUE };
        let reward = reward_of(agent, v, action, risk);
        records.push(ObservationRecord {
            inputs: *inputs,
            carry: carry.clone(),
            action,
            reward,
            discounted_return: 0.0,
            session_index: v,
            target: 0.0,
            advantage: 0.0,
        });
        values.push(fwd.value);
        *carry = fwd.carry_after_first();
    }
    let bootstrap = match agent.inputs.get(end) {
        Some(next) => Some(forward(params, next, carry)?.value),
        None => None,
    };
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let n = records.len();
    for v in 0..n {
        let next_value = if v + 1 < n { Some(values[v + 1]) } else { bootstrap };
        let target = td_target(rewards[v], gamma, next_value);
        records[v].target = target;
        records[v].advantage = td_advantage(target, values[v]);
        records[v].discounted_return =
            discounted_return(&rewards[v..], gamma) + gamma.powi((n - v) as i32) * bootstrap.unwrap_or(0.0);
    }
    Ok(records)
}

/// Per-agent stream: root seed, then episode and agent index.
pub fn agent_rng(seed: u64, episode: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((episode << 16) | agent as u64);
    rng
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

pub fn risk_for_training(batch: &SessionBatch, cfg: &TrainConfig) -> Result<RiskEstimate, LearnerError> {
    if cfg.risk_off {
        return Ok(RiskEstimate::zero(cfg.alpha));
    }
    let opts = RiskOptions {
        alpha: cfg.alpha,
        variant: cfg.cvar_variant,
        reference_scale: cfg.risk_reference_hours,
    };
    Ok(estimate_risk_with(batch, &opts)?)
}

/// Trains a fresh model for `cfg.episodes` episodes.
pub fn train(batch: &SessionBatch, cfg: &TrainConfig) -> Result<(TrainedModel, Vec<EpisodeLog>), LearnerError> {
    cfg.validate()?;
    let risk = risk_for_training(batch, cfg)?;
    let layout = Layout::new(cfg.hidden);
    let coordinator = Params::init(cfg.hidden, &mut init_rng(cfg.seed));
    let model = TrainedModel {
        config: cfg.clone(),
        layout,
        adam: Adam::new(layout.len(), cfg.learning_rate),
        coordinator,
        agents: Vec::new(),
        episodes_completed: 0,
        risk,
    };
    continue_training(model, batch, cfg.episodes)
}

/// Runs `episodes` more episodes from a trained (or resumed) model.
pub fn continue_training(
    mut model: TrainedModel,
    batch: &SessionBatch,
    episodes: usize,
) -> Result<(TrainedModel, Vec<EpisodeLog>), LearnerError> {
    let cfg = model.config.clone();
    cfg.validate()?;
    let agents = prepare_agents(batch)?;
    let risk = model.risk.cvar_normalized;
    let mut log_rows = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let episode = model.episodes_completed + 1;
        let k = agents.len() as f64;
        let mut row = EpisodeLog { episode, cumulative_reward: 0.0, value_loss: 0.0, policy_loss: 0.0, entropy_loss: 0.0 };
        let mut carries = Vec::with_capacity(agents.len());
        // agents take turns on the shared parameters in evse_id order
        for (n, agent) in agents.iter().enumerate() {
            let mut rng = agent_rng(cfg.seed, episode, n);
            let r = run_agent_episode(&mut model.coordinator, &mut model.adam, agent, &cfg, risk, &mut rng).map_err(|e| {
                log::error!("episode {episode}, agent {}: {e}; coordinator step {}", agent.evse_id, model.adam.step);
                LearnerError::Episode { episode, evse_id: agent.evse_id.clone(), source: Box::new(e) }
            })?;
            row.cumulative_reward += r.cumulative_reward;
            row.value_loss += r.losses.value / k;
            row.policy_loss += r.losses.policy / k;
            row.entropy_loss -= cfg.beta * r.losses.entropy / k;
            carries.push(AgentCarry { evse_id: agent.evse_id.clone(), carry: r.final_carry });
        }
        model.agents = carries;
        log_rows.push(row);
        model.episodes_completed = episode;
    }
    Ok((model, log_rows))
}

/// Trailing moving average, `out[i] = mean(xs[i+1−w ..= i])` (shorter at the start).
pub fn smoothed(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for i in 0..xs.len() {
        acc += xs[i];
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
