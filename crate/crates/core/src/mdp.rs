//! State encoding, the schedule/queue decision, the per-session reward and
//! discounted returns.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{energy_ratio, ChargingSession, EvseConfig, Minute, RateError};

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("action distribution ({0}, {1}) is not a probability vector")]
    InvalidDistribution(f64, f64),
    #[error("queue is empty")]
    EmptyQueue,
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// Scale for energies in network inputs, kWh.
pub const ENERGY_SCALE_KWH: f64 = 100.0;
/// Scale for durations and times of day in network inputs, minutes.
pub const MINUTES_SCALE: f64 = 1440.0;
pub const STATE_DIM: usize = 6;

/// The state vector `(ε_req, δ_req, τ_strt, τ_end, τ_uplg, ε_act)`, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvseState {
    pub energy_requested_kwh: f64,
    pub minutes_available: f64,
    pub plug_in_time: Minute,
    pub charge_end_time: Minute,
    pub unplug_time: Minute,
    pub energy_delivered_kwh: f64,
}

impl EvseState {
    pub fn of(session: &ChargingSession) -> Self {
        EvseState {
            energy_requested_kwh: session.energy_requested_kwh,
            minutes_available: session.minutes_available,
            plug_in_time: session.plug_in_time,
            charge_end_time: session.charge_end_time,
            unplug_time: session.unplug_time,
            energy_delivered_kwh: session.energy_delivered_kwh,
        }
    }

    /// Network input: energies over 100 kWh, the duration over 1440 min and
    /// each timestamp as its minute of day over 1440, all clamped to [0, 1].
    pub fn normalized(&self) -> [f64; STATE_DIM] {
        let unit = |x: f64| x.clamp(0.0, 1.0);
        let tod = |m: Minute| m.minute_of_day() as f64 / MINUTES_SCALE;
        [
            unit(self.energy_requested_kwh / ENERGY_SCALE_KWH),
            unit(self.minutes_available / MINUTES_SCALE),
            tod(self.plug_in_time),
            tod(self.charge_end_time),
            tod(self.unplug_time),
            unit(self.energy_delivered_kwh / ENERGY_SCALE_KWH),
        ]
    }
}

/// `(P(Υ), 1 − P(Υ))`: probabilities of scheduling now and of queueing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub schedule: f64,
    pub queue: f64,
}

impl ActionDistribution {
    pub fn new(schedule: f64, queue: f64) -> Result<Self, MdpError> {
        let ok = schedule >= 0.0 && queue >= 0.0 && (schedule + queue - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(MdpError::InvalidDistribution(schedule, queue));
        }
        Ok(ActionDistribution { schedule, queue })
    }

    /// Softmax of two logits.
    pub fn from_logits(schedule_logit: f64, queue_logit: f64) -> Self {
        let m = schedule_logit.max(queue_logit);
        let a = (schedule_logit - m).exp();
        let b = (queue_logit - m).exp();
        ActionDistribution { schedule: a / (a + b), queue: b / (a + b) }
    }

    pub fn prob(&self, action: usize) -> f64 {
        if action == SCHEDULE {
            self.schedule
        } else {
            self.queue
        }
    }
}

/// Action index of "schedule now" (the first policy output).
pub const SCHEDULE: usize = 0;
/// Action index of "queue".
pub const QUEUE: usize = 1;

/// 1 when the schedule component is the argmax; ties schedule.
pub fn scheduling_indicator(dist: &ActionDistribution) -> u8 {
    u8::from(dist.schedule >= dist.queue)
}

/// η: Υ when scheduling, `1 − Υ` when queueing.
pub fn demand_supply_index(session: &ChargingSession, schedule_now: bool) -> Result<f64, MdpError> {
    let upsilon = energy_ratio(session)?;
    Ok(eta(upsilon, schedule_now))
}

pub fn eta(upsilon: f64, schedule_now: bool) -> f64 {
    if schedule_now {
        upsilon
    } else {
        1.0 - upsilon
    }
}

/// The allocation `x = (ε_act, λ_act, δ_act)` attached to a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulingDecision {
    pub schedule_now: bool,
    pub demand_supply_index: f64,
    pub allocated_energy_kwh: f64,
    pub allocated_rate_kw: f64,
    /// Reserved minutes, switching time included.
    pub allocated_minutes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub gamma: f64,
    pub risk_value: f64,
    pub alpha: f64,
}

const ZETA_ONE_TOLERANCE: f64 = 1e-9;

/// Per-session reward.
///
/// * ζ = 1 and η_v ≥ η_v′: `1 + ζ ρ (1 − risk)`
/// * ζ ∉ {0, 1} and η_v ≥ η_v′: `ζ ρ (1 − risk)`
/// * otherwise 0
///
/// `eta_next` is `None` when no session follows at the same EVSE; the
/// ordering then holds trivially.
pub fn session_reward(eta_current: f64, eta_next: Option<f64>, zeta: f64, rho: f64, risk: f64) -> f64 {
    let ordered = eta_next.is_none_or(|n| eta_current >= n);
    if !ordered {
        return 0.0;
    }
    if (zeta - 1.0).abs() <= ZETA_ONE_TOLERANCE {
        1.0 + zeta * rho * (1.0 - risk)
    } else if zeta != 0.0 {
        zeta * rho * (1.0 - risk)
    } else {
        0.0
    }
}

/// `Σ γ^k r_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Constant-power allocation for a scheduled session.
///
/// The rate is the requested rate `ε_req/δ_req · 60` capped by the EVSE and
/// the vehicle. `energy_budget_kwh` is the energy the controller plans to
/// deliver; the reservation covers that budget at the rate, never exceeds
/// `δ_req`, and carries the EVSE switching time on top.
pub fn allocate(session: &ChargingSession, evse: &EvseConfig, energy_budget_kwh: f64) -> SchedulingDecision {
    let requested_rate = if session.minutes_available > 0.0 {
        session.energy_requested_kwh / session.minutes_available * 60.0
    } else {
        0.0
    };
    let rate = requested_rate.min(evse.supply_capacity_kw).min(session.receiving_capacity_kw);
    let budget = energy_budget_kwh.clamp(0.0, session.energy_requested_kwh);
    let needed = if rate > 0.0 { budget / rate * 60.0 } else { 0.0 };
    let (charge_minutes, energy) = if needed <= session.minutes_available {
        (needed, budget)
    } else {
        (session.minutes_available, (rate * session.minutes_available / 60.0).min(budget))
    };
    SchedulingDecision {
        schedule_now: true,
        demand_supply_index: energy_ratio(session).unwrap_or(0.0),
        allocated_energy_kwh: energy,
        allocated_rate_kw: rate,
        allocated_minutes: charge_minutes + evse.switching_minutes,
    }
}

/// Energy actually taken under a decision: the vehicle stops at its need.
pub fn realized_energy(session: &ChargingSession, decision: &SchedulingDecision) -> f64 {
    decision.allocated_energy_kwh.min(session.energy_delivered_kwh)
}

/// FCFS queue of one EVSE, with a clock that advances on queue decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionQueue {
    pub sessions: VecDeque<ChargingSession>,
    pub clock: Minute,
    pub step_minutes: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizedSession {
    pub session: ChargingSession,
    pub decision: SchedulingDecision,
    pub energy_kwh: f64,
    pub start: Minute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: Option<EvseState>,
    pub realized: Option<RealizedSession>,
}

/// Applies a decision to the head of the queue.
///
/// Scheduling pops the head and realizes its allocation with an energy
/// budget of `ε_act (1 + risk)`; queueing leaves the head in place and
/// moves the clock forward one step.
pub fn env_transition(
    queue: &mut SessionQueue,
    schedule_now: bool,
    evse: &EvseConfig,
    risk: f64,
) -> Result<Transition, MdpError> {
    if queue.sessions.is_empty() {
        return Err(MdpError::EmptyQueue);
    }
    if !schedule_now {
        queue.clock = queue.clock.plus(queue.step_minutes);
        return Ok(Transition {
            next_state: queue.sessions.front().map(EvseState::of),
            realized: None,
        });
    }
    let head = queue.sessions.pop_front().ok_or(MdpError::EmptyQueue)?;
    let start = queue.clock.max(head.plug_in_time);
    let decision = allocate(&head, evse, head.energy_delivered_kwh * (1.0 + risk));
    let energy_kwh = realized_energy(&head, &decision);
    queue.clock = start.plus(decision.allocated_minutes.ceil() as i64);
    Ok(Transition {
        next_state: queue.sessions.front().map(EvseState::of),
        realized: Some(RealizedSession { session: head, decision, energy_kwh, start }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::fixtures::session;
    use crate::session::VehicleClass;
    use proptest::prelude::*;

    fn evse() -> EvseConfig {
        EvseConfig { evse_id: "evse-00".into(), supply_capacity_kw: 50.0, switching_minutes: 5.0 }
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(scheduling_indicator(&ActionDistribution::new(0.7, 0.3).unwrap()), 1);
        assert_eq!(scheduling_indicator(&ActionDistribution::new(0.3, 0.7).unwrap()), 0);
        assert_eq!(scheduling_indicator(&ActionDistribution::new(0.5, 0.5).unwrap()), 1);
        assert!(ActionDistribution::new(0.6, 0.6).is_err());
        assert!(ActionDistribution::new(1.2, -0.2).is_err());
    }

    #[test]
    fn eta_examples() {
        let s = session("a", 10.0, 60.0, 8.0, 60, 60);
        assert!((demand_supply_index(&s, true).unwrap() - 0.8).abs() < 1e-12);
        assert!((demand_supply_index(&s, false).unwrap() - 0.2).abs() < 1e-12);
        let full = session("a", 10.0, 60.0, 10.0, 60, 60);
        assert_eq!(demand_supply_index(&full, true).unwrap(), 1.0);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(session_reward(1.0, Some(0.5), 1.0, 1.0, 0.0), 2.0);
        assert!((session_reward(0.9, Some(0.5), 0.5, 0.8, 0.1) - 0.36).abs() < 1e-12);
        assert_eq!(session_reward(0.4, Some(0.5), 0.5, 0.8, 0.1), 0.0);
        assert_eq!(session_reward(0.4, None, 0.5, 0.8, 0.1), 0.5 * 0.8 * 0.9);
        assert_eq!(session_reward(0.9, None, 0.0, 0.8, 0.1), 0.0);
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[3.0, 5.0], 0.0), 3.0);
        assert!((discounted_return(&[1.0, 1.0, 1.0], 0.9) - 2.71).abs() < 1e-12);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    #[test]
    fn normalized_state_is_unit_box() {
        let mut s = session("a", 150.0, 3000.0, 20.0, 60, 60);
        s.plug_in_time = Minute(1_000_000 + 720);
        let x = EvseState::of(&s).normalized();
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(x[0], 1.0);
        assert_eq!(x[5], 0.2);
    }

    #[test]
    fn transition_examples() {
        let mut av = session("a", 10.0, 60.0, 10.0, 60, 60);
        av.vehicle_class = VehicleClass::AV;
        let mut q = SessionQueue { sessions: VecDeque::from([av.clone()]), clock: Minute(0), step_minutes: 15 };
        let t = env_transition(&mut q, false, &evse(), 0.0).unwrap();
        assert_eq!(t.next_state, Some(EvseState::of(&av)));
        assert_eq!(q.clock, Minute(15));
        let t = env_transition(&mut q, true, &evse(), 0.0).unwrap();
        assert!(q.sessions.is_empty());
        assert!(t.next_state.is_none());
        let r = t.realized.unwrap();
        assert!((r.energy_kwh - av.energy_requested_kwh).abs() < 1e-12);
        assert_eq!(r.decision.allocated_minutes, 65.0);
        assert_eq!(env_transition(&mut q, true, &evse(), 0.0), Err(MdpError::EmptyQueue));
    }

    #[test]
    fn allocation_respects_caps() {
        let mut s = session("a", 100.0, 60.0, 90.0, 60, 60);
        s.receiving_capacity_kw = 22.0;
        let d = allocate(&s, &evse(), 90.0);
        assert_eq!(d.allocated_rate_kw, 22.0);
        assert!(d.allocated_minutes - 5.0 <= s.minutes_available);
    }

    proptest! {
        #[test]
        fn indicator_ignores_logit_scaling(a in -20.0f64..20.0, b in -20.0f64..20.0, c in 0.01f64..50.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let d1 = ActionDistribution::from_logits(a, b);
            let d2 = ActionDistribution::from_logits(c * a, c * b);
            prop_assert_eq!(scheduling_indicator(&d1), scheduling_indicator(&d2));
            prop_assert!((d1.schedule + d1.queue - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reward_bounded_and_monotone_in_risk(
            zeta in 0.0f64..=1.0, rho in 0.0f64..=1.0, r1 in 0.0f64..0.999, r2 in 0.0f64..0.999,
            ev in 0.0f64..=1.0, en in proptest::option::of(0.0f64..=1.0),
        ) {
            let a = session_reward(ev, en, zeta, rho, r1);
            prop_assert!((0.0..=2.0).contains(&a));
            let b = session_reward(ev, en, zeta, rho, r2);
            if r1 < r2 && a != 0.0 && zeta * rho > 0.0 {
                prop_assert!(a > b);
            }
            if en.is_some_and(|n| ev < n) {
                prop_assert_eq!(a, 0.0);
            }
        }

        #[test]
        fn discounted_return_bounded(rs in proptest::collection::vec(0.0f64..2.0, 0..60), gamma in 0.01f64..0.99) {
            let max = rs.iter().copied().fold(0.0, f64::max);
            prop_assert!(discounted_return(&rs, gamma) <= max / (1.0 - gamma) + 1e-9);
        }

        #[test]
        fn transitions_conserve_sessions(decisions in proptest::collection::vec(any::<bool>(), 0..40), n in 1usize..8) {
            let sessions: VecDeque<_> = (0..n).map(|i| session(&format!("s{i}"), 10.0, 60.0, 5.0, 30, 90)).collect();
            let mut q = SessionQueue { sessions, clock: Minute(0), step_minutes: 15 };
            let mut served = 0;
            for d in decisions {
                if q.sessions.is_empty() { break; }
                if env_transition(&mut q, d, &evse(), 0.1).unwrap().realized.is_some() { served += 1; }
            }
            prop_assert_eq!(served + q.sessions.len(), n);
        }
    }
}
