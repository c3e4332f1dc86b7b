//! Execution of a trained policy over session streams, the as-requested
//! baseline, and the evaluation metrics.
//!
//! The simulation runs one global minute clock. Sessions join their EVSE's
//! waiting list at plug-in. Whenever an EVSE is free it presents its ready
//! waiting sessions in arrival order until one is scheduled. A queued
//! session is re-presented one step later, and a session still unstarted
//! `minutes_available` after arrival is voided. EVSEs are visited in
//! `evse_id` order at each instant, and a start that would push the site
//! above `dso_capacity_kw` waits one step.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{policy_value_forward, train, Carry, LearnerError, TrainConfig, TrainedModel};
use crate::learner::train::decision_inputs;
use crate::mdp::{allocate, eta, realized_energy, scheduling_indicator, SchedulingDecision};
use crate::session::{energy_ratio, ChargingSession, Minute, SessionBatch, SiteConfig, VehicleClass};

pub const DEFAULT_STEP_MINUTES: i64 = 15;
pub const DEFAULT_SWITCHING_MINUTES: f64 = 5.0;

const LOAD_TOLERANCE_KW: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid site config: {0}")]
    Site(String),
    #[error("session {session_id} names EVSE {evse_id}, which the site config does not list")]
    UnknownEvse { session_id: String, evse_id: String },
    #[error("step_minutes must be positive, got {0}")]
    Step(i64),
    #[error("cannot compare reports: {0}")]
    Mismatch(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// What happened to one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOutcome {
    pub session_id: String,
    pub evse_id: String,
    pub vehicle_class: VehicleClass,
    pub arrival: Minute,
    /// `None` for voided sessions.
    pub start: Option<Minute>,
    pub decision: Option<SchedulingDecision>,
    pub realized_energy_kwh: f64,
    pub realized_rate_kw: f64,
    /// Charging minutes at the realized rate, switching time excluded.
    pub realized_minutes: f64,
    pub wait_minutes: f64,
    /// Times the session was presented and not started.
    pub deferrals: u32,
    pub voided: bool,
}

impl ScheduleOutcome {
    /// Minutes the EVSE is held, switching included.
    pub fn reserved_minutes(&self) -> f64 {
        self.decision.map_or(0.0, |d| d.allocated_minutes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvseMetrics {
    pub evse_id: String,
    pub sessions_requested: usize,
    pub sessions_served: usize,
    pub active_charging_hours: f64,
    pub energy_delivered_kwh: f64,
    pub charging_rate_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub site_id: String,
    pub dso_capacity_kw: f64,
    pub sessions_requested: usize,
    pub sessions_served: usize,
    pub assignment_efficiency_pct: f64,
    /// Σ energy / Σ charging time over served sessions.
    pub charging_rate_kw: f64,
    pub active_charging_hours: f64,
    pub energy_delivered_kwh: f64,
    pub per_evse: Vec<EvseMetrics>,
}

pub const METRICS_CSV_HEADER: &str =
    "evse_id,sessions_requested,sessions_served,assignment_efficiency_pct,charging_rate_kw,active_charging_hours,energy_delivered_kwh";

fn pct(served: usize, requested: usize) -> f64 {
    if requested == 0 {
        0.0
    } else {
        served as f64 / requested as f64 * 100.0
    }
}

fn rate(energy_kwh: f64, hours: f64) -> f64 {
    if hours > 0.0 {
        energy_kwh / hours
    } else {
        0.0
    }
}

impl MetricsReport {
    /// One row per EVSE, then a `site` row with the totals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        let mut row = |id: &str, req: usize, served: usize, rate: f64, hours: f64, energy: f64| {
            out.push_str(&format!("{id},{req},{served},{},{rate},{hours},{energy}\n", pct(served, req)));
        };
        for e in &self.per_evse {
            row(&e.evse_id, e.sessions_requested, e.sessions_served, e.charging_rate_kw, e.active_charging_hours, e.energy_delivered_kwh);
        }
        row(
            "site",
            self.sessions_requested,
            self.sessions_served,
            self.charging_rate_kw,
            self.active_charging_hours,
            self.energy_delivered_kwh,
        );
        out
    }
}

/// Metrics over a set of outcomes. Every EVSE of `site` gets a row, plus
/// any EVSE that appears only in the outcomes.
pub fn compute_metrics(outcomes: &[ScheduleOutcome], site: &SiteConfig) -> MetricsReport {
    let mut per: BTreeMap<String, EvseMetrics> = site
        .evses
        .iter()
        .map(|e| {
            let m = EvseMetrics {
                evse_id: e.evse_id.clone(),
                sessions_requested: 0,
                sessions_served: 0,
                active_charging_hours: 0.0,
                energy_delivered_kwh: 0.0,
                charging_rate_kw: 0.0,
            };
            (e.evse_id.clone(), m)
        })
        .collect();
    for o in outcomes {
        let m = per.entry(o.evse_id.clone()).or_insert_with(|| EvseMetrics {
            evse_id: o.evse_id.clone(),
            sessions_requested: 0,
            sessions_served: 0,
            active_charging_hours: 0.0,
            energy_delivered_kwh: 0.0,
            charging_rate_kw: 0.0,
        });
        m.sessions_requested += 1;
        if !o.voided {
            m.sessions_served += 1;
            m.active_charging_hours += o.realized_minutes / 60.0;
            m.energy_delivered_kwh += o.realized_energy_kwh;
        }
    }
    let mut report = MetricsReport {
        site_id: site.site_id.clone(),
        dso_capacity_kw: site.dso_capacity_kw,
        sessions_requested: 0,
        sessions_served: 0,
        assignment_efficiency_pct: 0.0,
        charging_rate_kw: 0.0,
        active_charging_hours: 0.0,
        energy_delivered_kwh: 0.0,
        per_evse: Vec::with_capacity(per.len()),
    };
    for (_, mut m) in per {
        m.charging_rate_kw = rate(m.energy_delivered_kwh, m.active_charging_hours);
        report.sessions_requested += m.sessions_requested;
        report.sessions_served += m.sessions_served;
        report.active_charging_hours += m.active_charging_hours;
        report.energy_delivered_kwh += m.energy_delivered_kwh;
        report.per_evse.push(m);
    }
    report.assignment_efficiency_pct = pct(report.sessions_served, report.sessions_requested);
    report.charging_rate_kw = rate(report.energy_delivered_kwh, report.active_charging_hours);
    report
}

/// Called by [`execute_with`] after every `update_every` started sessions
/// at an EVSE, with that EVSE's outcomes since the previous call.
pub trait ModelUpdateHook {
    fn update(&mut self, model: &mut TrainedModel, evse_id: &str, recent: &[ScheduleOutcome]) -> Result<(), SchedulerError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecuteOptions {
    pub step_minutes: i64,
    /// Started sessions per EVSE between hook calls; 0 disables the hook.
    pub update_every: usize,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions { step_minutes: DEFAULT_STEP_MINUTES, update_every: 0 }
    }
}

/// How a presented session is judged and how much energy it is given.
enum Controller<'a> {
    Learned { model: &'a mut TrainedModel, carries: BTreeMap<String, Carry>, risk: f64 },
    /// Schedules everything with the budget `ε_act (1 + risk)`.
    ScheduleAll { risk: f64 },
    /// Schedules everything with the requested energy.
    AsRequested,
}

fn upsilon(s: &ChargingSession) -> f64 {
    energy_ratio(s).unwrap_or(1.0)
}

impl Controller<'_> {
    fn schedules(&mut self, head: &ChargingSession, next: Option<&ChargingSession>) -> Result<bool, SchedulerError> {
        match self {
            Controller::Learned { model, carries, .. } => {
                let hidden = model.layout.hidden;
                let carry = carries.entry(head.evse_id.clone()).or_insert_with(|| {
                    model
                        .agents
                        .iter()
                        .find(|a| a.evse_id == head.evse_id)
                        .map_or_else(|| Carry::zeros(hidden), |a| a.carry.clone())
                });
                let (dist, _, after) = policy_value_forward(&model.coordinator, &decision_inputs(head, next), carry)?;
                *carry = after;
                let action = scheduling_indicator(&dist) == 1;
                // the chosen action's η must not fall below the waiting session's
                Ok(next.is_none_or(|n| eta(upsilon(head), action) >= eta(upsilon(n), action)))
            }
            Controller::ScheduleAll { .. } | Controller::AsRequested => Ok(true),
        }
    }

    fn budget(&self, s: &ChargingSession) -> f64 {
        match self {
            Controller::Learned { risk, .. } | Controller::ScheduleAll { risk } => s.energy_delivered_kwh * (1.0 + risk),
            Controller::AsRequested => s.energy_requested_kwh,
        }
    }
}

struct Waiting {
    session: ChargingSession,
    ready_at: Minute,
    deferrals: u32,
}

struct EvseLane {
    evse_id: String,
    arrivals: Vec<ChargingSession>,
    next_arrival: usize,
    waiting: Vec<Waiting>,
    free_at: Minute,
    /// Charging intervals still running: (end minute, rate).
    charging: Vec<(f64, f64)>,
    since_update: Vec<ScheduleOutcome>,
}

fn deadline(s: &ChargingSession) -> f64 {
    s.plug_in_time.0 as f64 + s.minutes_available
}

fn voided(w: Waiting) -> ScheduleOutcome {
    ScheduleOutcome {
        session_id: w.session.session_id.clone(),
        evse_id: w.session.evse_id.clone(),
        vehicle_class: w.session.vehicle_class,
        arrival: w.session.plug_in_time,
        start: None,
        decision: None,
        realized_energy_kwh: 0.0,
        realized_rate_kw: 0.0,
        realized_minutes: 0.0,
        wait_minutes: w.session.minutes_available,
        deferrals: w.deferrals,
        voided: true,
    }
}

fn simulate(
    batch: &SessionBatch,
    site: &SiteConfig,
    controller: &mut Controller<'_>,
    opts: ExecuteOptions,
    mut hook: Option<&mut dyn ModelUpdateHook>,
) -> Result<Vec<ScheduleOutcome>, SchedulerError> {
    site.validate().map_err(SchedulerError::Site)?;
    if opts.step_minutes <= 0 {
        return Err(SchedulerError::Step(opts.step_minutes));
    }
    let mut lanes = Vec::new();
    for (evse_id, group) in batch.groups() {
        if site.evse(evse_id).is_none() {
            return Err(SchedulerError::UnknownEvse { session_id: group[0].session_id.clone(), evse_id: evse_id.clone() });
        }
        lanes.push(EvseLane {
            evse_id: evse_id.clone(),
            arrivals: group.clone(),
            next_arrival: 0,
            waiting: Vec::new(),
            free_at: Minute(i64::MIN),
            charging: Vec::new(),
            since_update: Vec::new(),
        });
    }
    let mut outcomes = Vec::with_capacity(batch.len());
    let Some(mut now) = lanes.iter().map(|l| l.arrivals[0].plug_in_time).min() else {
        return Ok(outcomes);
    };
    loop {
        for lane in &mut lanes {
            while let Some(s) = lane.arrivals.get(lane.next_arrival).filter(|s| s.plug_in_time <= now) {
                lane.waiting.push(Waiting { session: s.clone(), ready_at: s.plug_in_time, deferrals: 0 });
                lane.next_arrival += 1;
            }
            let t = now.0 as f64;
            lane.charging.retain(|&(end, _)| end > t);
            let (expired, live): (Vec<_>, Vec<_>) = lane.waiting.drain(..).partition(|w| deadline(&w.session) < t);
            lane.waiting = live;
            for w in expired {
                log::debug!("session {} voided at {now}: not started within its available minutes", w.session.session_id);
                outcomes.push(voided(w));
            }
        }
        for i in 0..lanes.len() {
            if lanes[i].free_at > now {
                continue;
            }
            let evse = site.evse(&lanes[i].evse_id).expect("checked above");
            let mut k = 0;
            while k < lanes[i].waiting.len() {
                if lanes[i].waiting[k].ready_at > now {
                    k += 1;
                    continue;
                }
                let lane = &lanes[i];
                let head = &lane.waiting[k].session;
                let next = lane.waiting.get(k + 1).map(|w| &w.session);
                if !controller.schedules(head, next)? {
                    let w = &mut lanes[i].waiting[k];
                    w.ready_at = now.plus(opts.step_minutes);
                    w.deferrals += 1;
                    k += 1;
                    continue;
                }
                let decision = allocate(head, evse, controller.budget(head));
                let load: f64 = lanes.iter().flat_map(|l| l.charging.iter()).map(|&(_, r)| r).sum();
                if load + decision.allocated_rate_kw > site.dso_capacity_kw + LOAD_TOLERANCE_KW {
                    log::debug!(
                        "session {} at {now}: {:.3} kW would exceed the site limit ({load:.3} kW in use); retrying in {} min",
                        head.session_id,
                        decision.allocated_rate_kw,
                        opts.step_minutes
                    );
                    let w = &mut lanes[i].waiting[k];
                    w.ready_at = now.plus(opts.step_minutes);
                    w.deferrals += 1;
                    lanes[i].free_at = now.plus(opts.step_minutes);
                    break;
                }
                let w = lanes[i].waiting.remove(k);
                let energy = realized_energy(&w.session, &decision);
                let minutes = if decision.allocated_rate_kw > 0.0 { energy / decision.allocated_rate_kw * 60.0 } else { 0.0 };
                let outcome = ScheduleOutcome {
                    session_id: w.session.session_id.clone(),
                    evse_id: w.session.evse_id.clone(),
                    vehicle_class: w.session.vehicle_class,
                    arrival: w.session.plug_in_time,
                    start: Some(now),
                    decision: Some(decision),
                    realized_energy_kwh: energy,
                    realized_rate_kw: decision.allocated_rate_kw,
                    realized_minutes: minutes,
                    wait_minutes: now.minutes_since(w.session.plug_in_time),
                    deferrals: w.deferrals,
                    voided: false,
                };
                let lane = &mut lanes[i];
                lane.free_at = now.plus(decision.allocated_minutes.ceil() as i64);
                if minutes > 0.0 {
                    lane.charging.push((now.0 as f64 + minutes, decision.allocated_rate_kw));
                }
                outcomes.push(outcome.clone());
                if opts.update_every > 0 {
                    lane.since_update.push(outcome);
                    if lane.since_update.len() >= opts.update_every {
                        let recent = std::mem::take(&mut lane.since_update);
                        if let (Some(h), Controller::Learned { model, .. }) = (hook.as_deref_mut(), &mut *controller) {
                            h.update(model, &lane.evse_id, &recent)?;
                        }
                    }
                }
                break;
            }
        }
        // jump to the next instant at which anything can change
        let mut next = i64::MAX;
        for lane in &lanes {
            if let Some(s) = lane.arrivals.get(lane.next_arrival) {
                next = next.min(s.plug_in_time.0);
            }
            for w in &lane.waiting {
                let ready = w.ready_at.max(lane.free_at);
                next = next.min(ready.0);
                next = next.min(deadline(&w.session).floor() as i64 + 1);
            }
        }
        if next == i64::MAX {
            break;
        }
        now = Minute(next.max(now.0 + 1));
    }
    outcomes.sort_by(|a, b| (a.arrival, &a.evse_id, &a.session_id).cmp(&(b.arrival, &b.evse_id, &b.session_id)));
    Ok(outcomes)
}

/// Runs the trained policy: argmax action, then the η ordering against the
/// session waiting behind, then an allocation with budget `ε_act (1 + risk)`.
pub fn execute(
    model: &TrainedModel,
    batch: &SessionBatch,
    site: &SiteConfig,
) -> Result<(Vec<ScheduleOutcome>, MetricsReport), SchedulerError> {
    let mut model = model.clone();
    execute_with(&mut model, batch, site, ExecuteOptions::default(), None)
}

pub fn execute_with(
    model: &mut TrainedModel,
    batch: &SessionBatch,
    site: &SiteConfig,
    opts: ExecuteOptions,
    hook: Option<&mut dyn ModelUpdateHook>,
) -> Result<(Vec<ScheduleOutcome>, MetricsReport), SchedulerError> {
    let risk = if model.config.risk_off { 0.0 } else { model.risk.cvar_normalized };
    let mut controller = Controller::Learned { model, carries: BTreeMap::new(), risk };
    let outcomes = simulate(batch, site, &mut controller, opts, hook)?;
    let report = compute_metrics(&outcomes, site);
    Ok((outcomes, report))
}

/// Every session scheduled as soon as its EVSE is free, with budget
/// `ε_act (1 + risk)`.
pub fn execute_schedule_all(
    batch: &SessionBatch,
    site: &SiteConfig,
    risk: f64,
) -> Result<(Vec<ScheduleOutcome>, MetricsReport), SchedulerError> {
    let outcomes = simulate(batch, site, &mut Controller::ScheduleAll { risk }, ExecuteOptions::default(), None)?;
    let report = compute_metrics(&outcomes, site);
    Ok((outcomes, report))
}

/// FCFS with each request taken at face value: `(ε_req, δ_req)` reserved,
/// capped by the EVSE and the vehicle.
pub fn fcfs_as_requested_baseline(
    batch: &SessionBatch,
    site: &SiteConfig,
) -> Result<(Vec<ScheduleOutcome>, MetricsReport), SchedulerError> {
    let outcomes = simulate(batch, site, &mut Controller::AsRequested, ExecuteOptions::default(), None)?;
    let report = compute_metrics(&outcomes, site);
    Ok((outcomes, report))
}

/// Trains and executes with the risk term pinned to zero.
pub fn risk_off_ablation(
    model_config: &TrainConfig,
    batch: &SessionBatch,
    site: &SiteConfig,
) -> Result<MetricsReport, SchedulerError> {
    let cfg = TrainConfig { risk_off: true, ..model_config.clone() };
    let (model, _) = train(batch, &cfg)?;
    Ok(execute(&model, batch, site)?.1)
}

/// Post-hoc check of a run: every input session appears exactly once,
/// voided sessions carry no energy, rates respect the EVSE and the vehicle,
/// reservations at one EVSE never overlap, and the site load never exceeds
/// its capacity.
pub fn audit(outcomes: &[ScheduleOutcome], batch: &SessionBatch, site: &SiteConfig) -> Result<(), SchedulerError> {
    let fail = |m: String| Err(SchedulerError::Audit(m));
    let expected: BTreeSet<&str> = batch.iter().map(|s| s.session_id.as_str()).collect();
    let mut seen = BTreeSet::new();
    for o in outcomes {
        if !seen.insert(o.session_id.as_str()) {
            return fail(format!("session {} appears twice", o.session_id));
        }
    }
    if seen != expected || outcomes.len() != batch.len() {
        return fail(format!("{} outcomes for {} input sessions", outcomes.len(), batch.len()));
    }
    let by_id: BTreeMap<&str, &ChargingSession> = batch.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut events = Vec::new();
    let mut reservations: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for o in outcomes {
        if o.voided {
            if o.realized_energy_kwh != 0.0 || o.start.is_some() {
                return fail(format!("voided session {} has a start or energy", o.session_id));
            }
            continue;
        }
        let s = by_id[o.session_id.as_str()];
        let Some(evse) = site.evse(&o.evse_id) else {
            return fail(format!("session {} ran on unknown EVSE {}", o.session_id, o.evse_id));
        };
        let cap = evse.supply_capacity_kw.min(s.receiving_capacity_kw);
        if o.realized_rate_kw > cap + LOAD_TOLERANCE_KW {
            return fail(format!("session {} charged at {} kW above the {cap} kW limit", o.session_id, o.realized_rate_kw));
        }
        if o.realized_energy_kwh < 0.0 || o.realized_energy_kwh > s.energy_delivered_kwh + 1e-9 {
            return fail(format!("session {} realized {} kWh", o.session_id, o.realized_energy_kwh));
        }
        let start = o.start.map_or(f64::NAN, |m| m.0 as f64);
        if !(start <= deadline(s)) {
            return fail(format!("session {} started after its available minutes", o.session_id));
        }
        reservations.entry(o.evse_id.as_str()).or_default().push((start, start + o.reserved_minutes().ceil()));
        if o.realized_minutes > 0.0 {
            events.push((start + o.realized_minutes, -o.realized_rate_kw));
            events.push((start, o.realized_rate_kw));
        }
    }
    for (evse_id, mut spans) in reservations {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return fail(format!("EVSE {evse_id} holds two sessions at minute {}", pair[1].0));
            }
        }
    }
    // ends sort before starts at the same instant
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut load = 0.0;
    for (t, delta) in events {
        load += delta;
        if load > site.dso_capacity_kw + 1e-6 {
            return fail(format!("site load {load:.6} kW exceeds {} kW at minute {t}", site.dso_capacity_kw));
        }
    }
    Ok(())
}

/// Outcomes as JSON lines.
pub fn outcomes_to_jsonl(outcomes: &[ScheduleOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        out.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        out.push('\n');
    }
    out
}

/// Side-by-side metrics; the first report is the reference for deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<f64>,
    /// Percentage change against the reference; `None` when the reference is 0.
    pub delta_pct: Vec<Option<f64>>,
}

pub const COMPARED_METRICS: [&str; 5] = [
    "charging_rate_kw",
    "active_charging_hours",
    "assignment_efficiency_pct",
    "energy_delivered_kwh",
    "sessions_served",
];

fn metric(r: &MetricsReport, name: &str) -> f64 {
    match name {
        "charging_rate_kw" => r.charging_rate_kw,
        "active_charging_hours" => r.active_charging_hours,
        "assignment_efficiency_pct" => r.assignment_efficiency_pct,
        "energy_delivered_kwh" => r.energy_delivered_kwh,
        "sessions_served" => r.sessions_served as f64,
        _ => unreachable!("unknown metric {name}"),
    }
}

pub fn compare_report(reports: &[(String, MetricsReport)]) -> Result<ComparisonTable, SchedulerError> {
    let Some((_, reference)) = reports.first() else {
        return Err(SchedulerError::Mismatch("no reports given".into()));
    };
    let evses = |r: &MetricsReport| r.per_evse.iter().map(|e| e.evse_id.clone()).collect::<Vec<_>>();
    for (name, r) in &reports[1..] {
        if r.site_id != reference.site_id || r.dso_capacity_kw != reference.dso_capacity_kw || evses(r) != evses(reference) {
            return Err(SchedulerError::Mismatch(format!(
                "report {name} covers site {} ({} kW, {} EVSEs), the reference covers {} ({} kW, {} EVSEs)",
                r.site_id,
                r.dso_capacity_kw,
                r.per_evse.len(),
                reference.site_id,
                reference.dso_capacity_kw,
                reference.per_evse.len()
            )));
        }
    }
    let rows = COMPARED_METRICS
        .iter()
        .map(|&m| {
            let base = metric(reference, m);
            let values: Vec<f64> = reports.iter().map(|(_, r)| metric(r, m)).collect();
            let delta_pct = values.iter().map(|&v| (base != 0.0).then(|| (v - base) / base * 100.0)).collect();
            ComparisonRow { metric: m.to_string(), values, delta_pct }
        })
        .collect();
    Ok(ComparisonTable { names: reports.iter().map(|(n, _)| n.clone()).collect(), rows })
}

impl ComparisonTable {
    /// `metric,<name>,...` then `<name>_delta_pct` for every non-reference column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for n in &self.names {
            out.push_str(&format!(",{n}"));
        }
        for n in &self.names[1..] {
            out.push_str(&format!(",{n}_delta_pct"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.metric);
            for v in &row.values {
                out.push_str(&format!(",{v}"));
            }
            for d in &row.delta_pct[1..] {
                match d {
                    Some(d) => out.push_str(&format!(",{d}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
