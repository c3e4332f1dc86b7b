//! Charging-session data model, ingestion of ACN-style JSON records,
//! synthetic session generation, and the per-EVSE rate and ratio formulas.
//!
//! Durations are minutes throughout; rates are kW and are obtained by
//! multiplying an energy/duration quotient by 60. Timestamps are stored at
//! minute resolution as minutes since the Unix epoch.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// Default EV receiving capacity when the input record does not carry one.
pub const DEFAULT_RECEIVING_CAPACITY_KW: f64 = 50.0;

/// Tolerance (kWh and minutes) within which an autonomous vehicle's request
/// must match what it actually took.
pub const AV_EXACTNESS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("malformed session JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("session JSON must be an array of objects")]
    NotAnArray,
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("record {index} ({session_id}): {message}")]
    Invariant {
        index: usize,
        session_id: String,
        message: String,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("no sessions supplied")]
    Empty,
    #[error("total {0} duration is zero")]
    ZeroDuration(&'static str),
    #[error("demand rate is zero")]
    ZeroDemand,
    #[error("session {0} has zero plugged-in duration")]
    ZeroPluggedDuration(String),
    #[error("session {0} requested zero energy")]
    ZeroRequestedEnergy(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("session count must be positive")]
    NoSessions,
    #[error("EVSE count must be positive")]
    NoEvses,
    #[error("CV fraction {0} is outside [0, 1]")]
    InvalidMix(f64),
    #[error("invalid range for {name}: [{lo}, {hi}]")]
    InvalidRange { name: &'static str, lo: f64, hi: f64 },
}

/// Minutes since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Minute(pub i64);

impl Minute {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Minute(dt.timestamp().div_euclid(60))
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0 * 60, 0).expect("minute stamp within chrono range")
    }

    /// Accepts RFC 3339 / ISO-8601 and the RFC 2822 form used by the ACN API.
    pub fn parse(text: &str) -> Result<Self, String> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Ok(Self::from_datetime(dt.with_timezone(&Utc)));
        }
        if let Ok(dt) = DateTime::parse_from_rfc2822(text) {
            return Ok(Self::from_datetime(dt.with_timezone(&Utc)));
        }
        Err(format!("unparseable timestamp {text:?}"))
    }

    pub fn minutes_since(self, earlier: Minute) -> f64 {
        (self.0 - earlier.0) as f64
    }

    /// Minutes elapsed since the preceding UTC midnight.
    pub fn minute_of_day(self) -> i64 {
        self.0.rem_euclid(24 * 60)
    }

    pub fn plus(self, minutes: i64) -> Minute {
        Minute(self.0 + minutes)
    }
}

impl fmt::Display for Minute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_datetime().to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl Serialize for Minute {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Minute {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Minute::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleClass {
    /// Human-driven connected vehicle; requests may be inflated.
    CV,
    /// Autonomous vehicle; requests are exact.
    AV,
}

/// One EV plug-in event: the request tuple plus what actually happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChargingSession {
    #[serde(rename = "sessionID")]
    pub session_id: String,
    #[serde(rename = "evseID")]
    pub evse_id: String,
    pub vehicle_class: VehicleClass,
    #[serde(rename = "kWhRequested")]
    pub energy_requested_kwh: f64,
    pub minutes_available: f64,
    #[serde(rename = "connectionTime")]
    pub plug_in_time: Minute,
    #[serde(rename = "doneChargingTime")]
    pub charge_end_time: Minute,
    #[serde(rename = "disconnectTime")]
    pub unplug_time: Minute,
    #[serde(rename = "kWhDelivered")]
    pub energy_delivered_kwh: f64,
    #[serde(rename = "receivingCapacityKW", default = "default_receiving_capacity")]
    pub receiving_capacity_kw: f64,
}

fn default_receiving_capacity() -> f64 {
    DEFAULT_RECEIVING_CAPACITY_KW
}

impl ChargingSession {
    /// Actual charging minutes, `charge_end - plug_in`.
    pub fn actual_minutes(&self) -> f64 {
        self.charge_end_time.minutes_since(self.plug_in_time)
    }

    /// Total plugged-in minutes, `unplug - plug_in`.
    pub fn plugged_minutes(&self) -> f64 {
        self.unplug_time.minutes_since(self.plug_in_time)
    }

    /// Checks the ordering, sign and AV-exactness invariants.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.plug_in_time <= self.charge_end_time && self.charge_end_time <= self.unplug_time) {
            return Err(format!(
                "timestamp inversion: plug-in {} / charge end {} / unplug {}",
                self.plug_in_time, self.charge_end_time, self.unplug_time
            ));
        }
        if !(self.energy_requested_kwh >= 0.0 && self.energy_requested_kwh.is_finite()) {
            return Err(format!("kWhRequested {} must be non-negative", self.energy_requested_kwh));
        }
        if !(self.energy_delivered_kwh >= 0.0 && self.energy_delivered_kwh.is_finite()) {
            return Err(format!("kWhDelivered {} must be non-negative", self.energy_delivered_kwh));
        }
        if !(self.minutes_available > 0.0 && self.minutes_available.is_finite()) {
            return Err(format!("minutesAvailable {} must be positive", self.minutes_available));
        }
        if !(self.receiving_capacity_kw > 0.0 && self.receiving_capacity_kw.is_finite()) {
            return Err(format!(
                "receivingCapacityKW {} must be positive",
                self.receiving_capacity_kw
            ));
        }
        if self.vehicle_class == VehicleClass::AV {
            let de = (self.energy_delivered_kwh - self.energy_requested_kwh).abs();
            let dt = (self.actual_minutes() - self.minutes_available).abs();
            if de > AV_EXACTNESS_TOLERANCE || dt > AV_EXACTNESS_TOLERANCE {
                return Err(format!(
                    "AV request is not exact (energy gap {de}, minutes gap {dt})"
                ));
            }
        }
        Ok(())
    }
}

/// Sessions grouped by EVSE, each group ordered by plug-in time (FCFS).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionBatch {
    groups: BTreeMap<String, Vec<ChargingSession>>,
}

impl SessionBatch {
    pub fn from_sessions(sessions: impl IntoIterator<Item = ChargingSession>) -> Self {
        let mut groups: BTreeMap<String, Vec<ChargingSession>> = BTreeMap::new();
        for s in sessions {
            groups.entry(s.evse_id.clone()).or_default().push(s);
        }
        for group in groups.values_mut() {
            group.sort_by_key(|s| s.plug_in_time);
        }
        SessionBatch { groups }
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<ChargingSession>> {
        &self.groups
    }

    pub fn group(&self, evse_id: &str) -> Option<&[ChargingSession]> {
        self.groups.get(evse_id).map(Vec::as_slice)
    }

    pub fn evse_ids(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    /// All sessions, EVSE by EVSE, each EVSE in plug-in order.
    pub fn iter(&self) -> impl Iterator<Item = &ChargingSession> {
        self.groups.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        let all: Vec<&ChargingSession> = self.iter().collect();
        serde_json::to_string_pretty(&all).expect("sessions serialize")
    }
}

const CANONICAL_FIELDS: [&str; 10] = [
    "sessionID",
    "evseID",
    "vehicleClass",
    "kWhRequested",
    "minutesAvailable",
    "connectionTime",
    "doneChargingTime",
    "disconnectTime",
    "kWhDelivered",
    "receivingCapacityKW",
];

/// ACN-Data field aliases, applied when the canonical field is absent.
///
/// | canonical          | ACN source                         |
/// |--------------------|------------------------------------|
/// | `evseID`           | `stationID`, then `spaceID`        |
/// | `kWhRequested`     | `userInputs.kWhRequested`          |
/// | `minutesAvailable` | `userInputs.minutesAvailable`      |
/// | `vehicleClass`     | absent in ACN; defaults to `"CV"`  |
///
/// `userInputs` may be an object or an array of objects; for arrays the
/// last entry (the most recent edit) wins.
pub const ACN_ALIASES: [(&str, &str); 4] = [
    ("evseID", "stationID"),
    ("evseID", "spaceID"),
    ("kWhRequested", "userInputs.kWhRequested"),
    ("minutesAvailable", "userInputs.minutesAvailable"),
];

fn lookup_alias<'a>(record: &'a Map<String, Value>, path: &str) -> Option<&'a Value> {
    match path.split_once('.') {
        None => record.get(path),
        Some((head, tail)) => match record.get(head)? {
            Value::Object(inner) => inner.get(tail),
            Value::Array(items) => items.iter().rev().find_map(|v| v.get(tail)),
            _ => None,
        },
    }
}

fn normalize_record(record: &Map<String, Value>) -> Map<String, Value> {
    let mut out = Map::new();
    for key in CANONICAL_FIELDS {
        if let Some(v) = record.get(key) {
            if !v.is_null() {
                out.insert(key.to_string(), v.clone());
            }
        }
    }
    for (canonical, source) in ACN_ALIASES {
        if !out.contains_key(canonical) {
            if let Some(v) = lookup_alias(record, source) {
                if !v.is_null() {
                    out.insert(canonical.to_string(), v.clone());
                }
            }
        }
    }
    out.entry("vehicleClass").or_insert_with(|| Value::String("CV".into()));
    out
}

/// Parses a JSON array of session records into a [`SessionBatch`].
///
/// Records violating the timestamp ordering (or any other session
/// invariant) abort the parse with a diagnostic naming the record.
pub fn parse_sessions(json_bytes: &[u8]) -> Result<SessionBatch, SessionError> {
    let root: Value = serde_json::from_slice(json_bytes)?;
    let Value::Array(records) = root else {
        return Err(SessionError::NotAnArray);
    };
    let mut sessions = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let Value::Object(obj) = record else {
            return Err(SessionError::Record {
                index,
                message: "record is not a JSON object".into(),
            });
        };
        let normalized = normalize_record(obj);
        let session: ChargingSession = serde_json::from_value(Value::Object(normalized))
            .map_err(|e| SessionError::Record {
                index,
                message: e.to_string(),
            })?;
        session.validate().map_err(|message| SessionError::Invariant {
            index,
            session_id: session.session_id.clone(),
            message,
        })?;
        if session.energy_requested_kwh == 0.0 {
            log::warn!(
                "session {} requested 0 kWh; it is excluded from ratio computations",
                session.session_id
            );
        }
        sessions.push(session);
    }
    Ok(SessionBatch::from_sessions(sessions))
}

/// Average energy demand rate in kW: `Σ ε_req / Σ δ_req · 60`.
pub fn demand_rate_kw(sessions: &[ChargingSession]) -> Result<f64, RateError> {
    if sessions.is_empty() {
        return Err(RateError::Empty);
    }
    let energy: f64 = sessions.iter().map(|s| s.energy_requested_kwh).sum();
    let minutes: f64 = sessions.iter().map(|s| s.minutes_available).sum();
    if minutes <= 0.0 {
        return Err(RateError::ZeroDuration("requested"));
    }
    Ok(energy / minutes * 60.0)
}

/// Actual delivery rate in kW: `Σ ε_act / Σ (τ_end − τ_strt) · 60`.
///
/// The caller is responsible for checking the result against the EVSE's
/// supply capacity.
pub fn delivery_rate_kw(sessions: &[ChargingSession]) -> Result<f64, RateError> {
    if sessions.is_empty() {
        return Err(RateError::Empty);
    }
    let energy: f64 = sessions.iter().map(|s| s.energy_delivered_kwh).sum();
    let minutes: f64 = sessions.iter().map(ChargingSession::actual_minutes).sum();
    if minutes <= 0.0 {
        return Err(RateError::ZeroDuration("actual"));
    }
    Ok(energy / minutes * 60.0)
}

/// ζ: delivery rate over demand rate for the sessions of one time slot.
pub fn rate_ratio(sessions: &[ChargingSession]) -> Result<f64, RateError> {
    let demand = demand_rate_kw(sessions)?;
    if demand == 0.0 {
        return Err(RateError::ZeroDemand);
    }
    Ok(delivery_rate_kw(sessions)? / demand)
}

/// ρ: actual charging minutes over plugged-in minutes.
pub fn time_ratio(session: &ChargingSession) -> Result<f64, RateError> {
    let plugged = session.plugged_minutes();
    if plugged <= 0.0 {
        return Err(RateError::ZeroPluggedDuration(session.session_id.clone()));
    }
    Ok(session.actual_minutes() / plugged)
}

/// Υ: delivered energy over requested energy.
pub fn energy_ratio(session: &ChargingSession) -> Result<f64, RateError> {
    if session.energy_requested_kwh == 0.0 {
        return Err(RateError::ZeroRequestedEnergy(session.session_id.clone()));
    }
    Ok(session.energy_delivered_kwh / session.energy_requested_kwh)
}

/// One EVSE port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvseConfig {
    pub evse_id: String,
    pub supply_capacity_kw: f64,
    pub switching_minutes: f64,
}

/// A DSO site: its total capacity and the EVSEs it feeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: String,
    pub dso_capacity_kw: f64,
    pub evses: Vec<EvseConfig>,
}

impl SiteConfig {
    pub fn evse(&self, evse_id: &str) -> Option<&EvseConfig> {
        self.evses.iter().find(|e| e.evse_id == evse_id)
    }

    /// Returns a copy that also lists every EVSE seen in `batch`, adding
    /// missing ones with the given default parameters.
    pub fn covering(&self, batch: &SessionBatch, default_capacity_kw: f64, default_switching: f64) -> SiteConfig {
        let mut site = self.clone();
        for id in batch.evse_ids() {
            if site.evse(id).is_none() {
                site.evses.push(EvseConfig {
                    evse_id: id.to_string(),
                    supply_capacity_kw: default_capacity_kw,
                    switching_minutes: default_switching,
                });
            }
        }
        site.evses.sort_by(|a, b| a.evse_id.cmp(&b.evse_id));
        site
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dso_capacity_kw > 0.0) {
            return Err(format!("dso_capacity_kw {} must be positive", self.dso_capacity_kw));
        }
        for e in &self.evses {
            if !(e.supply_capacity_kw > 0.0) {
                return Err(format!(
                    "EVSE {}: supply_capacity_kw {} must be positive",
                    e.evse_id, e.supply_capacity_kw
                ));
            }
            if !(e.switching_minutes >= 0.0) {
                return Err(format!(
                    "EVSE {}: switching_minutes {} must be non-negative",
                    e.evse_id, e.switching_minutes
                ));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic session generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub sessions: usize,
    pub evse_count: usize,
    /// Fraction of sessions from human-driven (CV) vehicles.
    pub cv_fraction: f64,
    /// Mean minutes between arrivals at one EVSE (exponential).
    pub mean_interarrival_minutes: f64,
    /// Energy actually taken by a vehicle, uniform in this range (kWh).
    pub energy_kwh: (f64, f64),
    /// Vehicle charging power, uniform in this range (kW).
    pub power_kw: (f64, f64),
    /// Minutes a CV lingers after charging completes, uniform in this range.
    pub cv_idle_minutes: (f64, f64),
    /// CV energy request = actual energy × U(lo, hi).
    pub energy_inflation: (f64, f64),
    /// CV time request = actual minutes × U(lo, hi).
    pub time_inflation: (f64, f64),
    pub receiving_capacity_kw: f64,
    /// First arrival, minutes since the Unix epoch.
    pub start: Minute,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            sessions: 200,
            evse_count: 4,
            cv_fraction: 0.7,
            mean_interarrival_minutes: 180.0,
            energy_kwh: (10.0, 50.0),
            power_kw: (3.0, 12.0),
            cv_idle_minutes: (30.0, 240.0),
            energy_inflation: (1.0, 2.0),
            time_inflation: (1.0, 3.0),
            receiving_capacity_kw: DEFAULT_RECEIVING_CAPACITY_KW,
            // 2019-10-16T00:00:00Z
            start: Minute(1_571_184_000 / 60),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.sessions == 0 {
            return Err(GeneratorError::NoSessions);
        }
        if self.evse_count == 0 {
            return Err(GeneratorError::NoEvses);
        }
        if !(0.0..=1.0).contains(&self.cv_fraction) {
            return Err(GeneratorError::InvalidMix(self.cv_fraction));
        }
        let ranges = [
            ("energy_kwh", self.energy_kwh, 0.0),
            ("power_kw", self.power_kw, 0.0),
            ("cv_idle_minutes", self.cv_idle_minutes, -f64::MIN_POSITIVE),
            ("energy_inflation", self.energy_inflation, 1.0 - f64::EPSILON),
            ("time_inflation", self.time_inflation, 1.0 - f64::EPSILON),
        ];
        for (name, (lo, hi), floor) in ranges {
            if !(lo > floor && lo <= hi && hi.is_finite()) {
                return Err(GeneratorError::InvalidRange { name, lo, hi });
            }
        }
        if !(self.mean_interarrival_minutes > 0.0) {
            return Err(GeneratorError::InvalidRange {
                name: "mean_interarrival_minutes",
                lo: self.mean_interarrival_minutes,
                hi: self.mean_interarrival_minutes,
            });
        }
        if !(self.receiving_capacity_kw > 0.0) {
            return Err(GeneratorError::InvalidRange {
                name: "receiving_capacity_kw",
                lo: self.receiving_capacity_kw,
                hi: self.receiving_capacity_kw,
            });
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

/// Draws a synthetic batch. A pure function of `(config, seed)`.
///
/// Sessions are dealt round-robin to EVSEs `evse-00..`, each EVSE with its
/// own exponential arrival clock. AVs request exactly what they take and
/// leave as soon as charging completes; CVs inflate both requests and
/// linger after charging.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<SessionBatch, GeneratorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / config.mean_interarrival_minutes).expect("positive rate");
    let mut clocks = vec![config.start.0; config.evse_count];
    let mut sessions = Vec::with_capacity(config.sessions);
    for i in 0..config.sessions {
        let evse = i % config.evse_count;
        clocks[evse] += gap.sample(&mut rng).round().max(1.0) as i64;
        let plug_in = Minute(clocks[evse]);
        let is_cv = rng.gen::<f64>() < config.cv_fraction;
        let energy = round_to(uniform(&mut rng, config.energy_kwh), 3).max(0.001);
        let power = uniform(&mut rng, config.power_kw).min(config.receiving_capacity_kw);
        let charge_minutes = (energy / power * 60.0).ceil().max(1.0);
        let charge_end = plug_in.plus(charge_minutes as i64);
        let (class, requested, minutes_available, unplug) = if is_cv {
            let e_mult = uniform(&mut rng, config.energy_inflation);
            let t_mult = uniform(&mut rng, config.time_inflation);
            let idle = uniform(&mut rng, config.cv_idle_minutes).round() as i64;
            (
                VehicleClass::CV,
                round_to(energy * e_mult, 3).max(energy),
                round_to(charge_minutes * t_mult, 1).max(charge_minutes),
                charge_end.plus(idle),
            )
        } else {
            (VehicleClass::AV, energy, charge_minutes, charge_end)
        };
        sessions.push(ChargingSession {
            session_id: format!("s{i:06}"),
            evse_id: format!("evse-{evse:02}"),
            vehicle_class: class,
            energy_requested_kwh: requested,
            minutes_available,
            plug_in_time: plug_in,
            charge_end_time: charge_end,
            unplug_time: unplug,
            energy_delivered_kwh: energy,
            receiving_capacity_kw: config.receiving_capacity_kw,
        });
    }
    Ok(SessionBatch::from_sessions(sessions))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A session plugged in at minute 0 with the given request and outcome.
    pub fn session(
        id: &str,
        requested_kwh: f64,
        requested_min: f64,
        delivered_kwh: f64,
        actual_min: i64,
        plugged_min: i64,
    ) -> ChargingSession {
        ChargingSession {
            session_id: id.into(),
            evse_id: "evse-00".into(),
            vehicle_class: VehicleClass::CV,
            energy_requested_kwh: requested_kwh,
            minutes_available: requested_min,
            plug_in_time: Minute(0),
            charge_end_time: Minute(actual_min),
            unplug_time: Minute(plugged_min),
            energy_delivered_kwh: delivered_kwh,
            receiving_capacity_kw: DEFAULT_RECEIVING_CAPACITY_KW,
        }
    }
}
