//! Trained model and its JSON container.
//!
//! ```text
//! { "format": "evsched-model/1",
//!   "config": TrainConfig, "hidden": H, "episodes_completed": u64,
//!   "optimizer_step": u64, "risk": RiskEstimate,
//!   "agents": [evse_id, ...],
//!   "tensors": [{ "name": str, "shape": [usize], "data": [f64] }, ...] }
//! ```
//!
//! Tensor names: `coordinator.{lstm.weight,lstm.bias,policy.weight,
//! policy.bias,value.weight,value.bias}`, `optimizer.m`, `optimizer.v`, and
//! `agent.<evse_id>.carry.h` / `agent.<evse_id>.carry.c` per agent. Agent
//! parameters equal the coordinator's at every sync point and are not
//! stored separately.

use serde::{Deserialize, Serialize};

use crate::mdp::ActionDistribution;
use crate::risk::RiskEstimate;
use crate::session::ChargingSession;

use super::network::{policy_value_forward, Carry, Layout, Params};
use super::optim::Adam;
use super::train::{decision_inputs, TrainConfig};
use super::LearnerError;

pub const MODEL_FORMAT: &str = "evsched-model/1";

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCarry {
    pub evse_id: String,
    pub carry: Carry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub layout: Layout,
    pub coordinator: Params,
    pub adam: Adam,
    pub agents: Vec<AgentCarry>,
    pub episodes_completed: u64,
    pub risk: RiskEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    config: TrainConfig,
    hidden: usize,
    episodes_completed: u64,
    optimizer_step: u64,
    risk: RiskEstimate,
    agents: Vec<String>,
    tensors: Vec<Tensor>,
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> LearnerError {
    LearnerError::Model { field: field.into(), message: message.into() }
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let mut tensors = Vec::new();
        for (name, shape, offset) in self.layout.tensors() {
            let len: usize = shape.iter().product();
            tensors.push(Tensor {
                name: format!("coordinator.{name}"),
                shape,
                data: self.coordinator.data[offset..offset + len].to_vec(),
            });
        }
        let n = self.layout.len();
        tensors.push(Tensor { name: "optimizer.m".into(), shape: vec![n], data: self.adam.m.clone() });
        tensors.push(Tensor { name: "optimizer.v".into(), shape: vec![n], data: self.adam.v.clone() });
        for a in &self.agents {
            let h = self.layout.hidden;
            tensors.push(Tensor { name: format!("agent.{}.carry.h", a.evse_id), shape: vec![h], data: a.carry.h.clone() });
            tensors.push(Tensor { name: format!("agent.{}.carry.c", a.evse_id), shape: vec![h], data: a.carry.c.clone() });
        }
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            config: self.config.clone(),
            hidden: self.layout.hidden,
            episodes_completed: self.episodes_completed,
            optimizer_step: self.adam.step,
            risk: self.risk.clone(),
            agents: self.agents.iter().map(|a| a.evse_id.clone()).collect(),
            tensors,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnerError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(field_err("format", format!("expected {MODEL_FORMAT:?}, found {:?}", file.format)));
        }
        if file.hidden == 0 {
            return Err(field_err("hidden", "must be positive"));
        }
        if file.config.hidden != file.hidden {
            return Err(field_err("config.hidden", format!("{} disagrees with hidden {}", file.config.hidden, file.hidden)));
        }
        file.config.validate().map_err(|e| field_err("config", e.to_string()))?;
        let layout = Layout::new(file.hidden);

        let take = |name: &str, shape: &[usize]| -> Result<&Tensor, LearnerError> {
            let t = file
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| field_err(format!("tensors.{name}"), "missing"))?;
            if t.shape != shape {
                return Err(field_err(format!("tensors.{name}.shape"), format!("expected {shape:?}, found {:?}", t.shape)));
            }
            let len: usize = shape.iter().product();
            if t.data.len() != len {
                return Err(field_err(format!("tensors.{name}.data"), format!("expected {len} values, found {}", t.data.len())));
            }
            if let Some(i) = t.data.iter().position(|x| !x.is_finite()) {
                return Err(field_err(format!("tensors.{name}.data[{i}]"), "not finite"));
            }
            Ok(t)
        };

        let mut coordinator = Params::zeros(file.hidden);
        for (name, shape, offset) in layout.tensors() {
            let t = take(&format!("coordinator.{name}"), &shape)?;
            coordinator.data[offset..offset + t.data.len()].copy_from_slice(&t.data);
        }
        let n = layout.len();
        let mut adam = Adam::new(n, file.config.learning_rate);
        adam.m = take("optimizer.m", &[n])?.data.clone();
        adam.v = take("optimizer.v", &[n])?.data.clone();
        if adam.v.iter().any(|&v| v < 0.0) {
            return Err(field_err("tensors.optimizer.v", "second moments must be non-negative"));
        }
        adam.step = file.optimizer_step;

        let mut agents = Vec::with_capacity(file.agents.len());
        for id in &file.agents {
            let h = take(&format!("agent.{id}.carry.h"), &[file.hidden])?.data.clone();
            let c = take(&format!("agent.{id}.carry.c"), &[file.hidden])?.data.clone();
            agents.push(AgentCarry { evse_id: id.clone(), carry: Carry { h, c } });
        }
        let r = &file.risk;
        if !(0.0..1.0).contains(&r.cvar_normalized) {
            return Err(field_err("risk.cvar_normalized", format!("{} outside [0, 1)", r.cvar_normalized)));
        }
        Ok(TrainedModel {
            config: file.config,
            layout,
            coordinator,
            adam,
            agents,
            episodes_completed: file.episodes_completed,
            risk: file.risk,
        })
    }

    /// Execution-time policy for one EVSE, starting from its stored carry
    /// (zeros for an EVSE the model has not seen).
    pub fn policy(&self, evse_id: &str) -> AgentPolicy<'_> {
        let carry = self
            .agents
            .iter()
            .find(|a| a.evse_id == evse_id)
            .map(|a| a.carry.clone())
            .unwrap_or_else(|| Carry::zeros(self.layout.hidden));
        AgentPolicy { params: &self.coordinator, carry }
    }
}

pub struct AgentPolicy<'a> {
    params: &'a Params,
    carry: Carry,
}

impl AgentPolicy<'_> {
    /// Policy over {schedule, queue} for `head` with `next` waiting behind it.
    pub fn decide(&mut self, head: &ChargingSession, next: Option<&ChargingSession>) -> Result<ActionDistribution, LearnerError> {
        let inputs = decision_inputs(head, next);
        let (dist, _, carry) = policy_value_forward(self.params, &inputs, &self.carry)?;
        self.carry = carry;
        Ok(dist)
    }
}
