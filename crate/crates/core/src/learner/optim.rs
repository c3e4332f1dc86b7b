use serde::{Deserialize, Serialize};

use super::LearnerError;

/// Euclidean norm over all components.
pub fn grad_norm(gradient: &[f64]) -> f64 {
    gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Global-norm clipping: `g · min(1, clip / ‖g‖₂)`.
///
/// The source expresses the change as a ratio against `max(‖θ‖₂, θ̂)`; the
/// clipping reading is the one that is well defined.
pub fn clipped_delta(gradient: &[f64], clip_threshold: f64) -> Result<Vec<f64>, LearnerError> {
    if !(clip_threshold > 0.0) {
        return Err(LearnerError::Config(format!("clip threshold {clip_threshold} must be positive")));
    }
    let norm = grad_norm(gradient);
    let factor = if norm > clip_threshold { clip_threshold / norm } else { 1.0 };
    Ok(gradient.iter().map(|g| g * factor).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One descent step along `delta`.
    pub fn apply(&mut self, params: &mut [f64], delta: &[f64]) -> Result<(), LearnerError> {
        if params.len() != delta.len() || params.len() != self.m.len() {
            return Err(LearnerError::Shape(format!(
                "update of {} entries against {} parameters and {} moments",
                delta.len(),
                params.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * delta[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * delta[i] * delta[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
