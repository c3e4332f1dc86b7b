//! Shared LSTM trunk with a softmax policy head and a scalar value head.
//!
//! Parameters live in one flat vector so that gradients, clipping and Adam
//! operate on plain slices. Gate order inside the recurrent block is
//! input, forget, candidate, output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{ActionDistribution, STATE_DIM};

use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn new(hidden: usize) -> Self {
        Layout { input: STATE_DIM, hidden }
    }

    fn cols(&self) -> usize {
        self.input + self.hidden
    }
    pub fn lstm_weight(&self) -> usize {
        0
    }
    pub fn lstm_bias(&self) -> usize {
        4 * self.hidden * self.cols()
    }
    pub fn policy_weight(&self) -> usize {
        self.lstm_bias() + 4 * self.hidden
    }
    pub fn policy_bias(&self) -> usize {
        self.policy_weight() + 2 * self.hidden
    }
    pub fn value_weight(&self) -> usize {
        self.policy_bias() + 2
    }
    pub fn value_bias(&self) -> usize {
        self.value_weight() + self.hidden
    }
    pub fn len(&self) -> usize {
        self.value_bias() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(name, shape, offset)` of every tensor, in storage order.
    pub fn tensors(&self) -> [(&'static str, Vec<usize>, usize); 6] {
        let h = self.hidden;
        [
            ("lstm.weight", vec![4 * h, self.cols()], self.lstm_weight()),
            ("lstm.bias", vec![4 * h], self.lstm_bias()),
            ("policy.weight", vec![2, h], self.policy_weight()),
            ("policy.bias", vec![2], self.policy_bias()),
            ("value.weight", vec![1, h], self.value_weight()),
            ("value.bias", vec![1], self.value_bias()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros(hidden: usize) -> Self {
        let layout = Layout::new(hidden);
        Params { layout, data: vec![0.0; layout.len()] }
    }

    /// Weights uniform in ±1/√H, biases zero except the forget gate at 1.
    pub fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Params::zeros(hidden);
        let l = p.layout;
        let bound = 1.0 / (hidden as f64).sqrt();
        let weights = [
            l.lstm_weight()..l.lstm_bias(),
            l.policy_weight()..l.policy_bias(),
            l.value_weight()..l.value_bias(),
        ];
        for range in weights {
            for w in &mut p.data[range] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        let forget = l.lstm_bias() + hidden;
        p.data[forget..forget + hidden].fill(1.0);
        p
    }
}

/// Recurrent carry Ψ: hidden and cell vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carry {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Carry {
    pub fn zeros(hidden: usize) -> Self {
        Carry { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: [f64; STATE_DIM],
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn check_carry(params: &Params, carry: &Carry) -> Result<(), LearnerError> {
    let h = params.layout.hidden;
    if carry.h.len() != h || carry.c.len() != h {
        return Err(LearnerError::Shape(format!(
            "carry has widths {}/{}, expected {h}",
            carry.h.len(),
            carry.c.len()
        )));
    }
    if params.data.len() != params.layout.len() {
        return Err(LearnerError::Shape(format!(
            "parameter vector has {} entries, expected {}",
            params.data.len(),
            params.layout.len()
        )));
    }
    Ok(())
}

fn lstm_step(params: &Params, x: &[f64; STATE_DIM], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let l = params.layout;
    let (hd, cols) = (l.hidden, l.cols());
    let w = &params.data[l.lstm_weight()..l.lstm_bias()];
    let b = &params.data[l.lstm_bias()..l.policy_weight()];
    let mut gates = b.to_vec();
    for (r, z) in gates.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for k in 0..STATE_DIM {
            acc += row[k] * x[k];
        }
        for k in 0..hd {
            acc += row[STATE_DIM + k] * h_prev[k];
        }
        *z += acc;
    }
    for k in 0..hd {
        gates[k] = sigmoid(gates[k]);
        gates[hd + k] = sigmoid(gates[hd + k]);
        gates[2 * hd + k] = gates[2 * hd + k].tanh();
        gates[3 * hd + k] = sigmoid(gates[3 * hd + k]);
    }
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for k in 0..hd {
        c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[2 * hd + k];
        tanh_c[k] = c[k].tanh();
        h[k] = gates[3 * hd + k] * tanh_c[k];
    }
    StepCache { x: *x, h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, c, tanh_c, h }
}

/// Runs the cell over `inputs` from `carry`; returns every hidden state and
/// the final carry.
pub fn rnn_forward(params: &Params, inputs: &[[f64; STATE_DIM]], carry: &Carry) -> Result<(Vec<Vec<f64>>, Carry), LearnerError> {
    check_carry(params, carry)?;
    let mut h = carry.h.clone();
    let mut c = carry.c.clone();
    let mut hs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let step = lstm_step(params, x, &h, &c);
        h = step.h;
        c = step.c;
        hs.push(h.clone());
    }
    Ok((hs, Carry { h, c }))
}

/// Forward pass of one decision, retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub steps: Vec<StepCache>,
    pub logits: [f64; 2],
    pub dist: ActionDistribution,
    pub value: f64,
}

impl Forward {
    /// Carry after the first input, handed to the following decision.
    pub fn carry_after_first(&self) -> Carry {
        Carry { h: self.steps[0].h.clone(), c: self.steps[0].c.clone() }
    }
}

pub fn forward(params: &Params, inputs: &[[f64; STATE_DIM]], carry: &Carry) -> Result<Forward, LearnerError> {
    check_carry(params, carry)?;
    if inputs.is_empty() {
        return Err(LearnerError::Shape("empty input sequence".into()));
    }
    let l = params.layout;
    let mut steps: Vec<StepCache> = Vec::with_capacity(inputs.len());
    for x in inputs {
        let step = match steps.last() {
            Some(prev) => lstm_step(params, x, &prev.h, &prev.c),
            None => lstm_step(params, x, &carry.h, &carry.c),
        };
        steps.push(step);
    }
    let h = &steps.last().expect("non-empty").h;
    let pw = &params.data[l.policy_weight()..l.policy_bias()];
    let pb = &params.data[l.policy_bias()..l.value_weight()];
    let vw = &params.data[l.value_weight()..l.value_bias()];
    let mut logits = [pb[0], pb[1]];
    let mut value = params.data[l.value_bias()];
    for k in 0..l.hidden {
        logits[0] += pw[k] * h[k];
        logits[1] += pw[l.hidden + k] * h[k];
        value += vw[k] * h[k];
    }
    let dist = ActionDistribution::from_logits(logits[0], logits[1]);
    if !(logits.iter().all(|z| z.is_finite()) && value.is_finite()) {
        return Err(LearnerError::NonFinite("forward pass".into()));
    }
    Ok(Forward { steps, logits, dist, value })
}

/// Policy and value for a state sequence; the returned carry is the state
/// after the first input.
pub fn policy_value_forward(
    params: &Params,
    inputs: &[[f64; STATE_DIM]],
    carry: &Carry,
) -> Result<(ActionDistribution, f64, Carry), LearnerError> {
    let f = forward(params, inputs, carry)?;
    let next = f.carry_after_first();
    Ok((f.dist, f.value, next))
}

/// Accumulates into `grad` the gradient of a scalar loss whose partials with
/// respect to the logits and value of `fwd` are `dlogits` and `dvalue`.
/// The incoming carry is treated as a constant.
pub fn backward(params: &Params, fwd: &Forward, dlogits: [f64; 2], dvalue: f64, grad: &mut [f64]) {
    let l = params.layout;
    let (hd, cols) = (l.hidden, l.cols());
    let last = fwd.steps.last().expect("non-empty");
    let pw = l.policy_weight();
    let vw = l.value_weight();

    let mut dh = vec![0.0; hd];
    for k in 0..hd {
        grad[pw + k] += dlogits[0] * last.h[k];
        grad[pw + hd + k] += dlogits[1] * last.h[k];
        grad[vw + k] += dvalue * last.h[k];
        dh[k] = dlogits[0] * params.data[pw + k] + dlogits[1] * params.data[pw + hd + k] + dvalue * params.data[vw + k];
    }
    grad[l.policy_bias()] += dlogits[0];
    grad[l.policy_bias() + 1] += dlogits[1];
    grad[l.value_bias()] += dvalue;

    let w = &params.data[l.lstm_weight()..l.lstm_bias()];
    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    for step in fwd.steps.iter().rev() {
        let g = &step.gates;
        for k in 0..hd {
            let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = step.tanh_c[k];
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dck * cand * i * (1.0 - i);
            dz[hd + k] = dck * step.c_prev[k] * f * (1.0 - f);
            dz[2 * hd + k] = dck * i * (1.0 - cand * cand);
            dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
            dc[k] = dck * f;
        }
        let mut dh_prev = vec![0.0; hd];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            let row = r * cols;
            let grow = &mut grad[l.lstm_weight() + row..l.lstm_weight() + row + cols];
            for k in 0..STATE_DIM {
                grow[k] += dzr * step.x[k];
            }
            for k in 0..hd {
                grow[STATE_DIM + k] += dzr * step.h_prev[k];
                dh_prev[k] += dzr * w[row + STATE_DIM + k];
            }
            grad[l.lstm_bias() + r] += dzr;
        }
        dh = dh_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_hidden_and_uniform_policy() {
        let p = Params::zeros(8);
        let carry = Carry::zeros(8);
        let (hs, _) = rnn_forward(&p, &[[0.3; STATE_DIM], [0.9; STATE_DIM]], &carry).unwrap();
        assert!(hs.iter().flatten().all(|&v| v == 0.0));
        let (dist, value, _) = policy_value_forward(&p, &[[0.5; STATE_DIM]], &carry).unwrap();
        assert_eq!((dist.schedule, dist.queue, value), (0.5, 0.5, 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut p = Params::zeros(16);
            for w in &mut p.data {
                *w = rng.gen_range(-1.0..=1.0);
            }
            let x: [f64; STATE_DIM] = std::array::from_fn(|_| rng.gen_range(0.0..=1.0));
            let carry = Carry::zeros(16);
            let a = rnn_forward(&p, &[x, x], &carry).unwrap();
            let b = rnn_forward(&p, &[x, x], &carry).unwrap();
            assert_eq!(a, b);
            assert!(a.0.iter().flatten().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let mut p = Params::zeros(4);
            for w in &mut p.data {
                *w = rng.gen_range(-3.0..=3.0);
            }
            let x: [f64; STATE_DIM] = std::array::from_fn(|_| rng.gen_range(0.0..=1.0));
            let (d, _, _) = policy_value_forward(&p, &[x], &Carry::zeros(4)).unwrap();
            assert!((d.schedule + d.queue - 1.0).abs() < 1e-12);
            assert!(d.schedule >= 0.0 && d.queue >= 0.0);
        }
    }

    #[test]
    fn policy_head_does_not_touch_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Params::init(8, &mut rng);
        let mut q = p.clone();
        let l = q.layout;
        for w in &mut q.data[l.policy_weight()..l.policy_weight() + 8] {
            *w += 0.3;
        }
        let carry = Carry::zeros(8);
        let a = policy_value_forward(&p, &[[0.2; STATE_DIM]], &carry).unwrap();
        let b = policy_value_forward(&q, &[[0.2; STATE_DIM]], &carry).unwrap();
        assert_eq!(a.1, b.1);
        assert_ne!(a.0, b.0);
    }

    #[test]
    fn init_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Params::init(64, &mut rng);
        let l = p.layout;
        assert!(p.data[..l.lstm_bias()].iter().all(|w| w.abs() <= 0.125));
        assert!(p.data[l.lstm_bias()..l.lstm_bias() + 64].iter().all(|&b| b == 0.0));
        assert!(p.data[l.lstm_bias() + 64..l.lstm_bias() + 128].iter().all(|&b| b == 1.0));
        assert_eq!(p.data[l.value_bias()], 0.0);
    }

    #[test]
    fn carry_width_is_checked() {
        let p = Params::zeros(4);
        assert!(matches!(rnn_forward(&p, &[[0.0; STATE_DIM]], &Carry::zeros(3)), Err(LearnerError::Shape(_))));
    }
}
