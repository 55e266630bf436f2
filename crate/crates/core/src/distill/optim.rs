use serde::{Deserialize, Serialize};

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise logistic loss over every pair the teacher orders strictly:
/// sum of ln(1 + exp(-(s_i - s_j))) for r_i < r_j. Tied ranks contribute 0.
///
/// Panics if the slices differ in length.
pub fn ranknet_loss(teacher_ranks: &[usize], scores: &[f64]) -> f64 {
    assert_eq!(teacher_ranks.len(), scores.len(), "ranks and scores differ in length");
    let mut loss = 0.0;
    for (i, &ri) in teacher_ranks.iter().enumerate() {
        for (j, &rj) in teacher_ranks.iter().enumerate() {
            if ri < rj {
                loss += softplus(-(scores[i] - scores[j]));
            }
        }
    }
    loss
}

/// Analytic gradient of [`ranknet_loss`] with respect to the scores.
pub fn ranknet_grad(teacher_ranks: &[usize], scores: &[f64]) -> Vec<f64> {
    assert_eq!(teacher_ranks.len(), scores.len(), "ranks and scores differ in length");
    let mut grad = vec![0.0; scores.len()];
    for (i, &ri) in teacher_ranks.iter().enumerate() {
        for (j, &rj) in teacher_ranks.iter().enumerate() {
            if ri < rj {
                let g = sigmoid(-(scores[i] - scores[j]));
                grad[i] -= g;
                grad[j] += g;
            }
        }
    }
    grad
}

/// Number of pairs with strictly different teacher ranks.
pub fn ordered_pairs(teacher_ranks: &[usize]) -> usize {
    teacher_ranks
        .iter()
        .map(|ri| teacher_ranks.iter().filter(|rj| ri < *rj).count())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates and step count for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub params: AdamWParams,
}

impl OptimizerState {
    pub fn new(dim: usize, params: AdamWParams) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            params,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
pub fn adamw_step(state: &mut OptimizerState, theta: &mut [f64], grad: &[f64]) {
    assert_eq!(theta.len(), grad.len(), "parameter and gradient lengths differ");
    assert_eq!(theta.len(), state.m.len(), "optimizer state has wrong dimension");
    let p = state.params;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - p.beta1.powi(t);
    let c2 = 1.0 - p.beta2.powi(t);
    for k in 0..theta.len() {
        state.m[k] = p.beta1 * state.m[k] + (1.0 - p.beta1) * grad[k];
        state.v[k] = p.beta2 * state.v[k] + (1.0 - p.beta2) * grad[k] * grad[k];
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        theta[k] -= p.lr * (m_hat / (v_hat.sqrt() + p.eps) + p.weight_decay * theta[k]);
    }
}
