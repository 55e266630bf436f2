use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DistillError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// One tanh hidden layer.
    Mlp1 {
        hidden: usize,
    },
}

impl Architecture {
    pub fn num_params(self, input_dim: usize) -> usize {
        match self {
            Architecture::Linear => input_dim,
            Architecture::Mlp1 { hidden } => hidden * input_dim + 2 * hidden + 1,
        }
    }
}

/// Pointwise scorer over fixed-length feature vectors.
///
/// The MLP parameter layout is `W1` (hidden x input, row-major), `b1`, `w2`,
/// then the output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentScorer {
    architecture: Architecture,
    input_dim: usize,
    theta: Vec<f64>,
}

impl StudentScorer {
    /// Linear scorers start at zero; MLPs draw uniform(-0.1, 0.1) weights from
    /// `seed`.
    pub fn init(architecture: Architecture, input_dim: usize, seed: u64) -> Result<Self, DistillError> {
        if input_dim == 0 {
            return Err(DistillError::InvalidInput("feature dimension must be positive".into()));
        }
        if let Architecture::Mlp1 { hidden: 0 } = architecture {
            return Err(DistillError::InvalidInput(
                "hidden layer must have at least one unit".into(),
            ));
        }
        let n = architecture.num_params(input_dim);
        let theta = match architecture {
            Architecture::Linear => vec![0.0; n],
            Architecture::Mlp1 { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
            }
        };
        Ok(StudentScorer {
            architecture,
            input_dim,
            theta,
        })
    }

    pub fn from_parts(architecture: Architecture, input_dim: usize, theta: Vec<f64>) -> Result<Self, DistillError> {
        if theta.len() != architecture.num_params(input_dim) {
            return Err(DistillError::InvalidInput(format!(
                "{} parameters do not fit {architecture:?} over {input_dim} features",
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(DistillError::InvalidInput("parameters must be finite".into()));
        }
        Ok(StudentScorer {
            architecture,
            input_dim,
            theta,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.forward(x, None)
    }

    /// Score and its gradient with respect to the parameters.
    pub fn score_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.theta.len()];
        let s = self.forward(x, Some(&mut grad));
        (s, grad)
    }

    fn forward(&self, x: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
        assert_eq!(x.len(), self.input_dim, "feature vector has wrong dimension");
        let d = self.input_dim;
        match self.architecture {
            Architecture::Linear => {
                if let Some(g) = grad {
                    g.copy_from_slice(x);
                }
                self.theta.iter().zip(x).map(|(t, v)| t * v).sum()
            }
            Architecture::Mlp1 { hidden } => {
                let (w1, rest) = self.theta.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let h: Vec<f64> = (0..hidden)
                    .map(|k| {
                        let row = &w1[k * d..(k + 1) * d];
                        (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[k]).tanh()
                    })
                    .collect();
                let out = w2.iter().zip(&h).map(|(w, a)| w * a).sum::<f64>() + b2[0];
                if let Some(g) = grad {
                    let (gw1, rest) = g.split_at_mut(hidden * d);
                    let (gb1, rest) = rest.split_at_mut(hidden);
                    let (gw2, gb2) = rest.split_at_mut(hidden);
                    for k in 0..hidden {
                        let dpre = w2[k] * (1.0 - h[k] * h[k]);
                        for (gw, v) in gw1[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *gw = dpre * v;
                        }
                        gb1[k] = dpre;
                        gw2[k] = h[k];
                    }
                    gb2[0] = 1.0;
                }
                out
            }
        }
    }
}
