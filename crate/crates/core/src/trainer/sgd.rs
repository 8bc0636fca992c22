use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};
use crate::model::{Grads, ModelState};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = mu * v + (g + wd * w)`, `w -= lr * v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    pub buffers: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            buffers: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.buffers.clear();
    }

    pub fn step(&mut self, model: &mut ModelState, grads: &Grads, lr: f64) -> Result<()> {
        let lr = lr as f32;
        let g = grads.slices();
        let mut params = model.param_slices_mut();
        if g.len() != params.len() || g.iter().zip(&params).any(|(a, b)| a.len() != b.len()) {
            return Err(OpgError::validation("gradient layout does not match the model"));
        }
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(&g).zip(&mut self.buffers) {
            for ((w, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                let d = gi + self.weight_decay * *w;
                *vi = self.momentum * *vi + d;
                *w -= lr * *vi;
            }
        }
        model.step_counter += 1;
        Ok(())
    }
}
