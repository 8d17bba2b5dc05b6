//! Gradient-norm clipping and the Adam update.
//!
//! Parameters and moment estimates are rounded to f32 after every step, so a
//! checkpoint (which stores f32) restores training state exactly.

use super::round_f32;
use crate::error::{Error, Result};

/// Rescales `g` to norm `threshold` when its `order`-norm exceeds it.
/// `order` may be `f64::INFINITY` for the max-norm.
pub fn clip_gradient_norm(g: &[f64], threshold: f64, order: f64) -> Vec<f64> {
    let norm = if order.is_infinite() {
        g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        g.iter()
            .map(|v| v.abs().powf(order))
            .sum::<f64>()
            .powf(1.0 / order)
    };
    if norm <= threshold || norm == 0.0 {
        return g.to_vec();
    }
    let scale = threshold / norm;
    g.iter().map(|v| v * scale).collect()
}

#[derive(Debug, Clone, PartialEq)]
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
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {} / moments {} / params {}",
                grad.len(),
                self.m.len(),
                params.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                head: "optimizer",
                what: "gradient",
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            let m = round_f32(self.beta1 * self.m[i] + (1.0 - self.beta1) * g);
            let v = round_f32(self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g);
            self.m[i] = m;
            self.v[i] = v;
            if m != 0.0 {
                let update = self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
                params[i] = round_f32(params[i] - update);
            }
        }
        Ok(())
    }
}
