use rand::seq::SliceRandom;
use rand::RngCore;

use super::ReplayBuffer;
use crate::error::{Error, Result};
use crate::game::Game;
use crate::net::{clip_gradient_norm, Adam, LossBreakdown, LossExample, Network, Objective};

/// Settings for one call of [`update_apprentice`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub grad_norm_order: f64,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 512,
            grad_clip: 1.0,
            grad_norm_order: 2.0,
        }
    }
}

/// Shuffles the buffer each epoch and takes one clipped optimizer step per
/// minibatch; the final batch of an epoch may be short. Returns the losses
/// measured before each step.
pub fn update_apprentice(
    game: &dyn Game,
    network: &mut Network,
    optimizer: &mut Adam,
    buffer: &ReplayBuffer,
    objective: Objective,
    settings: &UpdateSettings,
    rng: &mut dyn RngCore,
) -> Result<Vec<LossBreakdown>> {
    if buffer.is_empty() {
        return Err(Error::Empty("replay buffer"));
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let examples: Vec<LossExample> = buffer.iter().map(|s| s.to_loss_example(game)).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<LossExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (losses, grad) = network.gradient(&batch, objective)?;
            let grad = clip_gradient_norm(&grad, settings.grad_clip, settings.grad_norm_order);
            optimizer.apply(network.params_mut(), &grad)?;
            history.push(losses);
        }
    }
    Ok(history)
}

/// Component-wise mean of loss records.
pub fn mean_losses(history: &[LossBreakdown]) -> Option<LossBreakdown> {
    if history.is_empty() {
        return None;
    }
    let n = history.len() as f64;
    let mean_opt = |f: &dyn Fn(&LossBreakdown) -> Option<f64>| {
        let vals: Vec<f64> = history.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Some(LossBreakdown {
        value_loss: history.iter().map(|l| l.value_loss).sum::<f64>() / n,
        policy_loss: history.iter().map(|l| l.policy_loss).sum::<f64>() / n,
        policy_inference_loss: mean_opt(&|l| l.policy_inference_loss),
        lambda: mean_opt(&|l| l.lambda),
        total: history.iter().map(|l| l.total).sum::<f64>() / n,
    })
}
