use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::net::Network;

/// Frozen apprentice snapshots, sampled uniformly.
#[derive(Debug, Clone, Default)]
pub struct SelfPlayPopulation {
    snapshots: Vec<Arc<Network>>,
}

impl SelfPlayPopulation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, snapshot: Arc<Network>) {
        self.snapshots.push(snapshot);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Arc<Network>] {
        &self.snapshots
    }

    /// Uniform draw over all snapshots. An empty population yields
    /// `current`, the live apprentice.
    pub fn sample(
        &self,
        current: &Arc<Network>,
        rng: &mut dyn RngCore,
    ) -> (Arc<Network>, Option<usize>) {
        if self.snapshots.is_empty() {
            return (Arc::clone(current), None);
        }
        let i = rng.random_range(0..self.snapshots.len());
        (Arc::clone(&self.snapshots[i]), Some(i))
    }
}
