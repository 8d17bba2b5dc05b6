use std::collections::VecDeque;

use super::{augment_symmetry, TrainingSample};
use crate::error::{Error, Result};
use crate::game::Game;

/// Bounded FIFO of training samples. Samples enter together with their
/// mirrored twin; the oldest entries are evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<TrainingSample>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::InvalidArgument(format!(
                "buffer capacity must hold a sample and its twin, got {capacity}"
            )));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total samples ever inserted, twins included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, i: usize) -> &TrainingSample {
        &self.items[i]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &TrainingSample> {
        self.items.iter()
    }

    /// Inserts `sample` and its mirror image.
    pub fn push_augmented(&mut self, game: &dyn Game, sample: &TrainingSample) -> Result<()> {
        let (a, b) = augment_symmetry(game, sample)?;
        self.push_raw(a);
        self.push_raw(b);
        Ok(())
    }

    /// Inserts one sample without augmentation (used when restoring).
    pub fn push_raw(&mut self, sample: TrainingSample) {
        while self.items.len() >= self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(sample);
        self.inserted += 1;
    }
}
