use std::collections::VecDeque;

use rand::Rng as _;

use crate::ids::ItemId;
use crate::seeding::Rng;

/// One transition. `next_actions` holds the embeddings of the action space
/// observed after the step, concatenated; the bootstrapped target maximizes
/// over them.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: ItemId,
    pub action_vector: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_actions: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of experiences; the oldest is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions since creation, evicted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    /// A uniformly random stored experience.
    pub fn sample(&self, rng: &mut Rng) -> Option<&Experience> {
        if self.items.is_empty() {
            return None;
        }
        self.items.get(rng.random_range(0..self.items.len()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}
