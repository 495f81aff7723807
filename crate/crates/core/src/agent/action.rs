//! Preference estimation and the coin-flip action space.

use rand::Rng as _;

use crate::ids::ItemId;
use crate::metrics::HistoryView;
use crate::seeding::Rng;
use crate::timeline::{ItemTimeline, Novelty};

use super::AgentError;

/// Share of new items among the `window` most recent history entries, each
/// judged at the stage it was consumed, clamped to `[p_min, 1 − p_min]`. An
/// empty history gives `p_min`.
pub fn estimate_new_preference(
    history: &HistoryView,
    timeline: &impl ItemTimeline,
    novelty: Novelty,
    window: usize,
    p_min: f64,
) -> f64 {
    let recent = &history.entries[..history.entries.len().min(window)];
    if recent.is_empty() {
        return p_min;
    }
    let new = recent
        .iter()
        .filter(|e| novelty.is_new(timeline.entry_stage(e.item), e.stage))
        .count();
    (new as f64 / recent.len() as f64).clamp(p_min, 1.0 - p_min)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    New,
    Old,
}

/// A fixed-size pool of candidate actions. Both source pools are ordered by
/// backbone score, best first; every draw takes the best remaining item of
/// the pool chosen by a coin with success probability `p_new`.
#[derive(Clone, Debug)]
pub struct ActionSpace {
    items: Vec<ItemId>,
    origins: Vec<Origin>,
    new_pool: Vec<ItemId>,
    old_pool: Vec<ItemId>,
    new_next: usize,
    old_next: usize,
    p_new: f64,
}

impl ActionSpace {
    /// Fills the space with `size` draws.
    pub fn build(
        p_new: f64,
        new_pool: Vec<ItemId>,
        old_pool: Vec<ItemId>,
        size: usize,
        rng: &mut Rng,
    ) -> Result<Self, AgentError> {
        let available = new_pool.len() + old_pool.len();
        if available < size {
            return Err(AgentError::ActionSpaceExhausted { wanted: size, available });
        }
        let mut space = Self {
            items: Vec::with_capacity(size),
            origins: Vec::with_capacity(size),
            new_pool,
            old_pool,
            new_next: 0,
            old_next: 0,
            p_new,
        };
        for _ in 0..size {
            space.refill(rng);
        }
        Ok(space)
    }

    /// Draws one more item. Returns `None` once both pools are exhausted.
    pub fn refill(&mut self, rng: &mut Rng) -> Option<ItemId> {
        let want_new = rng.random::<f64>() < self.p_new;
        let new_left = self.new_next < self.new_pool.len();
        let old_left = self.old_next < self.old_pool.len();
        let origin = match (want_new, new_left, old_left) {
            (true, true, _) | (false, true, false) => Origin::New,
            (_, _, true) => Origin::Old,
            (_, false, false) => return None,
        };
        let item = match origin {
            Origin::New => {
                self.new_next += 1;
                self.new_pool[self.new_next - 1]
            }
            Origin::Old => {
                self.old_next += 1;
                self.old_pool[self.old_next - 1]
            }
        };
        self.items.push(item);
        self.origins.push(origin);
        Some(item)
    }

    /// Removes a chosen item from the space.
    pub fn take(&mut self, item: ItemId) -> Option<Origin> {
        let pos = self.items.iter().position(|&i| i == item)?;
        self.items.swap_remove(pos);
        Some(self.origins.swap_remove(pos))
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count_new(&self) -> usize {
        self.origins.iter().filter(|o| **o == Origin::New).count()
    }
}
