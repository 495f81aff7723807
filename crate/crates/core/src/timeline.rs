//! Item entry times and the old/new classification used by every metric and
//! reward in the crate.

use serde::{Deserialize, Serialize};

use crate::ids::ItemId;

/// Read access to when each item entered the system.
///
/// Stage 0 is the initial item set (everything first seen in the training
/// period); stage `m >= 1` is the m-th test stage.
pub trait ItemTimeline {
    fn entry_stage(&self, item: ItemId) -> u32;

    /// Finer-grained entry key used to order items oldest-first. Ties are
    /// broken by item id by the callers.
    fn entry_time(&self, item: ItemId) -> i64;
}

/// Decides whether an item counts as "new" at a given stage.
///
/// An item is new at stage `m` when it entered during one of the trailing
/// `window` stages ending at `m`. Items of the initial set (stage 0) are never
/// new.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Novelty {
    pub window: u32,
}

impl Default for Novelty {
    fn default() -> Self {
        Self { window: 1 }
    }
}

impl Novelty {
    pub fn new(window: u32) -> Self {
        Self { window }
    }

    #[inline]
    pub fn is_new(&self, entry_stage: u32, at_stage: u32) -> bool {
        entry_stage >= 1 && entry_stage <= at_stage && entry_stage + self.window > at_stage
    }
}

/// A plain in-memory timeline, handy for tests and hand-built instances.
#[derive(Clone, Debug, Default)]
pub struct TimelineTable {
    pub entry_stage: Vec<u32>,
    pub entry_time: Vec<i64>,
}

impl TimelineTable {
    pub fn new(entry_stage: Vec<u32>, entry_time: Vec<i64>) -> Self {
        assert_eq!(entry_stage.len(), entry_time.len());
        Self {
            entry_stage,
            entry_time,
        }
    }
}

impl ItemTimeline for TimelineTable {
    fn entry_stage(&self, item: ItemId) -> u32 {
        self.entry_stage[item.index()]
    }

    fn entry_time(&self, item: ItemId) -> i64 {
        self.entry_time[item.index()]
    }
}
