//! Per-step reward components and their combination.

use crate::ids::ItemId;
use crate::metrics::{exposure, list_entries, tgf_of};
use crate::timeline::{ItemTimeline, Novelty};

/// Largest magnitude of [`reward_fair`]: `2 / (1 + tanh 2)`.
pub fn fair_reward_bound() -> f64 {
    2.0 / (1.0 + 2f64.tanh())
}

/// `γ·1[new] + (1−γ)·1[new]·1[clicked]`.
pub fn reward_new(is_new: bool, clicked: bool, gamma: f64) -> f64 {
    if !is_new {
        return 0.0;
    }
    gamma + if clicked { 1.0 - gamma } else { 0.0 }
}

/// `1[clicked] / log2(rank + 1)`; `rank` starts at 1.
pub fn reward_acc(clicked: bool, rank: usize) -> f64 {
    debug_assert!(rank >= 1, "ranks start at 1");
    if clicked {
        exposure(rank.max(1))
    } else {
        0.0
    }
}

/// Fairness reward from the per-user unfairness before and after a step,
/// `2·tanh(before − after) / (1 + tanh 2)`.
pub fn fair_reward_from_gaps(before: f64, after: f64) -> f64 {
    2.0 * (before - after).tanh() / (1.0 + 2f64.tanh())
}

/// Fairness reward of appending one item to `before` (giving `after`), where
/// per-user unfairness is `|TGF(list) − history_tgf|` and an empty list has
/// TGF 0.
pub fn reward_fair(
    before: &[ItemId],
    after: &[ItemId],
    history_tgf: f64,
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> f64 {
    let list_tgf = |items: &[ItemId]| {
        if items.is_empty() {
            0.0
        } else {
            tgf_of(&list_entries(items, timeline, stage, novelty), timeline)
        }
    };
    let gap_before = (list_tgf(before) - history_tgf).abs();
    let gap_after = (list_tgf(after) - history_tgf).abs();
    fair_reward_from_gaps(gap_before, gap_after)
}

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct RewardParts {
    pub acc: f64,
    pub fair: f64,
    pub new: f64,
}

impl RewardParts {
    pub fn total(&self, alpha: f64, beta: f64) -> f64 {
        reward_total(self, alpha, beta)
    }
}

/// `R_acc + α·R_fair + β·R_new`.
pub fn reward_total(parts: &RewardParts, alpha: f64, beta: f64) -> f64 {
    parts.acc + alpha * parts.fair + beta * parts.new
}
