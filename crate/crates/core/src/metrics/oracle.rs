//! Brute-force twins of the metric functions, written as plain nested loops
//! straight from the definitions. They are slow on purpose and share no code
//! with the optimized paths apart from the input types.

use std::collections::BTreeMap;

use crate::ids::{ItemId, UserId};
use crate::timeline::{ItemTimeline, Novelty};

use super::{HistoryView, MetricsError, PositiveSets, RankedList};

fn discount(rank: usize) -> f64 {
    // log2(x) = ln(x) / ln(2)
    std::f64::consts::LN_2 / ((rank as f64) + 1.0).ln()
}

fn fresh(entry: u32, stage: u32, window: u32) -> bool {
    if entry == 0 || entry > stage {
        return false;
    }
    stage - entry < window
}

/// `slots[i] = (item, is_new)` at rank `i + 1`.
fn tgf_slots(slots: &[(ItemId, bool)], timeline: &impl ItemTimeline) -> f64 {
    let older = |a: ItemId, b: ItemId| {
        let (ta, tb) = (timeline.entry_time(a), timeline.entry_time(b));
        ta < tb || (ta == tb && a < b)
    };
    let mut n_old = 0usize;
    let mut n_new = 0usize;
    for &(_, is_new) in slots {
        if is_new {
            n_new += 1;
        } else {
            n_old += 1;
        }
    }

    let mut old_sum = 0.0;
    let mut new_sum = 0.0;
    for (pos, &(item, is_new)) in slots.iter().enumerate() {
        // 1-based index within its own group when sorted oldest-first.
        let mut index = 1usize;
        for &(other, other_new) in slots {
            if other_new == is_new && other != item && older(other, item) {
                index += 1;
            }
        }
        let exp = discount(pos + 1);
        if is_new {
            let w = if n_new == 1 {
                1.0
            } else {
                1.0 + (index as f64 - 1.0) * (n_old as f64 - 1.0) / (n_new as f64 - 1.0)
            };
            new_sum += w * exp;
        } else {
            let w = (n_old + 1 - index) as f64;
            old_sum += w * exp;
        }
    }
    let old_term = if n_old > 0 { old_sum / n_old as f64 } else { 0.0 };
    let new_term = if n_new > 0 { new_sum / n_new as f64 } else { 0.0 };
    old_term - new_term
}

pub fn oracle_tgf(
    list: &RankedList,
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> Result<f64, MetricsError> {
    if list.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let mut slots = Vec::new();
    for &item in list.items() {
        slots.push((item, fresh(timeline.entry_stage(item), stage, novelty.window)));
    }
    Ok(tgf_slots(&slots, timeline))
}

pub fn oracle_tgf_history(
    history: &HistoryView,
    timeline: &impl ItemTimeline,
    novelty: Novelty,
) -> Result<f64, MetricsError> {
    if history.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let mut slots = Vec::new();
    for h in &history.entries {
        slots.push((h.item, fresh(timeline.entry_stage(h.item), h.stage, novelty.window)));
    }
    Ok(tgf_slots(&slots, timeline))
}

pub fn oracle_unf(
    lists: &[RankedList],
    histories: &BTreeMap<UserId, HistoryView>,
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> Result<f64, MetricsError> {
    let mut gaps = Vec::new();
    for list in lists {
        if let Some(h) = histories.get(&list.user) {
            if h.is_empty() {
                continue;
            }
            let a = oracle_tgf(list, timeline, stage, novelty)?;
            let b = oracle_tgf_history(h, timeline, novelty)?;
            gaps.push((a - b) * (a - b));
        }
    }
    if gaps.is_empty() {
        return Err(MetricsError::NoUsers);
    }
    let mut total = 0.0;
    for g in &gaps {
        total += g;
    }
    Ok(total / gaps.len() as f64)
}

pub fn oracle_hit_rate(lists: &[RankedList], truth: &PositiveSets) -> Result<f64, MetricsError> {
    let mut users = 0;
    let mut hits = 0;
    for list in lists {
        let Some(pos) = truth.get(&list.user) else { continue };
        if pos.is_empty() {
            continue;
        }
        users += 1;
        let mut hit = false;
        for item in list.items() {
            for p in pos {
                if item == p {
                    hit = true;
                }
            }
        }
        if hit {
            hits += 1;
        }
    }
    if users == 0 {
        return Err(MetricsError::NoUsers);
    }
    Ok(hits as f64 / users as f64)
}

pub fn oracle_ndcg(lists: &[RankedList], truth: &PositiveSets) -> Result<f64, MetricsError> {
    let mut users = 0;
    let mut total = 0.0;
    for list in lists {
        let Some(pos) = truth.get(&list.user) else { continue };
        if pos.is_empty() {
            continue;
        }
        users += 1;
        let mut dcg = 0.0;
        for (i, item) in list.items().iter().enumerate() {
            if pos.iter().any(|p| p == item) {
                dcg += discount(i + 1);
            }
        }
        let mut idcg = 0.0;
        let mut r = 1;
        while r <= pos.len() && r <= list.len() {
            idcg += discount(r);
            r += 1;
        }
        if idcg > 0.0 {
            total += dcg / idcg;
        }
    }
    if users == 0 {
        return Err(MetricsError::NoUsers);
    }
    Ok(total / users as f64)
}

pub fn oracle_new_item_coverage(
    lists: &[RankedList],
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> f64 {
    let mut slots = 0;
    let mut new = 0;
    for list in lists {
        for &item in list.items() {
            slots += 1;
            if fresh(timeline.entry_stage(item), stage, novelty.window) {
                new += 1;
            }
        }
    }
    if slots == 0 {
        0.0
    } else {
        new as f64 / slots as f64
    }
}
