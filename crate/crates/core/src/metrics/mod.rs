//! Evaluation quantities: position exposure, entry-time-weighted group
//! fairness (TGF), its per-user divergence from history (UNF), hit rate,
//! NDCG, new-item coverage and the accuracy/fairness trade-off score.
//!
//! Every operation here is pure. The [`oracle`] submodule re-implements the
//! same contracts with naive loops for cross-checking.

pub mod oracle;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::corpus::HistoryEvent;
use crate::ids::{ItemId, UserId};
use crate::timeline::{ItemTimeline, Novelty};

pub use report::{MetricsReport, StageMetrics, Summary, REPORT_COLUMNS};

/// Positive item sets per user for one stage.
pub type PositiveSets = BTreeMap<UserId, BTreeSet<ItemId>>;

/// Floor applied to |TGF| of the evaluated method in [`tradeoff_delta_t`].
pub const TGF_FLOOR: f64 = 1e-6;

/// Human-readable definition printed next to every δT value.
pub const DELTA_T_DEFINITION: &str =
    "delta_T (this artifact's definition) = 100% * 0.5 * (HR_m / HR_b + |TGF_b| / max(|TGF_m|, 1e-6))";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("rank must be at least 1, got {0}")]
    InvalidRank(usize),
    #[error("cannot compute TGF of an empty list")]
    EmptyList,
    #[error("item {item} appears twice in the list of {user}")]
    DuplicateItem { user: UserId, item: ItemId },
    #[error("no user has ground truth to evaluate")]
    NoUsers,
    #[error("backbone hit rate is zero; delta_T undefined")]
    ZeroBackboneHitRate,
    #[error("reports disagree: {0}")]
    Incompatible(String),
}

/// Share of attention received at `rank` (1-based): `1 / log2(rank + 1)`.
pub fn exposure_weight(rank: usize) -> Result<f64, MetricsError> {
    if rank == 0 {
        return Err(MetricsError::InvalidRank(rank));
    }
    Ok(exposure(rank))
}

#[inline]
pub(crate) fn exposure(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// A user's top-K list for one stage; rank of `items[i]` is `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub user: UserId,
    pub stage: u32,
    items: Vec<ItemId>,
}

impl RankedList {
    pub fn new(user: UserId, stage: u32, items: Vec<ItemId>) -> Result<Self, MetricsError> {
        let mut seen = HashSet::with_capacity(items.len());
        for &item in &items {
            if !seen.insert(item) {
                return Err(MetricsError::DuplicateItem { user, item });
            }
        }
        Ok(Self { user, stage, items })
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(item, rank)` pairs with ranks starting at 1.
    pub fn ranked(&self) -> impl Iterator<Item = (ItemId, usize)> + '_ {
        self.items.iter().enumerate().map(|(i, &item)| (item, i + 1))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct HistoryEntry {
    pub item: ItemId,
    /// Stage during which the user interacted with the item.
    pub stage: u32,
}

/// A user's past positives, most recent first. The position in `entries`
/// is the item's pseudo-rank (most recent = rank 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryView {
    pub user: UserId,
    pub as_of_stage: u32,
    pub entries: Vec<HistoryEntry>,
}

impl HistoryView {
    /// History made of events strictly before `as_of_stage`.
    pub fn before_stage(user: UserId, events: &[HistoryEvent], as_of_stage: u32) -> Self {
        Self::collect(user, as_of_stage, events.iter().filter(|e| e.stage < as_of_stage))
    }

    /// History made of events strictly before `cutoff` (a timestamp).
    pub fn before_time(user: UserId, events: &[HistoryEvent], cutoff: i64, as_of_stage: u32) -> Self {
        Self::collect(user, as_of_stage, events.iter().filter(|e| e.timestamp < cutoff))
    }

    fn collect<'a>(user: UserId, as_of_stage: u32, events: impl DoubleEndedIterator<Item = &'a HistoryEvent>) -> Self {
        let mut seen = HashSet::new();
        let entries = events
            .rev()
            .filter(|e| seen.insert(e.item))
            .map(|e| HistoryEntry {
                item: e.item,
                stage: e.stage,
            })
            .collect();
        Self {
            user,
            as_of_stage,
            entries,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// One ranked slot as seen by [`tgf_of`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TgfEntry {
    pub item: ItemId,
    pub rank: usize,
    pub new: bool,
}

/// Core TGF computation over pre-classified slots.
///
/// Both groups are ordered oldest-first by `(entry_time, item)`. Old items
/// get weight `|old| + 1 - p`, new items `1 + (q - 1)(|old| - 1)/(|new| - 1)`
/// (1 for a singleton new group). The result is the weighted mean exposure of
/// the old group minus that of the new group; an empty group contributes 0.
pub fn tgf_of(entries: &[TgfEntry], timeline: &impl ItemTimeline) -> f64 {
    let key = |e: &TgfEntry| (timeline.entry_time(e.item), e.item);
    let mut old: Vec<&TgfEntry> = entries.iter().filter(|e| !e.new).collect();
    let mut new: Vec<&TgfEntry> = entries.iter().filter(|e| e.new).collect();
    old.sort_by_key(|e| key(e));
    new.sort_by_key(|e| key(e));
    let n_old = old.len() as f64;
    let n_new = new.len() as f64;

    let old_term = if old.is_empty() {
        0.0
    } else {
        old.iter()
            .enumerate()
            .map(|(i, e)| (n_old - i as f64) * exposure(e.rank))
            .sum::<f64>()
            / n_old
    };
    let new_term = if new.is_empty() {
        0.0
    } else {
        let step = if new.len() == 1 {
            0.0
        } else {
            (n_old - 1.0) / (n_new - 1.0)
        };
        new.iter()
            .enumerate()
            .map(|(i, e)| (1.0 + i as f64 * step) * exposure(e.rank))
            .sum::<f64>()
            / n_new
    };
    old_term - new_term
}

/// TGF of a recommendation list at `stage`.
pub fn tgf(
    list: &RankedList,
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> Result<f64, MetricsError> {
    if list.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    Ok(tgf_of(&list_entries(list.items(), timeline, stage, novelty), timeline))
}

pub(crate) fn list_entries(
    items: &[ItemId],
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> Vec<TgfEntry> {
    items
        .iter()
        .enumerate()
        .map(|(i, &item)| TgfEntry {
            item,
            rank: i + 1,
            new: novelty.is_new(timeline.entry_stage(item), stage),
        })
        .collect()
}

/// TGF of a history. Each entry is classified as new or old relative to the
/// stage in which the user interacted with it, so the value reflects how
/// much the user engaged with items while they were fresh.
pub fn tgf_history(
    history: &HistoryView,
    timeline: &impl ItemTimeline,
    novelty: Novelty,
) -> Result<f64, MetricsError> {
    if history.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let entries: Vec<TgfEntry> = history
        .entries
        .iter()
        .enumerate()
        .map(|(i, h)| TgfEntry {
            item: h.item,
            rank: i + 1,
            new: novelty.is_new(timeline.entry_stage(h.item), h.stage),
        })
        .collect();
    Ok(tgf_of(&entries, timeline))
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct UnfOutcome {
    pub value: f64,
    pub evaluated: usize,
    /// Users excluded because their history was missing or empty.
    pub missing: usize,
}

/// Mean over users of `(TGF(list) - TGF(history))^2`.
pub fn unf(
    lists: &[RankedList],
    histories: &BTreeMap<UserId, HistoryView>,
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> Result<UnfOutcome, MetricsError> {
    let mut pairs = Vec::with_capacity(lists.len());
    let mut missing = 0;
    for list in lists {
        let Some(history) = histories.get(&list.user).filter(|h| !h.is_empty()) else {
            missing += 1;
            continue;
        };
        pairs.push((
            tgf(list, timeline, stage, novelty)?,
            tgf_history(history, timeline, novelty)?,
        ));
    }
    if missing > 0 {
        log::warn!("UNF: {missing} users without history excluded");
    }
    Ok(UnfOutcome {
        value: unf_from_pairs(&pairs)?,
        evaluated: pairs.len(),
        missing,
    })
}

/// UNF from precomputed `(TGF(list), TGF(history))` pairs.
pub fn unf_from_pairs(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoUsers);
    }
    let sum: f64 = pairs.iter().map(|(l, h)| (l - h) * (l - h)).sum();
    Ok(sum / pairs.len() as f64)
}

fn with_truth<'a>(
    lists: &'a [RankedList],
    truth: &'a PositiveSets,
) -> impl Iterator<Item = (&'a RankedList, &'a BTreeSet<ItemId>)> {
    lists.iter().filter_map(move |l| {
        truth
            .get(&l.user)
            .filter(|t| !t.is_empty())
            .map(|t| (l, t))
    })
}

/// Fraction of users whose list holds at least one positive. Users without
/// positives are left out of the denominator.
pub fn hit_rate(lists: &[RankedList], truth: &PositiveSets) -> Result<f64, MetricsError> {
    let (mut hits, mut users) = (0usize, 0usize);
    for (list, positives) in with_truth(lists, truth) {
        users += 1;
        if list.items().iter().any(|i| positives.contains(i)) {
            hits += 1;
        }
    }
    if users == 0 {
        return Err(MetricsError::NoUsers);
    }
    Ok(hits as f64 / users as f64)
}

/// Mean DCG/IDCG with binary gains and `1/log2(rank + 1)` discounts.
pub fn ndcg(lists: &[RankedList], truth: &PositiveSets) -> Result<f64, MetricsError> {
    let (mut total, mut users) = (0.0, 0usize);
    for (list, positives) in with_truth(lists, truth) {
        users += 1;
        let dcg: f64 = list
            .ranked()
            .filter(|(item, _)| positives.contains(item))
            .map(|(_, rank)| exposure(rank))
            .sum();
        let ideal: f64 = (1..=positives.len().min(list.len())).map(exposure).sum();
        if ideal > 0.0 {
            total += dcg / ideal;
        }
    }
    if users == 0 {
        return Err(MetricsError::NoUsers);
    }
    Ok(total / users as f64)
}

/// Share of all recommendation slots filled with new items.
pub fn new_item_coverage(
    lists: &[RankedList],
    timeline: &impl ItemTimeline,
    stage: u32,
    novelty: Novelty,
) -> f64 {
    let slots: usize = lists.iter().map(RankedList::len).sum();
    if slots == 0 {
        return 0.0;
    }
    let new = lists
        .iter()
        .flat_map(|l| l.items())
        .filter(|&&i| novelty.is_new(timeline.entry_stage(i), stage))
        .count();
    new as f64 / slots as f64
}

/// Trade-off score in percent; see [`DELTA_T_DEFINITION`]. Above 100 means the
/// method's combined accuracy retention and fairness gain beats the backbone.
pub fn tradeoff_delta_t(method: &Summary, backbone: &Summary) -> Result<f64, MetricsError> {
    if method.k != backbone.k {
        return Err(MetricsError::Incompatible(format!(
            "K differs: {} vs {}",
            method.k, backbone.k
        )));
    }
    if method.stages != backbone.stages {
        return Err(MetricsError::Incompatible(format!(
            "stage counts differ: {} vs {}",
            method.stages, backbone.stages
        )));
    }
    if backbone.hr == 0.0 {
        return Err(MetricsError::ZeroBackboneHitRate);
    }
    let accuracy = method.hr / backbone.hr;
    let fairness = backbone.tgf.abs() / method.tgf.abs().max(TGF_FLOOR);
    Ok(100.0 * 0.5 * (accuracy + fairness))
}
