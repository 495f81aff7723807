//! Interaction logs: ingestion, user filtering, the chronological stage split
//! and a synthetic generator for desk-scale experiments.

mod load;
mod split;
pub mod synth;

use std::collections::HashMap;

use thiserror::Error;

use crate::ids::{ItemId, Registry, UserId};

pub use load::{load_interactions, read_interactions, write_interactions, ColumnSpec, LoadStats};
pub use split::{
    build_stage_plan, DatasetBundle, HistoryEvent, PlanItem, SplitParams, StagePlan, StagePlanFile,
};
pub use synth::{synth_generate, SynthSpec, Synthetic};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("no interactions left after {0}")]
    EmptyCorpus(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stage {stage} would contain zero interactions ({available} test events for {stages} stages)")]
    EmptyStage {
        stage: u32,
        available: usize,
        stages: u32,
    },
    #[error("stage boundaries are not strictly increasing at stage {stage} (timestamp {timestamp})")]
    DegenerateBoundaries { stage: u32, timestamp: i64 },
    #[error("stage plan does not match the corpus: {0}")]
    PlanMismatch(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One logged (user, item, timestamp, label) event.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
    pub label: bool,
}

/// An interaction still carrying its external identifiers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
    pub label: bool,
    /// Optional item release time; overrides first-interaction entry.
    pub release: Option<i64>,
}

/// A chronologically sorted, deduplicated interaction log with its id maps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub users: Registry,
    pub items: Registry,
    pub interactions: Vec<Interaction>,
    /// Earliest declared release time per item, when the source had one.
    pub item_release: Vec<Option<i64>>,
}

impl Corpus {
    /// Sorts by (timestamp, user, item), drops duplicate (user, item, timestamp)
    /// rows and assigns dense ids in order of first appearance.
    pub fn from_raw(mut rows: Vec<RawInteraction>) -> (Corpus, usize) {
        rows.sort_by(|a, b| {
            (a.timestamp, &a.user, &a.item, !a.label).cmp(&(b.timestamp, &b.user, &b.item, !b.label))
        });
        let before = rows.len();
        rows.dedup_by(|b, a| a.timestamp == b.timestamp && a.user == b.user && a.item == b.item);
        let duplicates = before - rows.len();

        let mut users = Registry::new();
        let mut items = Registry::new();
        let mut item_release: Vec<Option<i64>> = Vec::new();
        let mut interactions = Vec::with_capacity(rows.len());
        for row in &rows {
            let user = UserId(users.intern(&row.user));
            let item = ItemId(items.intern(&row.item));
            if item.index() == item_release.len() {
                item_release.push(None);
            }
            if let Some(r) = row.release {
                let slot = &mut item_release[item.index()];
                *slot = Some(slot.map_or(r, |old| old.min(r)));
            }
            interactions.push(Interaction {
                user,
                item,
                timestamp: row.timestamp,
                label: row.label,
            });
        }
        (
            Corpus {
                users,
                items,
                interactions,
                item_release,
            },
            duplicates,
        )
    }

    pub fn to_raw(&self) -> Vec<RawInteraction> {
        self.interactions
            .iter()
            .map(|it| RawInteraction {
                user: self.users.name(it.user.0).unwrap_or_default().to_owned(),
                item: self.items.name(it.item.0).unwrap_or_default().to_owned(),
                timestamp: it.timestamp,
                label: it.label,
                release: self.item_release.get(it.item.index()).copied().flatten(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Keeps only users with at least `min_count` interactions, preserving
/// chronological order. Ids are re-assigned densely over the survivors.
pub fn filter_users(corpus: &Corpus, min_count: usize) -> Result<Corpus, CorpusError> {
    if min_count == 0 {
        return Err(CorpusError::InvalidParameter(
            "min_count must be at least 1".into(),
        ));
    }
    let mut counts: HashMap<UserId, usize> = HashMap::new();
    for it in &corpus.interactions {
        *counts.entry(it.user).or_default() += 1;
    }
    let kept: Vec<RawInteraction> = corpus
        .to_raw()
        .into_iter()
        .zip(&corpus.interactions)
        .filter(|(_, it)| counts[&it.user] >= min_count)
        .map(|(raw, _)| raw)
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyCorpus("user filtering"));
    }
    let removed = counts.values().filter(|&&c| c < min_count).count();
    if removed > 0 {
        log::info!("filtered out {removed} users with fewer than {min_count} interactions");
    }
    Ok(Corpus::from_raw(kept).0)
}
