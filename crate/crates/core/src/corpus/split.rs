use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Interaction};
use crate::ids::{ItemId, Registry, UserId};
use crate::timeline::ItemTimeline;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub num_test_stages: u32,
    pub train_ratio: f64,
    pub num_train_cohorts: u32,
    /// Trailing share of the training period used to warm up the agent.
    pub warmup_fraction: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            num_test_stages: 5,
            train_ratio: 0.5,
            num_train_cohorts: 5,
            warmup_fraction: 0.2,
        }
    }
}

/// Cohorts, stage windows and entry stages for every item.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub params: SplitParams,
    /// Start timestamp of each test stage, `stage_boundaries[m - 1]` for stage m.
    pub stage_boundaries: Vec<i64>,
    pub cohort_of_item: Vec<u32>,
    pub entry_stage_of_item: Vec<u32>,
    pub entry_time_of_item: Vec<i64>,
    /// Interactions per stage, index 0 being the training period.
    pub stage_counts: Vec<usize>,
}

/// A user's positive interaction, tagged with the stage it happened in.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct HistoryEvent {
    pub item: ItemId,
    pub timestamp: i64,
    pub stage: u32,
}

/// The split corpus. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub users: Registry,
    pub items: Registry,
    pub train: Vec<Interaction>,
    /// `stages[m - 1]` holds the interactions of test stage m.
    pub stages: Vec<Vec<Interaction>>,
    /// Chronologically last `warmup_fraction` of `train`.
    pub warmup: Vec<Interaction>,
    /// Positive interactions per user in chronological order.
    pub histories: Vec<Vec<HistoryEvent>>,
}

impl StagePlan {
    pub fn num_test_stages(&self) -> u32 {
        self.params.num_test_stages
    }

    pub fn num_items(&self) -> usize {
        self.entry_stage_of_item.len()
    }

    /// Items available at `stage` (entered at or before it), ascending by id.
    pub fn available_items(&self, stage: u32) -> Vec<ItemId> {
        self.items_where(|entry| entry <= stage)
    }

    /// Items entering exactly at `stage`.
    pub fn entering_items(&self, stage: u32) -> Vec<ItemId> {
        self.items_where(|entry| entry == stage)
    }

    fn items_where(&self, pred: impl Fn(u32) -> bool) -> Vec<ItemId> {
        self.entry_stage_of_item
            .iter()
            .enumerate()
            .filter(|(_, &e)| pred(e))
            .map(|(i, _)| ItemId(i as u32))
            .collect()
    }

    /// Stage containing `timestamp`: 0 before the first boundary.
    pub fn stage_of_timestamp(&self, timestamp: i64) -> u32 {
        self.stage_boundaries
            .iter()
            .take_while(|&&b| b <= timestamp)
            .count() as u32
    }

    pub fn to_file(&self, items: &Registry) -> StagePlanFile {
        StagePlanFile {
            format: StagePlanFile::FORMAT.into(),
            params: self.params.clone(),
            stage_boundaries: self.stage_boundaries.clone(),
            stage_counts: self.stage_counts.clone(),
            items: (0..self.num_items())
                .map(|i| PlanItem {
                    item: items.name(i as u32).unwrap_or_default().to_owned(),
                    cohort: self.cohort_of_item[i],
                    entry_stage: self.entry_stage_of_item[i],
                    entry_time: self.entry_time_of_item[i],
                })
                .collect(),
        }
    }
}

impl ItemTimeline for StagePlan {
    fn entry_stage(&self, item: ItemId) -> u32 {
        self.entry_stage_of_item[item.index()]
    }

    fn entry_time(&self, item: ItemId) -> i64 {
        self.entry_time_of_item[item.index()]
    }
}

/// On-disk form of a [`StagePlan`] (JSON), keyed by external item ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlanFile {
    pub format: String,
    pub params: SplitParams,
    pub stage_boundaries: Vec<i64>,
    pub stage_counts: Vec<usize>,
    pub items: Vec<PlanItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanItem {
    pub item: String,
    pub cohort: u32,
    pub entry_stage: u32,
    pub entry_time: i64,
}

impl StagePlanFile {
    pub const FORMAT: &'static str = "fairagent-stage-plan/1";
}

impl DatasetBundle {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn history(&self, user: UserId) -> &[HistoryEvent] {
        &self.histories[user.index()]
    }

    /// Timestamp at which the warm-up slice starts.
    pub fn pre_warmup_cutoff(&self) -> i64 {
        self.warmup
            .first()
            .map_or(i64::MAX, |it| it.timestamp)
    }

    pub fn stage_interactions(&self, stage: u32) -> &[Interaction] {
        if stage == 0 {
            &self.train
        } else {
            &self.stages[stage as usize - 1]
        }
    }
}

/// Splits the corpus chronologically: the first `train_ratio` share of
/// interactions is the training period, the rest is cut into
/// `num_test_stages` contiguous windows of near-equal interaction count.
pub fn build_stage_plan(
    corpus: &Corpus,
    params: &SplitParams,
) -> Result<(StagePlan, DatasetBundle), CorpusError> {
    let n = corpus.len();
    let stages = params.num_test_stages;
    if n == 0 {
        return Err(CorpusError::EmptyCorpus("splitting"));
    }
    if !(params.train_ratio > 0.0 && params.train_ratio < 1.0) {
        return Err(CorpusError::InvalidParameter(format!(
            "train_ratio must lie in (0, 1), got {}",
            params.train_ratio
        )));
    }
    if !(0.0..=1.0).contains(&params.warmup_fraction) {
        return Err(CorpusError::InvalidParameter(format!(
            "warmup_fraction must lie in [0, 1], got {}",
            params.warmup_fraction
        )));
    }
    if stages == 0 {
        return Err(CorpusError::InvalidParameter(
            "num_test_stages must be at least 1".into(),
        ));
    }

    let n_train = ((n as f64) * params.train_ratio).floor() as usize;
    let n_test = n - n_train;
    let stage_start = |m: u32| n_train + (m as usize - 1) * n_test / stages as usize;
    for m in 1..=stages {
        if stage_start(m + 1) == stage_start(m) {
            return Err(CorpusError::EmptyStage {
                stage: m,
                available: n_test,
                stages,
            });
        }
    }
    if n_train == 0 {
        return Err(CorpusError::EmptyStage {
            stage: 0,
            available: n,
            stages,
        });
    }

    let events = &corpus.interactions;
    let mut stage_of_event = vec![0u32; n];
    let mut boundaries = Vec::with_capacity(stages as usize);
    for m in 1..=stages {
        let (lo, hi) = (stage_start(m), stage_start(m + 1));
        stage_of_event[lo..hi].fill(m);
        let ts = events[lo].timestamp;
        if let Some(&prev) = boundaries.last() {
            if ts <= prev {
                return Err(CorpusError::DegenerateBoundaries {
                    stage: m,
                    timestamp: ts,
                });
            }
        }
        boundaries.push(ts);
    }

    let n_items = corpus.items.len();
    let mut entry_stage = vec![u32::MAX; n_items];
    let mut entry_time = vec![i64::MAX; n_items];
    for (ev, &stage) in events.iter().zip(&stage_of_event) {
        let i = ev.item.index();
        if stage < entry_stage[i] {
            entry_stage[i] = stage;
        }
        entry_time[i] = entry_time[i].min(ev.timestamp);
    }
    let stage_of_ts = |ts: i64| boundaries.iter().take_while(|&&b| b <= ts).count() as u32;
    for (i, release) in corpus.item_release.iter().enumerate() {
        if let Some(r) = *release {
            entry_stage[i] = entry_stage[i].min(stage_of_ts(r));
            entry_time[i] = r;
        }
    }

    let c = params.num_train_cohorts.max(1);
    let mut initial: Vec<usize> = (0..n_items).filter(|&i| entry_stage[i] == 0).collect();
    initial.sort_by_key(|&i| (entry_time[i], i));
    let mut cohort = vec![0u32; n_items];
    let n_initial = initial.len();
    for (rank, &i) in initial.iter().enumerate() {
        cohort[i] = ((rank * c as usize) / n_initial.max(1)) as u32;
    }
    for i in 0..n_items {
        if entry_stage[i] > 0 {
            cohort[i] = c + entry_stage[i] - 1;
        }
    }

    let train = events[..n_train].to_vec();
    let n_warm = ((n_train as f64) * params.warmup_fraction).round() as usize;
    let warmup = train[n_train - n_warm..].to_vec();
    let test_stages: Vec<Vec<Interaction>> = (1..=stages)
        .map(|m| events[stage_start(m)..stage_start(m + 1)].to_vec())
        .collect();
    let mut stage_counts = vec![n_train];
    stage_counts.extend(test_stages.iter().map(Vec::len));

    let mut histories = vec![Vec::new(); corpus.users.len()];
    for (ev, &stage) in events.iter().zip(&stage_of_event) {
        if ev.label {
            histories[ev.user.index()].push(HistoryEvent {
                item: ev.item,
                timestamp: ev.timestamp,
                stage,
            });
        }
    }

    let plan = StagePlan {
        params: params.clone(),
        stage_boundaries: boundaries,
        cohort_of_item: cohort,
        entry_stage_of_item: entry_stage,
        entry_time_of_item: entry_time,
        stage_counts,
    };
    let bundle = DatasetBundle {
        users: corpus.users.clone(),
        items: corpus.items.clone(),
        train,
        stages: test_stages,
        warmup,
        histories,
    };
    Ok((plan, bundle))
}
