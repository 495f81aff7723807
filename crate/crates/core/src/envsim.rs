//! The dynamic feedback loop: each stage, every user with ground truth gets a
//! candidate set, a policy ranks K of them, position-biased users observe and
//! click, metrics are computed, and the backbone is updated on the clicks
//! before the next stage's items arrive.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{update_stage, BackboneConfig, BackboneError, EmbeddingTable, TrainLog};
use crate::corpus::{DatasetBundle, Interaction, StagePlan};
use crate::ids::{ItemId, Registry, UserId};
use crate::metrics::{
    exposure, hit_rate, ndcg, new_item_coverage, tgf, unf, HistoryView, MetricsError, PositiveSets, RankedList,
    StageMetrics,
};
use crate::seeding::{derive_seed, rng_from, stream, Rng};
use crate::timeline::Novelty;

pub type PolicyError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("stage {stage}: user {user} needs {wanted} candidates but only {available} items qualify")]
    NotEnoughCandidates {
        user: UserId,
        stage: u32,
        wanted: usize,
        available: usize,
    },
    #[error("stage {stage}: policy failed for user {user}: {source}")]
    Policy {
        user: UserId,
        stage: u32,
        source: PolicyError,
    },
    #[error("stage {stage}: policy broke its contract for user {user}: {reason}")]
    PolicyContract { user: UserId, stage: u32, reason: String },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("stage {0} is outside the plan")]
    NoSuchStage(u32),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub k: usize,
    pub candidate_size: usize,
    /// Trailing number of stages during which an item counts as new.
    pub new_window: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 20,
            candidate_size: 1000,
            new_window: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.k == 0 || self.k > self.candidate_size {
            return Err(EnvError::InvalidConfig(format!(
                "need 1 <= k <= candidate_size, got k = {} and candidate_size = {}",
                self.k, self.candidate_size
            )));
        }
        if self.new_window == 0 {
            return Err(EnvError::InvalidConfig("new_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn novelty(&self) -> Novelty {
        Novelty::new(self.new_window)
    }
}

/// One exposure of one item to one user.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub user: UserId,
    pub item: ItemId,
    pub rank: usize,
    pub observed: bool,
    pub clicked: bool,
    pub stage: u32,
}

/// Items each user would click if shown, per stage. Index 0 holds the
/// warm-up slice used as pseudo-stage feedback before the first test stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    stages: Vec<PositiveSets>,
}

impl GroundTruth {
    pub fn from_bundle(bundle: &DatasetBundle) -> Self {
        let mut stages = vec![positives_of(&bundle.warmup)];
        stages.extend(bundle.stages.iter().map(|s| positives_of(s)));
        Self { stages }
    }

    pub fn from_stages(stages: Vec<PositiveSets>) -> Self {
        Self { stages }
    }

    pub fn stage(&self, stage: u32) -> Result<&PositiveSets, EnvError> {
        self.stages.get(stage as usize).ok_or(EnvError::NoSuchStage(stage))
    }

    pub fn num_stages(&self) -> u32 {
        self.stages.len() as u32 - 1
    }
}

fn positives_of(events: &[Interaction]) -> PositiveSets {
    let mut out = PositiveSets::new();
    for ev in events.iter().filter(|e| e.label) {
        out.entry(ev.user).or_default().insert(ev.item);
    }
    out
}

/// Whether a user looks at rank `rank`: true with probability
/// `1 / log2(rank + 1)`.
pub fn observe(rank: usize, rng: &mut Rng) -> bool {
    rng.random::<f64>() < exposure(rank)
}

/// Feedback on every entry of `list`: observed by the position coin, clicked
/// iff observed and a ground-truth positive.
pub fn simulate_feedback(
    list: &RankedList,
    positives: Option<&std::collections::BTreeSet<ItemId>>,
    rng: &mut Rng,
) -> Vec<FeedbackEvent> {
    list.ranked()
        .map(|(item, rank)| {
            let observed = observe(rank, rng);
            FeedbackEvent {
                user: list.user,
                item,
                rank,
                observed,
                clicked: observed && positives.is_some_and(|p| p.contains(&item)),
                stage: list.stage,
            }
        })
        .collect()
}

/// The user's positives plus uniformly drawn distinct negatives from
/// `available`, `size` items in total, ascending by id.
pub fn build_candidates(
    user: UserId,
    stage: u32,
    positives: &std::collections::BTreeSet<ItemId>,
    available: &[ItemId],
    size: usize,
    rng: &mut Rng,
) -> Result<Vec<ItemId>, EnvError> {
    let negatives: Vec<ItemId> = available.iter().copied().filter(|i| !positives.contains(i)).collect();
    let wanted_neg = size.checked_sub(positives.len());
    let Some(wanted_neg) = wanted_neg.filter(|&w| w <= negatives.len()) else {
        return Err(EnvError::NotEnoughCandidates {
            user,
            stage,
            wanted: size,
            available: positives.len() + negatives.len(),
        });
    };
    let mut out: Vec<ItemId> = positives.iter().copied().collect();
    out.extend(sample(rng, negatives.len(), wanted_neg).into_iter().map(|i| negatives[i]));
    out.sort_unstable();
    Ok(out)
}

/// What a policy sees when asked for a user's list.
pub struct UserContext<'a> {
    pub user: UserId,
    pub stage: u32,
    pub k: usize,
    /// Candidate items, ascending by id.
    pub candidates: &'a [ItemId],
    pub history: &'a HistoryView,
    pub table: &'a EmbeddingTable,
    pub plan: &'a StagePlan,
    pub novelty: Novelty,
}

/// Produces a ranked list of exactly `ctx.k` distinct candidates.
pub trait ListPolicy {
    fn name(&self) -> &str;

    fn recommend(&mut self, ctx: &UserContext<'_>, rng: &mut Rng) -> Result<Vec<ItemId>, PolicyError>;
}

/// The static top-K policy of the backbone.
#[derive(Copy, Clone, Debug, Default)]
pub struct BackbonePolicy;

impl ListPolicy for BackbonePolicy {
    fn name(&self) -> &str {
        "backbone"
    }

    fn recommend(&mut self, ctx: &UserContext<'_>, _rng: &mut Rng) -> Result<Vec<ItemId>, PolicyError> {
        Ok(ctx.table.top_scored(ctx.user, ctx.candidates, ctx.k)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub lists: Vec<RankedList>,
    pub feedback: Vec<FeedbackEvent>,
    pub metrics: StageMetrics,
}

impl StageOutcome {
    /// `(user, item)` pairs that were clicked.
    pub fn clicks(&self) -> Vec<(UserId, ItemId)> {
        self.feedback.iter().filter(|e| e.clicked).map(|e| (e.user, e.item)).collect()
    }
}

/// Per-user random streams for one stage.
pub fn user_rng(seed: u64, tag: u64, stage: u32, user: UserId) -> Rng {
    rng_from(seed, &[tag, stage as u64, user.0 as u64])
}

/// Histories of `users` as of the start of `stage`, built from logged
/// positives only.
pub fn histories_at(bundle: &DatasetBundle, users: impl Iterator<Item = UserId>, stage: u32) -> BTreeMap<UserId, HistoryView> {
    users
        .map(|u| (u, HistoryView::before_stage(u, bundle.history(u), stage)))
        .collect()
}

/// Runs one stage of `policy` for every user with ground truth in `stage`.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    policy: &mut dyn ListPolicy,
    stage: u32,
    bundle: &DatasetBundle,
    plan: &StagePlan,
    truth: &GroundTruth,
    table: &EmbeddingTable,
    cfg: &SimConfig,
    seed: u64,
) -> Result<StageOutcome, EnvError> {
    cfg.validate()?;
    let positives = truth.stage(stage)?;
    let novelty = cfg.novelty();
    let available = plan.available_items(stage);
    let users: Vec<UserId> = positives.iter().filter(|(_, p)| !p.is_empty()).map(|(&u, _)| u).collect();
    let skipped = bundle.num_users() - users.len();
    if skipped > 0 {
        log::info!("stage {stage}: {skipped} users without positives skipped");
    }
    let histories = histories_at(bundle, users.iter().copied(), stage);

    let mut lists = Vec::with_capacity(users.len());
    let mut feedback = Vec::with_capacity(users.len() * cfg.k);
    for &user in &users {
        let pos = &positives[&user];
        let mut cand_rng = user_rng(seed, stream::CANDIDATES, stage, user);
        let candidates = build_candidates(user, stage, pos, &available, cfg.candidate_size, &mut cand_rng)?;
        let ctx = UserContext {
            user,
            stage,
            k: cfg.k,
            candidates: &candidates,
            history: &histories[&user],
            table,
            plan,
            novelty,
        };
        let mut policy_rng = user_rng(seed, stream::POLICY, stage, user);
        let items = policy
            .recommend(&ctx, &mut policy_rng)
            .map_err(|source| EnvError::Policy { user, stage, source })?;
        let list = check_list(user, stage, items, &candidates, cfg.k)?;
        let mut fb_rng = user_rng(seed, stream::FEEDBACK, stage, user);
        feedback.extend(simulate_feedback(&list, Some(pos), &mut fb_rng));
        lists.push(list);
    }

    let metrics = stage_metrics(&lists, positives, &histories, plan, stage, novelty, skipped)?;
    Ok(StageOutcome {
        lists,
        feedback,
        metrics,
    })
}

fn check_list(user: UserId, stage: u32, items: Vec<ItemId>, candidates: &[ItemId], k: usize) -> Result<RankedList, EnvError> {
    let contract = |reason: String| EnvError::PolicyContract { user, stage, reason };
    if items.len() != k {
        return Err(contract(format!("returned {} items, expected {k}", items.len())));
    }
    if let Some(bad) = items.iter().find(|i| candidates.binary_search(i).is_err()) {
        return Err(contract(format!("item {bad} is not a candidate")));
    }
    RankedList::new(user, stage, items).map_err(|e| contract(e.to_string()))
}

/// HR, NDCG, mean list TGF, UNF and NC of one stage. With no evaluated users
/// every value is 0.
pub fn stage_metrics(
    lists: &[RankedList],
    positives: &PositiveSets,
    histories: &BTreeMap<UserId, HistoryView>,
    plan: &StagePlan,
    stage: u32,
    novelty: Novelty,
    skipped_users: usize,
) -> Result<StageMetrics, EnvError> {
    let mut m = StageMetrics {
        stage,
        users: lists.len(),
        skipped_users,
        hr: 0.0,
        ndcg: 0.0,
        tgf: 0.0,
        unf: 0.0,
        nc: 0.0,
    };
    if lists.is_empty() {
        return Ok(m);
    }
    m.hr = hit_rate(lists, positives)?;
    m.ndcg = ndcg(lists, positives)?;
    let mut tgf_sum = 0.0;
    for l in lists {
        tgf_sum += tgf(l, plan, stage, novelty)?;
    }
    m.tgf = tgf_sum / lists.len() as f64;
    m.unf = match unf(lists, histories, plan, stage, novelty) {
        Ok(out) => out.value,
        Err(MetricsError::NoUsers) => 0.0,
        Err(e) => return Err(e.into()),
    };
    m.nc = new_item_coverage(lists, plan, stage, novelty);
    Ok(m)
}

/// Positive training interactions as `(user, item)` pairs.
pub fn train_positives(bundle: &DatasetBundle) -> Vec<(UserId, ItemId)> {
    bundle.train.iter().filter(|e| e.label).map(|e| (e.user, e.item)).collect()
}

/// Closes `stage`: the items of `stage + 1` (if any) join the universe and
/// the backbone is updated on `positives`, which should be the historical
/// positives plus every click collected so far.
pub fn advance_stage(
    stage: u32,
    positives: &[(UserId, ItemId)],
    table: &EmbeddingTable,
    plan: &StagePlan,
    cfg: &BackboneConfig,
    seed: u64,
) -> Result<(EmbeddingTable, TrainLog), EnvError> {
    let next = (stage + 1).min(plan.num_test_stages());
    let new_items = if stage < plan.num_test_stages() {
        plan.entering_items(stage + 1)
    } else {
        Vec::new()
    };
    let universe = plan.available_items(next);
    let seed = derive_seed(seed, &[stream::BACKBONE, stage as u64]);
    Ok(update_stage(table, &new_items, positives, &universe, cfg, seed)?)
}

/// Gives the items of the first test stage their initial vectors. Nothing is
/// trained since no feedback exists yet.
pub fn enter_first_stage(table: &EmbeddingTable, plan: &StagePlan, cfg: &BackboneConfig, seed: u64) -> Result<EmbeddingTable, EnvError> {
    let seed = derive_seed(seed, &[stream::BACKBONE, u64::MAX]);
    let (t, _) = update_stage(table, &plan.entering_items(1), &[], &plan.available_items(1), cfg, seed)?;
    Ok(t)
}

/// Writes feedback as comma-separated text with columns
/// `user,item,rank,observed,clicked,stage`.
pub fn write_feedback(events: &[FeedbackEvent], users: &Registry, items: &Registry, mut w: impl Write) -> Result<(), EnvError> {
    writeln!(w, "user,item,rank,observed,clicked,stage")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            users.names()[e.user.index()],
            items.names()[e.item.index()],
            e.rank,
            u8::from(e.observed),
            u8::from(e.clicked),
            e.stage
        )?;
    }
    Ok(())
}
