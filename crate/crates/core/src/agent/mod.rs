//! The re-ranking agent: a value network scores candidate items given the
//! user's state, episodes build a K-item list one slot at a time, and
//! experience replay with a periodically synced target network trains it.

mod action;
mod replay;
mod reward;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneError, EmbeddingTable};
use crate::corpus::StagePlan;
use crate::envsim::{build_candidates, observe, user_rng, EnvError, ListPolicy, PolicyError, UserContext};
use crate::ids::{ItemId, UserId};
use crate::metrics::{tgf_history, HistoryView, MetricsError, PositiveSets};
use crate::qnet::{Gradients, QnetError, Sgd, ValueNetwork};
use crate::seeding::{rng_from, stream, Rng};
use crate::timeline::ItemTimeline;

pub use action::{estimate_new_preference, ActionSpace, Origin};
pub use replay::{Experience, ReplayBuffer};
pub use reward::{
    fair_reward_bound, fair_reward_from_gaps, reward_acc, reward_fair, reward_new, reward_total, RewardParts,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("embedding table has no users or no items")]
    EmptyTable,
    #[error("replay buffer holds {have} experiences, a batch needs {need}")]
    BufferUnderfull { have: usize, need: usize },
    #[error("action space needs {wanted} items but only {available} are available")]
    ActionSpaceExhausted { wanted: usize, available: usize },
    #[error("K = {k} exceeds the {candidates} candidates")]
    ListTooLong { k: usize, candidates: usize },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Qnet(#[from] QnetError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Discount of future value.
    pub lambda: f64,
    /// Exploration probability in train mode.
    pub epsilon: f64,
    pub memory: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync_every: u64,
    /// Recent items kept in the state.
    pub history_len: usize,
    pub action_space: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
            lambda: 0.9,
            epsilon: 0.1,
            memory: 10_000,
            target_sync_every: 5,
            history_len: 10,
            action_space: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub reward: RewardConfig,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 disables it.
    pub momentum: f64,
    pub batch_size: usize,
    /// Environment steps between gradient updates.
    pub train_every: u64,
    /// History entries used to estimate the appetite for new items.
    pub preference_window: usize,
    pub p_min: f64,
    pub warmup_epochs: usize,
    /// Training passes over the users of each stage.
    pub stage_epochs: usize,
    pub shuffle_users: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 128,
            train_every: 1,
            preference_window: 10,
            p_min: 0.05,
            warmup_epochs: 1,
            stage_epochs: 1,
            shuffle_users: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let r = &self.reward;
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        let unit = |name: &str, v: f64| -> Result<(), AgentError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(AgentError::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if !(r.alpha >= 0.0 && r.alpha.is_finite()) {
            return bad(format!("alpha must be a nonnegative number, got {}", r.alpha));
        }
        unit("beta", r.beta)?;
        unit("gamma", r.gamma)?;
        unit("lambda", r.lambda)?;
        unit("epsilon", r.epsilon)?;
        unit("momentum", self.momentum)?;
        if !(0.0..0.5).contains(&self.p_min) {
            return bad(format!("p_min must lie in [0, 0.5), got {}", self.p_min));
        }
        for (name, v) in [
            ("memory", r.memory),
            ("history_len", r.history_len),
            ("action_space", r.action_space),
            ("batch_size", self.batch_size),
            ("preference_window", self.preference_window),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if r.target_sync_every == 0 || self.train_every == 0 {
            return bad("target_sync_every and train_every must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        Ok(())
    }
}

/// `[e_u, e_v1 .. e_vN]` flattened, recent items oldest first. Missing slots
/// (short histories) sit at the front and are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    dim: usize,
    values: Vec<f64>,
}

impl AgentState {
    pub fn new(user: &[f64], recent_oldest_first: &[&[f64]], slots: usize) -> Self {
        let dim = user.len();
        let mut values = vec![0.0; (slots + 1) * dim];
        values[..dim].copy_from_slice(user);
        let keep = &recent_oldest_first[recent_oldest_first.len().saturating_sub(slots)..];
        let start = 1 + slots - keep.len();
        for (j, v) in keep.iter().enumerate() {
            let at = (start + j) * dim;
            values[at..at + dim].copy_from_slice(v);
        }
        Self { dim, values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn slots(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    /// Vector in slot `j` (0 = oldest).
    pub fn slot(&self, j: usize) -> &[f64] {
        &self.values[(j + 1) * self.dim..(j + 2) * self.dim]
    }

    /// The state after the user's reaction to `item_vector`: a click drops
    /// the oldest slot and appends the item; otherwise nothing changes.
    pub fn update(&self, clicked: bool, item_vector: &[f64]) -> Self {
        if !clicked {
            return self.clone();
        }
        let d = self.dim;
        let mut values = self.values.clone();
        values.copy_within(2 * d.., d);
        let last = values.len() - d;
        values[last..].copy_from_slice(item_vector);
        Self { dim: d, values }
    }
}

#[derive(Copy, Clone, Debug)]
pub enum Mode<'a> {
    /// Explore, reward against these positives and learn.
    Train { positives: &'a BTreeSet<ItemId> },
    /// Greedy, no feedback, no learning.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub items: Vec<ItemId>,
    /// Reward components per slot (train mode only).
    pub rewards: Vec<RewardParts>,
    pub clicks: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: AgentConfig,
    updates: u64,
    steps: u64,
}

pub struct Agent {
    cfg: AgentConfig,
    table: EmbeddingTable,
    main: ValueNetwork,
    target: ValueNetwork,
    opt: Sgd,
    buffer: ReplayBuffer,
    grads: Gradients,
    updates: u64,
    steps: u64,
    rng: Rng,
}

impl Agent {
    /// Value networks over the frozen embeddings of `table`; main and target
    /// start identical.
    pub fn initialize(table: &EmbeddingTable, cfg: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        if table.num_users() == 0 || table.introduced_items().is_empty() {
            return Err(AgentError::EmptyTable);
        }
        let d = table.dim();
        let mut sizes = vec![(cfg.reward.history_len + 2) * d];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let main = ValueNetwork::new(&sizes, &mut rng_from(seed, &[stream::AGENT, 0]))?;
        let momentum = (cfg.momentum > 0.0).then_some(cfg.momentum);
        Ok(Self {
            opt: Sgd::new(cfg.learning_rate, momentum),
            buffer: ReplayBuffer::new(cfg.reward.memory),
            grads: Gradients::zeros_like(&main),
            target: main.snapshot(),
            main,
            table: table.clone(),
            updates: 0,
            steps: 0,
            rng: rng_from(seed, &[stream::AGENT, 1]),
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.table
    }

    /// Replaces the frozen embeddings, e.g. after the backbone moved to a new
    /// stage. The value networks are kept.
    pub fn refresh_embeddings(&mut self, table: &EmbeddingTable) -> Result<(), AgentError> {
        if table.dim() != self.table.dim() {
            return Err(AgentError::InvalidConfig(format!(
                "embedding dimension changed from {} to {}",
                self.table.dim(),
                table.dim()
            )));
        }
        self.table = table.clone();
        Ok(())
    }

    pub fn main_network(&self) -> &ValueNetwork {
        &self.main
    }

    pub fn target_network(&self) -> &ValueNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Gradient updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn sync_target(&mut self) {
        self.target
            .load_snapshot(&self.main)
            .expect("main and target share a shape");
    }

    /// State of `user` from their most recent history entries.
    pub fn state_for(&self, user: UserId, history: &HistoryView) -> Result<AgentState, AgentError> {
        let n = self.cfg.reward.history_len;
        let recent: Vec<&[f64]> = history
            .entries
            .iter()
            .take(n)
            .rev()
            .map(|e| self.table.item_vector(e.item))
            .collect::<Result<_, _>>()?;
        Ok(AgentState::new(self.table.user_vector(user)?, &recent, n))
    }

    /// Main-network values of `actions` in `state`.
    pub fn q_values<A: AsRef<[f64]>>(&self, state: &[f64], actions: &[A]) -> Result<Vec<f64>, AgentError> {
        Ok(self.main.forward_many(state, actions)?)
    }

    /// ε-greedy in train mode, greedy in eval mode; ties go to the smaller id.
    pub fn choose_action(&self, state: &AgentState, space: &ActionSpace, train: bool, rng: &mut Rng) -> Result<ItemId, AgentError> {
        let items = space.items();
        if items.is_empty() {
            return Err(AgentError::ActionSpaceExhausted { wanted: 1, available: 0 });
        }
        if train && self.cfg.reward.epsilon > 0.0 && rng.random::<f64>() < self.cfg.reward.epsilon {
            return Ok(items[rng.random_range(0..items.len())]);
        }
        let vectors: Vec<&[f64]> = items
            .iter()
            .map(|&i| self.table.item_vector(i))
            .collect::<Result<_, _>>()?;
        let values = self.main.forward_many(state.as_slice(), &vectors)?;
        Ok(argmax(items, &values))
    }

    pub fn remember(&mut self, e: Experience) {
        self.buffer.push(e);
    }

    /// One minibatch update of the main network towards
    /// `r + λ·max_a' Q_target(s', a')`. Returns the mean squared error.
    pub fn train_step(&mut self) -> Result<f64, AgentError> {
        let need = self.cfg.batch_size;
        if self.buffer.len() < need {
            return Err(AgentError::BufferUnderfull {
                have: self.buffer.len(),
                need,
            });
        }
        let lambda = self.cfg.reward.lambda;
        let d = self.table.dim();
        let scale = 1.0 / need as f64;
        self.grads.clear();
        let mut loss = 0.0;
        for _ in 0..need {
            let e = self.buffer.sample(&mut self.rng).expect("buffer is non-empty");
            let mut target = e.reward;
            if !e.terminal && lambda > 0.0 && !e.next_actions.is_empty() {
                let next: Vec<&[f64]> = e.next_actions.chunks(d).collect();
                let best = self
                    .target
                    .forward_many(&e.next_state, &next)?
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                target += lambda * best;
            }
            loss += self
                .main
                .accumulate_backward(&e.state, &e.action_vector, target, scale, &mut self.grads)?;
        }
        self.opt.apply(&mut self.main, &self.grads)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.reward.target_sync_every) {
            self.sync_target();
        }
        Ok(loss * scale)
    }

    /// Builds a `ctx.k`-item list for one user. In train mode every step is
    /// rewarded with simulated feedback against `positives`, stored, and
    /// learned from.
    pub fn generate_list(&mut self, ctx: &UserContext<'_>, mode: Mode<'_>, rng: &mut Rng) -> Result<Episode, AgentError> {
        if ctx.k > ctx.candidates.len() {
            return Err(AgentError::ListTooLong {
                k: ctx.k,
                candidates: ctx.candidates.len(),
            });
        }
        let r = self.cfg.reward.clone();
        let train = matches!(mode, Mode::Train { .. });
        let p_new = estimate_new_preference(ctx.history, ctx.plan, ctx.novelty, self.cfg.preference_window, self.cfg.p_min);
        let (new_pool, old_pool): (Vec<ItemId>, Vec<ItemId>) = ctx
            .table
            .ranked(ctx.user, ctx.candidates)?
            .into_iter()
            .map(|(i, _)| i)
            .partition(|&i| ctx.novelty.is_new(ctx.plan.entry_stage(i), ctx.stage));
        let size = r.action_space.min(ctx.candidates.len());
        let mut space = ActionSpace::build(p_new, new_pool, old_pool, size, rng)?;
        let mut state = self.state_for(ctx.user, ctx.history)?;
        let history_tgf = if ctx.history.is_empty() {
            None
        } else {
            Some(tgf_history(ctx.history, ctx.plan, ctx.novelty)?)
        };

        let mut items = Vec::with_capacity(ctx.k);
        let mut rewards = Vec::new();
        let mut clicks = 0;
        for rank in 1..=ctx.k {
            let action = self.choose_action(&state, &space, train, rng)?;
            space.take(action);
            space.refill(rng);
            items.push(action);
            let Mode::Train { positives } = mode else {
                continue;
            };

            let clicked = observe(rank, rng) && positives.contains(&action);
            clicks += usize::from(clicked);
            let is_new = ctx.novelty.is_new(ctx.plan.entry_stage(action), ctx.stage);
            let parts = RewardParts {
                acc: reward_acc(clicked, rank),
                fair: history_tgf.map_or(0.0, |h| {
                    reward_fair(&items[..rank - 1], &items, h, ctx.plan, ctx.stage, ctx.novelty)
                }),
                new: reward_new(is_new, clicked, r.gamma),
            };
            rewards.push(parts);

            let action_vector = self.table.item_vector(action)?.to_vec();
            let next_state = state.update(clicked, &action_vector);
            let mut next_actions = Vec::with_capacity(space.len() * action_vector.len());
            for &i in space.items() {
                next_actions.extend_from_slice(self.table.item_vector(i)?);
            }
            self.buffer.push(Experience {
                state: state.as_slice().to_vec(),
                action,
                action_vector,
                reward: parts.total(r.alpha, r.beta),
                next_state: next_state.as_slice().to_vec(),
                next_actions,
                terminal: rank == ctx.k,
            });
            self.steps += 1;
            if self.steps.is_multiple_of(self.cfg.train_every) && self.buffer.len() >= self.cfg.batch_size {
                self.train_step()?;
            }
            state = next_state;
        }
        Ok(Episode { items, rewards, clicks })
    }

    /// Writes `main.qnet`, `target.qnet` and `agent.json` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), AgentError> {
        std::fs::create_dir_all(dir)?;
        self.main.write_to(BufWriter::new(File::create(dir.join("main.qnet"))?))?;
        self.target.write_to(BufWriter::new(File::create(dir.join("target.qnet"))?))?;
        let meta = CheckpointMeta {
            config: self.cfg.clone(),
            updates: self.updates,
            steps: self.steps,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("agent.json"))?), &meta)?;
        Ok(())
    }

    /// Restores networks, config and counters saved by
    /// [`Agent::save_checkpoint`]. The replay buffer starts empty.
    pub fn load_checkpoint(dir: &Path, table: &EmbeddingTable, seed: u64) -> Result<Self, AgentError> {
        let meta: CheckpointMeta = serde_json::from_reader(BufReader::new(File::open(dir.join("agent.json"))?))?;
        let mut agent = Self::initialize(table, meta.config, seed)?;
        let main = ValueNetwork::read_from(BufReader::new(File::open(dir.join("main.qnet"))?))?;
        let target = ValueNetwork::read_from(BufReader::new(File::open(dir.join("target.qnet"))?))?;
        agent.main.load_snapshot(&main)?;
        agent.target.load_snapshot(&target)?;
        agent.updates = meta.updates;
        agent.steps = meta.steps;
        Ok(agent)
    }
}

fn argmax(items: &[ItemId], values: &[f64]) -> ItemId {
    let mut best = 0;
    for j in 1..items.len() {
        let better = values[j] > values[best] || (values[j] == values[best] && items[j] < items[best]);
        if better {
            best = j;
        }
    }
    items[best]
}

impl ListPolicy for Agent {
    fn name(&self) -> &str {
        "fairagent"
    }

    fn recommend(&mut self, ctx: &UserContext<'_>, rng: &mut Rng) -> Result<Vec<ItemId>, PolicyError> {
        Ok(self.generate_list(ctx, Mode::Eval, rng)?.items)
    }
}

/// Summary of one training pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassSummary {
    pub episodes: usize,
    pub clicks: usize,
    pub mean_reward: f64,
    pub new_share: f64,
}

/// One train-mode pass over every user with positives in `positives`.
/// `histories` supplies each user's history; `stage` 0 is the warm-up
/// pseudo-stage.
#[allow(clippy::too_many_arguments)]
pub fn train_pass(
    agent: &mut Agent,
    stage: u32,
    epoch: usize,
    plan: &StagePlan,
    positives: &PositiveSets,
    histories: &BTreeMap<UserId, HistoryView>,
    table: &EmbeddingTable,
    sim: &crate::envsim::SimConfig,
    seed: u64,
) -> Result<PassSummary, AgentError> {
    let available = plan.available_items(stage);
    let mut users: Vec<UserId> = positives.iter().filter(|(_, p)| !p.is_empty()).map(|(&u, _)| u).collect();
    if agent.cfg.shuffle_users {
        users.shuffle(&mut rng_from(seed, &[stream::ORDER, stage as u64, epoch as u64]));
    }
    let empty = HistoryView {
        user: UserId(0),
        as_of_stage: stage,
        entries: Vec::new(),
    };
    let mut summary = PassSummary::default();
    let (mut reward_sum, mut steps, mut new_slots) = (0.0, 0usize, 0usize);
    let (alpha, beta) = (agent.cfg.reward.alpha, agent.cfg.reward.beta);
    for user in users {
        let pos = &positives[&user];
        let tag = stream::EPISODE + ((epoch as u64) << 8);
        let mut rng = user_rng(seed, tag, stage, user);
        let candidates = build_candidates(user, stage, pos, &available, sim.candidate_size.min(available.len()), &mut rng)?;
        let history = histories.get(&user).unwrap_or(&empty);
        let ctx = UserContext {
            user,
            stage,
            k: sim.k,
            candidates: &candidates,
            history,
            table,
            plan,
            novelty: sim.novelty(),
        };
        let ep = agent.generate_list(&ctx, Mode::Train { positives: pos }, &mut rng)?;
        summary.episodes += 1;
        summary.clicks += ep.clicks;
        reward_sum += ep.rewards.iter().map(|p| p.total(alpha, beta)).sum::<f64>();
        steps += ep.rewards.len();
        new_slots += ep
            .items
            .iter()
            .filter(|&&i| sim.novelty().is_new(plan.entry_stage(i), stage))
            .count();
    }
    if steps > 0 {
        summary.mean_reward = reward_sum / steps as f64;
        summary.new_share = new_slots as f64 / steps as f64;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests;
