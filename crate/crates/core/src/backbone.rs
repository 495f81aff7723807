//! Matrix-factorization backbone trained with the pairwise (BPR) ranking
//! loss by mini-batch stochastic gradient descent.
//!
//! A user's score for an item is the inner product of their vectors. The
//! table only holds vectors for items that have been introduced; scoring an
//! item that has not entered yet is an error.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ItemId, Registry, UserId};
use crate::seeding::{rng_from, stream, Rng};

const FILE_MAGIC: &str = "fairagent-embeddings/1";
const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("user {0} has no vector")]
    UnknownUser(UserId),
    #[error("item {0} has no vector (not introduced yet?)")]
    UnknownItem(ItemId),
    #[error("asked for top {k} of only {candidates} candidates")]
    KTooLarge { k: usize, candidates: usize },
    #[error("no positive interactions to train on")]
    NoPositives,
    #[error("loss became {loss} in epoch {epoch} (learning rate {learning_rate}); lower the learning rate")]
    NonFiniteLoss { epoch: usize, loss: f64, learning_rate: f64 },
    #[error("invalid backbone config: {0}")]
    InvalidConfig(String),
    #[error("embedding file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How vectors of items entering at a stage boundary are initialized.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewItemInit {
    /// Mean of the existing item vectors plus small uniform noise.
    MeanPlusNoise,
    /// Same distribution as a fresh model: small uniform noise around 0.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub dimension: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub negative_rate: usize,
    pub batch_size: usize,
    /// Epochs run by [`update_stage`] when fine-tuning.
    pub finetune_epochs: usize,
    /// Retrain from scratch at every stage instead of fine-tuning.
    pub retrain_from_scratch: bool,
    pub new_item_init: NewItemInit,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            dimension: 16,
            learning_rate: 0.05,
            l2_weight: 1e-4,
            epochs: 40,
            negative_rate: 4,
            batch_size: 256,
            finetune_epochs: 5,
            retrain_from_scratch: false,
            new_item_init: NewItemInit::MeanPlusNoise,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        let bad = |m: &str| Err(BackboneError::InvalidConfig(m.into()));
        if self.dimension == 0 {
            return bad("dimension must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.l2_weight.is_nan() || self.l2_weight < 0.0 {
            return bad("l2_weight must be nonnegative");
        }
        if self.negative_rate == 0 {
            return bad("negative_rate must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// User and item vectors in flat row-major buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    users: Vec<f64>,
    items: Vec<f64>,
    present: Vec<bool>,
}

/// Mean sampled ranking loss of every epoch, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub skipped_users: usize,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

impl EmbeddingTable {
    /// Seeded uniform initialization in `[-0.01, 0.01]` for every user and for
    /// the items in `introduced`; other items stay absent.
    pub fn init(dim: usize, num_users: usize, num_items: usize, introduced: &[ItemId], rng: &mut Rng) -> Self {
        let mut t = Self {
            dim,
            users: (0..num_users * dim).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect(),
            items: vec![0.0; num_items * dim],
            present: vec![false; num_items],
        };
        for &item in introduced {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect();
            t.set_item(item, &v);
        }
        t
    }

    /// Builds a table from explicit vectors; every item listed is present.
    pub fn from_vectors(users: Vec<Vec<f64>>, items: Vec<Vec<f64>>) -> Result<Self, BackboneError> {
        let dim = users.first().or(items.first()).map_or(0, Vec::len);
        if dim == 0 || users.iter().chain(&items).any(|v| v.len() != dim) {
            return Err(BackboneError::InvalidConfig("vectors must share a positive dimension".into()));
        }
        Ok(Self {
            dim,
            present: vec![true; items.len()],
            users: users.concat(),
            items: items.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_users(&self) -> usize {
        self.users.len() / self.dim
    }

    pub fn num_items(&self) -> usize {
        self.present.len()
    }

    pub fn has_item(&self, item: ItemId) -> bool {
        self.present.get(item.index()).copied().unwrap_or(false)
    }

    /// Items that currently have a vector, ascending.
    pub fn introduced_items(&self) -> Vec<ItemId> {
        (0..self.present.len())
            .filter(|&i| self.present[i])
            .map(|i| ItemId(i as u32))
            .collect()
    }

    pub fn user_vector(&self, user: UserId) -> Result<&[f64], BackboneError> {
        let i = user.index();
        if i >= self.num_users() {
            return Err(BackboneError::UnknownUser(user));
        }
        Ok(&self.users[i * self.dim..(i + 1) * self.dim])
    }

    pub fn item_vector(&self, item: ItemId) -> Result<&[f64], BackboneError> {
        if !self.has_item(item) {
            return Err(BackboneError::UnknownItem(item));
        }
        let i = item.index();
        Ok(&self.items[i * self.dim..(i + 1) * self.dim])
    }

    fn set_item(&mut self, item: ItemId, v: &[f64]) {
        let i = item.index();
        self.items[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        self.present[i] = true;
    }

    pub fn score(&self, user: UserId, item: ItemId) -> Result<f64, BackboneError> {
        let u = self.user_vector(user)?;
        let v = self.item_vector(item)?;
        Ok(dot(u, v))
    }

    /// Top `k` candidates by score, ties broken by ascending item id.
    pub fn top_scored(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<Vec<ItemId>, BackboneError> {
        if k > candidates.len() {
            return Err(BackboneError::KTooLarge {
                k,
                candidates: candidates.len(),
            });
        }
        let mut scored = self.ranked(user, candidates)?;
        scored.truncate(k);
        Ok(scored.into_iter().map(|(item, _)| item).collect())
    }

    /// Every candidate with its score, best first under the same tie rule as
    /// [`EmbeddingTable::top_scored`].
    pub fn ranked(&self, user: UserId, candidates: &[ItemId]) -> Result<Vec<(ItemId, f64)>, BackboneError> {
        let u = self.user_vector(user)?;
        let mut scored = candidates
            .iter()
            .map(|&item| Ok((item, dot(u, self.item_vector(item)?))))
            .collect::<Result<Vec<_>, BackboneError>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }

    /// Text format: a magic line, `dim <d>`, then `u <name> <values>` for
    /// every user and `i <name> <values>` for every introduced item. Values use
    /// exponent notation and round-trip exactly.
    pub fn write_to(&self, mut w: impl Write, users: &Registry, items: &Registry) -> Result<(), BackboneError> {
        writeln!(w, "{FILE_MAGIC}")?;
        writeln!(w, "dim {}", self.dim)?;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        for u in 0..self.num_users() {
            let id = UserId(u as u32);
            writeln!(w, "u {} {}", users.names()[u], fmt(self.user_vector(id)?))?;
        }
        for item in self.introduced_items() {
            writeln!(w, "i {} {}", items.names()[item.index()], fmt(self.item_vector(item)?))?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead, users: &Registry, items: &Registry) -> Result<Self, BackboneError> {
        let perr = |line: usize, reason: String| BackboneError::Parse { line, reason };
        let mut lines = r.lines();
        let magic = lines.next().transpose()?.unwrap_or_default();
        if magic.trim() != FILE_MAGIC {
            return Err(perr(1, format!("expected `{FILE_MAGIC}`")));
        }
        let dim_line = lines.next().transpose()?.unwrap_or_default();
        let dim: usize = dim_line
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| perr(2, "expected `dim <positive integer>`".into()))?;
        let mut table = Self {
            dim,
            users: vec![0.0; users.len() * dim],
            items: vec![0.0; items.len() * dim],
            present: vec![false; items.len()],
        };
        let mut seen_users = vec![false; users.len()];
        for (n, line) in lines.enumerate() {
            let n = n + 3;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            let name = parts.next().ok_or_else(|| perr(n, "missing id".into()))?;
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| perr(n, format!("bad number: {e}")))?;
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(perr(n, format!("expected {dim} finite values")));
            }
            match kind {
                "u" => {
                    let u = users.get(name).ok_or_else(|| perr(n, format!("unknown user `{name}`")))?;
                    table.users[u as usize * dim..(u as usize + 1) * dim].copy_from_slice(&values);
                    seen_users[u as usize] = true;
                }
                "i" => {
                    let i = items.get(name).ok_or_else(|| perr(n, format!("unknown item `{name}`")))?;
                    table.set_item(ItemId(i), &values);
                }
                other => return Err(perr(n, format!("unknown row kind `{other}`"))),
            }
        }
        if let Some(u) = seen_users.iter().position(|s| !s) {
            return Err(perr(0, format!("user `{}` has no row", users.names()[u])));
        }
        Ok(table)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^-x)`, i.e. `-ln σ(x)`, computed without overflow.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Deduplicated positive pairs, sorted.
fn positive_pairs(positives: &[(UserId, ItemId)]) -> Vec<(UserId, ItemId)> {
    let set: BTreeSet<(UserId, ItemId)> = positives.iter().copied().collect();
    set.into_iter().collect()
}

struct Trainer<'a> {
    cfg: &'a BackboneConfig,
    universe: &'a [ItemId],
    /// Sorted positives per user.
    liked: Vec<Vec<ItemId>>,
    pairs: Vec<(UserId, ItemId)>,
}

impl<'a> Trainer<'a> {
    fn new(
        table: &EmbeddingTable,
        positives: &[(UserId, ItemId)],
        universe: &'a [ItemId],
        cfg: &'a BackboneConfig,
    ) -> Result<(Self, usize), BackboneError> {
        let mut pairs = positive_pairs(positives);
        for &(u, i) in &pairs {
            table.user_vector(u)?;
            table.item_vector(i)?;
        }
        let mut liked = vec![Vec::new(); table.num_users()];
        for &(u, i) in &pairs {
            liked[u.index()].push(i);
        }
        // A user who likes the whole universe has no negatives to contrast.
        let saturated: Vec<bool> = liked.iter().map(|l| !l.is_empty() && l.len() >= universe.len()).collect();
        pairs.retain(|(u, _)| !saturated[u.index()]);
        let skipped = liked.iter().filter(|l| l.is_empty()).count() + saturated.iter().filter(|s| **s).count();
        if skipped > 0 {
            log::warn!("backbone: {skipped} users without usable positives are not trained");
        }
        if pairs.is_empty() {
            return Err(BackboneError::NoPositives);
        }
        Ok((
            Self {
                cfg,
                universe,
                liked,
                pairs,
            },
            skipped,
        ))
    }

    fn sample_negative(&self, user: UserId, rng: &mut Rng) -> ItemId {
        let liked = &self.liked[user.index()];
        loop {
            let j = self.universe[rng.random_range(0..self.universe.len())];
            if liked.binary_search(&j).is_err() {
                return j;
            }
        }
    }

    fn run(&mut self, table: &mut EmbeddingTable, epochs: usize, rng: &mut Rng, log: &mut TrainLog) -> Result<(), BackboneError> {
        let d = table.dim;
        let lr = self.cfg.learning_rate;
        let l2 = self.cfg.l2_weight;
        let mut user_grad = vec![0.0; table.users.len()];
        let mut item_grad = vec![0.0; table.items.len()];
        let mut touched_users = Vec::new();
        let mut touched_items = Vec::new();
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for epoch in 0..epochs {
            self.pairs.shuffle(rng);
            let mut loss_sum = 0.0;
            let mut count = 0usize;
            let triples = self.pairs.iter().flat_map(|&(u, i)| std::iter::repeat_n((u, i), self.cfg.negative_rate));
            let mut triples = triples.peekable();
            while triples.peek().is_some() {
                batch.clear();
                batch.extend(triples.by_ref().take(self.cfg.batch_size));
                for &(u, i) in &batch {
                    let j = self.sample_negative(u, rng);
                    let (ui, ii, ji) = (u.index() * d, i.index() * d, j.index() * d);
                    let eu = &table.users[ui..ui + d];
                    let ei = &table.items[ii..ii + d];
                    let ej = &table.items[ji..ji + d];
                    let x = dot(eu, ei) - dot(eu, ej);
                    loss_sum += neg_log_sigmoid(x);
                    count += 1;
                    // d(-ln σ(x))/dx = σ(x) - 1
                    let g = sigmoid(x) - 1.0;
                    for k in 0..d {
                        user_grad[ui + k] += g * (ei[k] - ej[k]);
                        item_grad[ii + k] += g * eu[k];
                        item_grad[ji + k] -= g * eu[k];
                    }
                    touched_users.push(u.index());
                    touched_items.push(i.index());
                    touched_items.push(j.index());
                }
                apply_sparse(&mut table.users, &mut user_grad, &mut touched_users, d, lr, l2);
                apply_sparse(&mut table.items, &mut item_grad, &mut touched_items, d, lr, l2);
            }
            let mean = loss_sum / count.max(1) as f64;
            if !mean.is_finite() || table.users.iter().chain(&table.items).any(|v| !v.is_finite()) {
                return Err(BackboneError::NonFiniteLoss {
                    epoch,
                    loss: mean,
                    learning_rate: lr,
                });
            }
            log::debug!("backbone epoch {epoch}: loss {mean:.6}");
            log.epoch_losses.push(mean);
        }
        Ok(())
    }
}

/// Applies accumulated gradients (plus L2 on the touched rows) and clears them.
fn apply_sparse(params: &mut [f64], grad: &mut [f64], touched: &mut Vec<usize>, d: usize, lr: f64, l2: f64) {
    touched.sort_unstable();
    touched.dedup();
    for &row in touched.iter() {
        for k in row * d..(row + 1) * d {
            params[k] -= lr * (grad[k] + l2 * params[k]);
            grad[k] = 0.0;
        }
    }
    touched.clear();
}

/// Trains a fresh table on `positives`, drawing negatives uniformly from
/// `universe` minus each user's positives. Only items in `universe` get
/// vectors.
pub fn train(
    positives: &[(UserId, ItemId)],
    num_users: usize,
    num_items: usize,
    universe: &[ItemId],
    cfg: &BackboneConfig,
    seed: u64,
) -> Result<(EmbeddingTable, TrainLog), BackboneError> {
    cfg.validate()?;
    let mut rng = rng_from(seed, &[stream::BACKBONE]);
    let mut table = EmbeddingTable::init(cfg.dimension, num_users, num_items, universe, &mut rng);
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((table, log));
    }
    let (mut trainer, skipped) = Trainer::new(&table, positives, universe, cfg)?;
    log.skipped_users = skipped;
    trainer.run(&mut table, cfg.epochs, &mut rng, &mut log)?;
    Ok((table, log))
}

/// Exact objective: mean over positive pairs and all valid negatives of
/// `-ln σ(s(u,i) - s(u,j))`. Quadratic in the data size; meant for checks.
pub fn ranking_objective(table: &EmbeddingTable, positives: &[(UserId, ItemId)], universe: &[ItemId]) -> Result<f64, BackboneError> {
    let pairs = positive_pairs(positives);
    let mut liked = vec![BTreeSet::new(); table.num_users()];
    for &(u, i) in &pairs {
        liked[u.index()].insert(i);
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for &(u, i) in &pairs {
        let si = table.score(u, i)?;
        for &j in universe {
            if !liked[u.index()].contains(&j) {
                total += neg_log_sigmoid(si - table.score(u, j)?);
                n += 1;
            }
        }
    }
    Ok(total / n.max(1) as f64)
}

/// Moves to the next stage: vectors for `new_items` are created according to
/// `cfg.new_item_init`, then the table is fine-tuned (or retrained) on
/// `positives`, which should hold every historical positive plus the
/// stage's clicks. `universe` lists the items available afterwards.
pub fn update_stage(
    table: &EmbeddingTable,
    new_items: &[ItemId],
    positives: &[(UserId, ItemId)],
    universe: &[ItemId],
    cfg: &BackboneConfig,
    seed: u64,
) -> Result<(EmbeddingTable, TrainLog), BackboneError> {
    cfg.validate()?;
    if cfg.retrain_from_scratch {
        return train(positives, table.num_users(), table.num_items(), universe, cfg, seed);
    }
    let mut rng = rng_from(seed, &[stream::BACKBONE, 1]);
    let mut next = table.clone();
    let existing = table.introduced_items();
    let mean: Vec<f64> = (0..table.dim)
        .map(|k| {
            existing.iter().map(|&i| table.items[i.index() * table.dim + k]).sum::<f64>() / existing.len().max(1) as f64
        })
        .collect();
    for &item in new_items {
        if next.has_item(item) {
            continue;
        }
        let v: Vec<f64> = (0..table.dim)
            .map(|k| {
                let noise = rng.random_range(-INIT_SCALE..=INIT_SCALE);
                match cfg.new_item_init {
                    NewItemInit::MeanPlusNoise => mean[k] + noise,
                    NewItemInit::Random => noise,
                }
            })
            .collect();
        next.set_item(item, &v);
    }
    let mut log = TrainLog::default();
    if cfg.finetune_epochs == 0 || positives.is_empty() {
        return Ok((next, log));
    }
    let (mut trainer, skipped) = Trainer::new(&next, positives, universe, cfg)?;
    log.skipped_users = skipped;
    trainer.run(&mut next, cfg.finetune_epochs, &mut rng, &mut log)?;
    Ok((next, log))
}
