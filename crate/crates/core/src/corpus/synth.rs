//! Synthetic interaction logs with controllable appetite for new items.
//!
//! Items are grouped into `train_cohorts + test_stages` cohorts. During the
//! training period, cohort `k` becomes available at the start of the k-th
//! training sub-window; test cohort `m` becomes available at test stage `m`.
//! Each user has a latent preference vector and a personal new-item affinity
//! drawn from a Beta distribution. In a test stage every interaction first
//! flips a coin with the user's affinity: heads targets the cohort entering
//! in that stage, tails targets the training cohorts. Within the chosen pool
//! the item is drawn from a softmax over latent utilities plus an additive
//! bonus that grows with the item's cohort index.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RawInteraction};
use crate::seeding::{rng_from, stream, Rng};

const WINDOW: i64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub users: usize,
    pub items_per_cohort: usize,
    pub train_cohorts: usize,
    pub test_stages: usize,
    pub latent_dim: usize,
    pub train_interactions_per_user: usize,
    pub stage_interactions_per_user: usize,
    /// Mean of the per-user new-item affinity distribution.
    pub new_item_affinity: f64,
    /// Beta concentration (a + b) of the affinity distribution.
    pub affinity_concentration: f64,
    /// Utility bonus of the newest training cohort over the oldest; cohorts
    /// in between are interpolated linearly.
    pub recency_bias: f64,
    /// Scale of the latent utilities fed to the softmax.
    pub preference_sharpness: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            users: 500,
            items_per_cohort: 200,
            train_cohorts: 5,
            test_stages: 5,
            latent_dim: 16,
            train_interactions_per_user: 30,
            stage_interactions_per_user: 6,
            new_item_affinity: 0.5,
            affinity_concentration: 6.0,
            recency_bias: 1.0,
            preference_sharpness: 3.0,
        }
    }
}

/// Generator output: the corpus plus the ground-truth cohort of each item,
/// indexed by the corpus' dense item id.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub cohort_of_item: Vec<u32>,
}

impl SynthSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.users == 0 {
            return Err(CorpusError::InvalidParameter("zero users requested".into()));
        }
        if self.items_per_cohort == 0 || self.train_cohorts == 0 {
            return Err(CorpusError::InvalidParameter("zero items requested".into()));
        }
        if !(0.0..=1.0).contains(&self.new_item_affinity) {
            return Err(CorpusError::InvalidParameter(format!(
                "new_item_affinity must lie in [0, 1], got {}",
                self.new_item_affinity
            )));
        }
        if self.affinity_concentration <= 0.0 || self.latent_dim == 0 {
            return Err(CorpusError::InvalidParameter(
                "affinity_concentration and latent_dim must be positive".into(),
            ));
        }
        let train_pool = self.items_per_cohort * self.train_cohorts;
        let total = self.train_interactions_per_user + self.stage_interactions_per_user * self.test_stages;
        if total > train_pool {
            return Err(CorpusError::InvalidParameter(format!(
                "{total} interactions per user exceed the {train_pool} training items"
            )));
        }
        Ok(())
    }

    pub fn num_cohorts(&self) -> usize {
        self.train_cohorts + self.test_stages
    }

    pub fn item_name(&self, index: usize) -> String {
        format!("i{index:05}")
    }
}

struct Latents {
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
}

fn gumbel(rng: &mut Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// Draws one not-yet-used item from `pool` by Gumbel-max over utilities.
fn draw(
    rng: &mut Rng,
    pool: impl Iterator<Item = usize>,
    user: &[f64],
    latents: &Latents,
    sharpness: f64,
    bonus: impl Fn(usize) -> f64,
    used: &[bool],
) -> Option<usize> {
    let scale = sharpness / (user.len() as f64).sqrt();
    let mut best: Option<(f64, usize)> = None;
    for item in pool {
        if used[item] {
            continue;
        }
        let dot: f64 = user.iter().zip(&latents.items[item]).map(|(a, b)| a * b).sum();
        let key = scale * dot + bonus(item) + gumbel(rng);
        if best.is_none_or(|(k, _)| key > k) {
            best = Some((key, item));
        }
    }
    best.map(|(_, i)| i)
}

/// Generates a deterministic synthetic log for `seed`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Synthetic, CorpusError> {
    spec.validate()?;
    let mut rng = rng_from(seed, &[stream::SYNTH]);
    let d = spec.latent_dim;
    let normal_vec = |rng: &mut Rng| -> Vec<f64> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    };
    let n_items = spec.items_per_cohort * spec.num_cohorts();
    let latents = Latents {
        items: (0..n_items).map(|_| normal_vec(&mut rng)).collect(),
        users: (0..spec.users).map(|_| normal_vec(&mut rng)).collect(),
    };
    let affinity = |rng: &mut Rng| -> f64 {
        let mean = spec.new_item_affinity;
        if mean <= 0.0 || mean >= 1.0 {
            return mean;
        }
        let c = spec.affinity_concentration;
        Beta::new(mean * c, (1.0 - mean) * c)
            .expect("valid beta parameters")
            .sample(rng)
    };
    let cohort_items = |c: usize| c * spec.items_per_cohort..(c + 1) * spec.items_per_cohort;
    let bonus = |item: usize| {
        let c = (item / spec.items_per_cohort).min(spec.train_cohorts - 1);
        spec.recency_bias * c as f64 / (spec.train_cohorts.max(2) - 1) as f64
    };
    let sharp = spec.preference_sharpness;

    let mut rows = Vec::new();
    for u in 0..spec.users {
        let mut urng = rng_from(seed, &[stream::SYNTH, u as u64]);
        let a_u = affinity(&mut urng);
        let mut used = vec![false; n_items];
        let user_vec = &latents.users[u];
        let emit = |rng: &mut Rng, item: usize, window: usize, rows: &mut Vec<RawInteraction>| {
            let ts = window as i64 * WINDOW + rng.random_range(0..WINDOW);
            rows.push(RawInteraction {
                user: format!("u{u:05}"),
                item: spec.item_name(item),
                timestamp: ts,
                label: true,
                release: None,
            });
        };

        // Training period: sub-window k sees train cohorts 0..=k.
        let per = spec.train_interactions_per_user;
        for k in 0..spec.train_cohorts {
            let count = per / spec.train_cohorts + usize::from(k < per % spec.train_cohorts);
            for _ in 0..count {
                let pool = 0..(k + 1) * spec.items_per_cohort;
                if let Some(item) = draw(&mut urng, pool, user_vec, &latents, sharp, bonus, &used) {
                    used[item] = true;
                    emit(&mut urng, item, k, &mut rows);
                }
            }
        }

        // Test stages.
        let train_pool = 0..spec.train_cohorts * spec.items_per_cohort;
        for m in 1..=spec.test_stages {
            for _ in 0..spec.stage_interactions_per_user {
                let mut item = None;
                if urng.random::<f64>() < a_u {
                    let pool = cohort_items(spec.train_cohorts + m - 1);
                    item = draw(&mut urng, pool, user_vec, &latents, sharp, |_| 0.0, &used);
                }
                if item.is_none() {
                    item = draw(&mut urng, train_pool.clone(), user_vec, &latents, sharp, bonus, &used);
                }
                if let Some(item) = item {
                    used[item] = true;
                    emit(&mut urng, item, spec.train_cohorts + m - 1, &mut rows);
                }
            }
        }
    }

    let (corpus, _) = Corpus::from_raw(rows);
    let cohort_of_item = corpus
        .items
        .names()
        .iter()
        .map(|name| {
            let idx: usize = name[1..].parse().expect("generated item name");
            (idx / spec.items_per_cohort) as u32
        })
        .collect();
    Ok(Synthetic {
        corpus,
        cohort_of_item,
    })
}
